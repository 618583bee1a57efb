//! Procedural glyph datasets and seeded distortions of them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};
use crate::rng::RngStream;

use super::Dataset;

pub const GLYPH_CLASSES: usize = 10;
pub const GLYPH_NAMES: [&str; GLYPH_CLASSES] = [
    "vertical-bar",
    "horizontal-bar",
    "cross",
    "diagonal",
    "x",
    "ring",
    "arc",
    "square",
    "l-shape",
    "t-shape",
];

fn default_size() -> usize {
    28
}

fn default_jitter() -> f64 {
    1.0
}

fn default_strength() -> f64 {
    0.5
}

/// A synthetic dataset recipe. Distortions wrap a base recipe and are
/// generated from the same seed, so `noisy(base, 0)` equals `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SynthSpec {
    Glyphs {
        per_class: usize,
        /// Glyph indices to draw; all ten when absent.
        #[serde(default)]
        classes: Option<Vec<usize>>,
        #[serde(default = "default_size")]
        size: usize,
        /// Scales per-sample translation, rotation, scale and stroke
        /// variation; 0 draws every sample of a class identically.
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    Rotated {
        base: Box<SynthSpec>,
        min_degrees: f64,
        max_degrees: f64,
    },
    Noisy {
        base: Box<SynthSpec>,
        sigma: f64,
    },
    Textured {
        base: Box<SynthSpec>,
        texture_seed: u64,
        #[serde(default = "default_strength")]
        strength: f64,
    },
}

impl SynthSpec {
    pub fn glyphs(per_class: usize) -> Self {
        SynthSpec::Glyphs {
            per_class,
            classes: None,
            size: default_size(),
            jitter: default_jitter(),
        }
    }

    pub fn glyph_classes(per_class: usize, classes: Vec<usize>) -> Self {
        SynthSpec::Glyphs {
            per_class,
            classes: Some(classes),
            size: default_size(),
            jitter: default_jitter(),
        }
    }

    pub fn rotated(self, min_degrees: f64, max_degrees: f64) -> Self {
        SynthSpec::Rotated {
            base: Box::new(self),
            min_degrees,
            max_degrees,
        }
    }

    pub fn noisy(self, sigma: f64) -> Self {
        SynthSpec::Noisy {
            base: Box::new(self),
            sigma,
        }
    }

    pub fn textured(self, texture_seed: u64, strength: f64) -> Self {
        SynthSpec::Textured {
            base: Box::new(self),
            texture_seed,
            strength,
        }
    }

    /// Short human-readable id such as `glyphs/rot(0..90)/noise(0.1)`.
    pub fn describe(&self) -> String {
        match self {
            SynthSpec::Glyphs { .. } => "glyphs".into(),
            SynthSpec::Rotated {
                base,
                min_degrees,
                max_degrees,
            } => format!("{}/rot({min_degrees}..{max_degrees})", base.describe()),
            SynthSpec::Noisy { base, sigma } => format!("{}/noise({sigma})", base.describe()),
            SynthSpec::Textured { base, texture_seed, .. } => format!("{}/texture({texture_seed})", base.describe()),
        }
    }
}

type Segment = ((f64, f64), (f64, f64));

fn polyline_arc(r: f64, from: f64, to: f64, pieces: usize) -> Vec<Segment> {
    let pt = |t: f64| (r * t.cos(), r * t.sin());
    (0..pieces)
        .map(|i| {
            let a = from + (to - from) * i as f64 / pieces as f64;
            let b = from + (to - from) * (i + 1) as f64 / pieces as f64;
            (pt(a), pt(b))
        })
        .collect()
}

/// Strokes in a unit box `[-1, 1]^2`, y pointing down.
pub fn glyph_strokes(class: usize) -> Vec<Segment> {
    let v = ((0.0, -0.7), (0.0, 0.7));
    let h = ((-0.7, 0.0), (0.7, 0.0));
    let d1 = ((-0.6, -0.6), (0.6, 0.6));
    let d2 = ((-0.6, 0.6), (0.6, -0.6));
    let s = 0.6;
    match class {
        0 => vec![v],
        1 => vec![h],
        2 => vec![v, h],
        3 => vec![d1],
        4 => vec![d1, d2],
        5 => polyline_arc(0.6, 0.0, 2.0 * PI, 24),
        6 => polyline_arc(0.6, PI, 2.0 * PI, 12),
        7 => vec![
            ((-s, -s), (s, -s)),
            ((s, -s), (s, s)),
            ((s, s), (-s, s)),
            ((-s, s), (-s, -s)),
        ],
        8 => vec![((-0.5, -0.7), (-0.5, 0.7)), ((-0.5, 0.7), (0.6, 0.7))],
        9 => vec![((-0.7, -0.7), (0.7, -0.7)), ((0.0, -0.7), (0.0, 0.7))],
        _ => Vec::new(),
    }
}

fn segment_distance(p: (f64, f64), seg: &Segment) -> f64 {
    let ((ax, ay), (bx, by)) = *seg;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Pose of one rendered glyph, in pixels and radians.
#[derive(Debug, Clone, Copy)]
struct Pose {
    dx: f64,
    dy: f64,
    angle: f64,
    scale: f64,
    thickness: f64,
}

fn render(class: usize, size: usize, pose: Pose, out: &mut [f32]) {
    let half = size as f64 / 2.0;
    let radius = half * 0.8 * pose.scale;
    let (sin, cos) = pose.angle.sin_cos();
    let segments: Vec<Segment> = glyph_strokes(class)
        .into_iter()
        .map(|(a, b)| {
            let tf = |(x, y): (f64, f64)| {
                let (rx, ry) = (x * cos - y * sin, x * sin + y * cos);
                (half + pose.dx + rx * radius, half + pose.dy + ry * radius)
            };
            (tf(a), tf(b))
        })
        .collect();
    for py in 0..size {
        for px in 0..size {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let d = segments.iter().map(|s| segment_distance(p, s)).fold(f64::INFINITY, f64::min);
            out[py * size + px] = (pose.thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0) as f32;
        }
    }
}

fn generate_glyphs(per_class: usize, classes: &[usize], size: usize, jitter: f64, seed: u64) -> Result<Dataset> {
    if per_class == 0 || classes.is_empty() {
        return Err(SimexError::invalid("glyph recipe draws no samples"));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= GLYPH_CLASSES) {
        return Err(SimexError::invalid(format!("glyph class {bad} outside 0..{GLYPH_CLASSES}")));
    }
    if size < 8 {
        return Err(SimexError::invalid(format!("glyph size {size} below 8")));
    }
    if !(0.0..=2.0).contains(&jitter) {
        return Err(SimexError::invalid(format!("glyph jitter {jitter} outside [0, 2]")));
    }
    let mut rng = RngStream::new(seed).fork("glyphs");
    let area = size * size;
    let n = per_class * classes.len();
    let mut pixels = vec![0f32; n * area];
    let mut labels = Vec::with_capacity(n);
    let unit = size as f64 / 28.0;
    for i in 0..per_class {
        for (ci, &class) in classes.iter().enumerate() {
            let mut sym = || jitter * (2.0 * rng.uniform() - 1.0);
            let pose = Pose {
                dx: 2.5 * unit * sym(),
                dy: 2.5 * unit * sym(),
                angle: (12.0 * sym()).to_radians(),
                scale: 1.0 + 0.12 * sym(),
                thickness: unit * (2.2 + 0.6 * sym()),
            };
            let k = i * classes.len() + ci;
            render(class, size, pose, &mut pixels[k * area..(k + 1) * area]);
            labels.push(class);
        }
    }
    Dataset::new("glyphs", size, size, pixels, Some(labels), Some(GLYPH_CLASSES), "synthetic")
}

/// Rotate a square image about its centre. Multiples of 90 degrees are exact
/// index permutations; other angles sample bilinearly with zero fill.
pub fn rotate_image(src: &[f32], size: usize, degrees: f64) -> Vec<f32> {
    let quarter = degrees / 90.0;
    if quarter == quarter.round() {
        let turns = (quarter.round() as i64).rem_euclid(4);
        let n = size - 1;
        let mut out = vec![0f32; src.len()];
        for y in 0..size {
            for x in 0..size {
                // Counter-clockwise on screen with y pointing down.
                let (sx, sy) = match turns {
                    0 => (x, y),
                    1 => (n - y, x),
                    2 => (n - x, n - y),
                    _ => (y, n - x),
                };
                out[y * size + x] = src[sy * size + sx];
            }
        }
        return out;
    }
    let c = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= size as i64 || y >= size as i64 {
            0.0
        } else {
            src[y as usize * size + x as usize] as f64
        }
    };
    let mut out = vec![0f32; src.len()];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 - c, y as f64 - c);
            let sx = cos * u - sin * v + c;
            let sy = sin * u + cos * v + c;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let val = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + at(x0 + 1, y0) * fx * (1.0 - fy)
                + at(x0, y0 + 1) * (1.0 - fx) * fy
                + at(x0 + 1, y0 + 1) * fx * fy;
            out[y * size + x] = val.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

fn map_samples(base: &Dataset, id: String, mut f: impl FnMut(usize, &[f32]) -> Vec<f32>) -> Result<Dataset> {
    let mut pixels = Vec::with_capacity(base.pixels().len());
    for i in 0..base.len() {
        pixels.extend(f(i, base.sample(i)));
    }
    Dataset::new(
        id,
        base.height(),
        base.width(),
        pixels,
        base.labels().map(|l| l.to_vec()),
        Some(base.num_classes()),
        "synthetic",
    )
}

/// Generate the dataset described by `spec`. Equal `(spec, seed)` always give
/// identical pixels.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let id = spec.describe();
    match spec {
        SynthSpec::Glyphs {
            per_class,
            classes,
            size,
            jitter,
        } => {
            let all: Vec<usize> = (0..GLYPH_CLASSES).collect();
            let d = generate_glyphs(*per_class, classes.as_deref().unwrap_or(&all), *size, *jitter, seed)?;
            Ok(d.with_id(id))
        }
        SynthSpec::Rotated {
            base,
            min_degrees,
            max_degrees,
        } => {
            if !(min_degrees.is_finite() && max_degrees.is_finite() && min_degrees <= max_degrees) {
                return Err(SimexError::invalid(format!(
                    "rotation range [{min_degrees}, {max_degrees}] is invalid"
                )));
            }
            let base = synth_generate(base, seed)?;
            if base.height() != base.width() {
                return Err(SimexError::UnsupportedShape(vec![base.height(), base.width()]));
            }
            let mut rng = RngStream::new(seed).fork(&format!("rotate:{id}"));
            map_samples(&base, id, |_, s| {
                let deg = if min_degrees == max_degrees {
                    *min_degrees
                } else {
                    rng.uniform_range(*min_degrees, *max_degrees)
                };
                rotate_image(s, base.width(), deg)
            })
        }
        SynthSpec::Noisy { base, sigma } => {
            if !(sigma.is_finite() && *sigma >= 0.0) {
                return Err(SimexError::invalid(format!("noise sigma must be non-negative, got {sigma}")));
            }
            let base = synth_generate(base, seed)?;
            let mut rng = RngStream::new(seed).fork("noise");
            map_samples(&base, id, |_, s| {
                s.iter()
                    .map(|&v| {
                        let z = rng.normal();
                        if *sigma == 0.0 {
                            v
                        } else {
                            (v as f64 + sigma * z).clamp(0.0, 1.0) as f32
                        }
                    })
                    .collect()
            })
        }
        SynthSpec::Textured {
            base,
            texture_seed,
            strength,
        } => {
            if !(0.0..=1.0).contains(strength) {
                return Err(SimexError::invalid(format!("texture strength {strength} outside [0, 1]")));
            }
            let base = synth_generate(base, seed)?;
            let mut rng = RngStream::new(*texture_seed).fork("texture");
            let (h, w) = (base.height(), base.width());
            map_samples(&base, id, |_, s| {
                let waves: Vec<(f64, f64, f64)> = (0..3)
                    .map(|_| {
                        let theta = rng.uniform() * PI;
                        let freq = rng.uniform_range(0.3, 1.2);
                        (theta, freq, rng.uniform() * 2.0 * PI)
                    })
                    .collect();
                let mut out = Vec::with_capacity(s.len());
                for y in 0..h {
                    for x in 0..w {
                        let t: f64 = waves
                            .iter()
                            .map(|&(th, f, ph)| ((x as f64 * th.cos() + y as f64 * th.sin()) * f + ph).sin())
                            .sum::<f64>()
                            / 3.0;
                        let bg = strength * 0.5 * (t + 1.0);
                        out.push((s[y * w + x] as f64).max(bg) as f32);
                    }
                }
                out
            })
        }
    }
}
