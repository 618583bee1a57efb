use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SimexError};
use crate::loss::{delta_slice, LossKind};
use crate::models::AutoencoderModel;
use crate::rng::{fnv1a, RngStream};
use crate::tensor::Scalar;

/// Which baseline distance to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMethod {
    SampleMse,
    SampleIssim,
    Embeddings,
}

impl DistanceMethod {
    pub fn name(self) -> &'static str {
        match self {
            DistanceMethod::SampleMse => "sample-mse",
            DistanceMethod::SampleIssim => "sample-issim",
            DistanceMethod::Embeddings => "embeddings",
        }
    }
}

/// How two sets are reduced to one number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Mean of the per-pair distance over (sampled) cross pairs.
    #[default]
    PairMean,
    /// Distance between the two set means.
    Centroid,
}

fn default_pair_cap() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSampling {
    #[serde(default = "default_pair_cap")]
    pub max_pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for PairSampling {
    fn default() -> Self {
        PairSampling {
            max_pairs: default_pair_cap(),
            seed: 0,
            aggregation: Aggregation::PairMean,
        }
    }
}

fn content_key(rows: &[Vec<f64>]) -> u64 {
    let mut bytes = Vec::with_capacity(rows.len() * rows.first().map_or(0, Vec::len) * 8);
    for r in rows {
        for v in r {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fnv1a(&bytes)
}

/// Cross pairs `(i, j)` to average over: all of them when there are at
/// most `max_pairs`, otherwise a seeded sample with replacement.
fn pair_indices(na: usize, nb: usize, sampling: &PairSampling) -> Vec<(usize, usize)> {
    if na * nb <= sampling.max_pairs {
        return (0..na).flat_map(|i| (0..nb).map(move |j| (i, j))).collect();
    }
    let mut rng = RngStream::new(sampling.seed).fork("pairs");
    (0..sampling.max_pairs).map(|_| (rng.below(na), rng.below(nb))).collect()
}

fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    acc.iter().map(|v| v / rows.len() as f64).collect()
}

/// Aggregate a symmetric per-pair `metric` over two row sets. The sets are
/// put in a content-determined order first, so swapping the arguments
/// selects the same pairs.
fn set_distance(a: &[Vec<f64>], b: &[Vec<f64>], sampling: &PairSampling, metric: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    if sampling.aggregation == Aggregation::Centroid {
        return metric(&mean_row(a), &mean_row(b));
    }
    let (a, b) = if (content_key(a), a.len()) <= (content_key(b), b.len()) { (a, b) } else { (b, a) };
    let pairs = pair_indices(a.len(), b.len(), sampling);
    pairs.iter().map(|&(i, j)| metric(&a[i], &b[j])).sum::<f64>() / pairs.len() as f64
}

fn rows_of(d: &Dataset) -> Vec<Vec<f64>> {
    (0..d.len()).map(|i| d.sample(i).iter().map(|&v| v as f64).collect()).collect()
}

fn check_pair(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(SimexError::Empty("distance operand"));
    }
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(SimexError::shape(
            "distance operands",
            &[a.height(), a.width()],
            &[b.height(), b.width()],
        ));
    }
    Ok(())
}

/// Mean sample-space distance between two sets: per-pixel mean squared
/// difference, or iSSIM.
pub fn sample_distance(a: &Dataset, b: &Dataset, metric: &LossKind, sampling: &PairSampling) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if let LossKind::Issim(p) = metric {
        p.validate(h, w)?;
    }
    Ok(set_distance(&rows_of(a), &rows_of(b), sampling, |x, y| delta_slice(x, y, h, w, metric)))
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance between bottleneck embeddings of two sets.
pub fn embedding_distance<T: Scalar>(
    model: &AutoencoderModel<T>,
    a: &Dataset,
    b: &Dataset,
    sampling: &PairSampling,
) -> Result<f64> {
    check_pair(a, b)?;
    let embed = |d: &Dataset| -> Result<Vec<Vec<f64>>> {
        let e = model.embed(&d.to_tensor::<T>())?;
        Ok((0..e.batch()).map(|i| e.sample(i).iter().map(|v| v.as_f64()).collect()).collect())
    };
    Ok(set_distance(&embed(a)?, &embed(b)?, sampling, euclidean))
}

/// Baseline distances between every pair of (row, column) sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub method: DistanceMethod,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Fill a distance grid. `embedder` is required for the embeddings method.
pub fn distance_grid<T: Scalar>(
    method: DistanceMethod,
    rows: &[Dataset],
    columns: &[Dataset],
    sampling: &PairSampling,
    embedder: Option<&AutoencoderModel<T>>,
) -> Result<DistanceReport> {
    let mut values = Vec::with_capacity(rows.len());
    for r in rows {
        let mut row = Vec::with_capacity(columns.len());
        for c in columns {
            row.push(match method {
                DistanceMethod::SampleMse => sample_distance(r, c, &LossKind::Mse, sampling)?,
                DistanceMethod::SampleIssim => sample_distance(r, c, &LossKind::issim(), sampling)?,
                DistanceMethod::Embeddings => {
                    let model = embedder.ok_or_else(|| SimexError::invalid("embeddings distance needs an autoencoder"))?;
                    embedding_distance(model, r, c, sampling)?
                }
            });
        }
        values.push(row);
    }
    Ok(DistanceReport {
        method,
        rows: rows.iter().map(|d| d.id().to_string()).collect(),
        columns: columns.iter().map(|d| d.id().to_string()).collect(),
        values,
    })
}
