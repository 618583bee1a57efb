//! The six commands. Each writes its reports under the output directory,
//! plus `manifest.json`, `summary.txt`, and `timings.json` when anything
//! was timed. Everything except `timings.json` and `bench.json` is
//! byte-identical across reruns of the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use simex_core::analytics::{greedy_pairing, PairingResult};
use simex_core::baselines::{confusion_grid, pretrain_classifier, ConfusionReport};
use simex_core::data::{write_idx, Dataset, SplitSpec};
use simex_core::engine::{delta_matrix, member_seed, normalize_deltas, pretrain_fleet, pretrain_member, DeltaMatrix, Fleet, SimilarityOrdering};
use simex_core::models::{load_checkpoint, save_checkpoint, ClassifierModel, TrainReport};
use simex_core::rng::derive_seed;
use simex_core::tensor::{Precision, Scalar};

use crate::bench::{bench_pairwise, BenchSettings, PretrainCost};
use crate::config::{holdout_part, Command, DatasetDescriptor, DatasetSource, RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, Context};
use crate::gallery::emit_reconstruction_gallery;
use crate::manifest::Manifest;

/// Files written and the human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    seeds: BTreeMap<String, u64>,
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).context(|| format!("creating {}", dir.display()))?;
        Ok(Output {
            dir,
            files: Vec::new(),
            timings: BTreeMap::new(),
            seeds: BTreeMap::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, text).context(|| format!("writing {}", p.display()))?;
        self.files.push(p);
        Ok(())
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.text(name, &text)
    }
}

/// Ids may contain `/`; file names may not.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

struct Ctx<'a> {
    config: &'a RunConfig,
    base: &'a Path,
}

impl Ctx<'_> {
    fn load(&self, list: &[DatasetDescriptor], out: &mut Output, train_part: bool) -> Result<Vec<Dataset>, CliError> {
        list.iter()
            .map(|d| {
                if let DatasetSource::Synth { seed, .. } = d.source {
                    out.seeds.insert(format!("dataset/{}", d.id), seed);
                }
                holdout_part(d.load(self.base, self.config.seed)?, self.config.holdout, train_part)
            })
            .collect()
    }

    fn references(&self, out: &mut Output) -> Result<Vec<Dataset>, CliError> {
        self.load(&self.config.references, out, true)
    }

    fn unknowns(&self, out: &mut Output) -> Result<Vec<Dataset>, CliError> {
        self.load(&self.config.unknowns, out, false)
    }

    fn train_fleet<T: Scalar>(&self, refs: &[Dataset], out: &mut Output) -> Result<Fleet<T>, CliError> {
        let train = self.config.fleet_train();
        out.seeds.insert("fleet".into(), train.seed);
        for r in refs {
            out.seeds.insert(format!("member/{}", r.id()), member_seed(train.seed, r.id()));
        }
        let fleet = pretrain_fleet::<T>(refs, &train, self.config.parallel).context(|| "pretraining the fleet".into())?;
        for (id, r) in fleet.reports() {
            out.timings.insert(format!("pretrain/{id}"), r.wall_seconds);
        }
        Ok(fleet)
    }

    fn fleet<T: Scalar>(&self, out: &mut Output) -> Result<Fleet<T>, CliError> {
        match &self.config.fleet_dir {
            Some(dir) => {
                let dir = self.base.join(dir);
                Fleet::load_dir(&dir).context(|| format!("loading fleet from {}", dir.display()))
            }
            None => {
                let refs = self.references(out)?;
                self.train_fleet(&refs, out)
            }
        }
    }
}

#[derive(Serialize)]
struct MemberSummary<'a> {
    reference_id: &'a str,
    epochs: usize,
    final_loss: Option<f64>,
    history: &'a [f64],
}

#[derive(Serialize)]
struct PretrainReport<'a> {
    schema_version: u32,
    loss: String,
    members: Vec<MemberSummary<'a>>,
}

fn pretrain_report(fleet: &Fleet<impl Scalar>) -> PretrainReport<'_> {
    let reports: &BTreeMap<String, TrainReport> = fleet.reports();
    PretrainReport {
        schema_version: SCHEMA_VERSION,
        loss: fleet.loss().to_string(),
        members: reports
            .iter()
            .map(|(id, r)| MemberSummary {
                reference_id: id,
                epochs: r.history.len(),
                final_loss: r.history.last().copied(),
                history: &r.history,
            })
            .collect(),
    }
}

fn pretrain<T: Scalar>(ctx: &Ctx, out: &mut Output) -> Result<String, CliError> {
    let refs = ctx.references(out)?;
    let fleet: Fleet<T> = ctx.train_fleet(&refs, out)?;
    let dir = out.path("fleet");
    fleet.save_dir(&dir).context(|| format!("saving fleet to {}", dir.display()))?;
    out.files.push(dir);
    out.json("pretrain.json", &pretrain_report(&fleet))?;
    let mut s = format!("pretrained {} member(s) with {} loss\n", fleet.len(), fleet.loss());
    for (id, r) in fleet.reports() {
        writeln!(s, "  {id}: {} epochs, final loss {:.6}", r.history.len(), r.history.last().unwrap_or(&f64::NAN)).unwrap();
    }
    Ok(s)
}

fn ordering_lines(orderings: &[(String, SimilarityOrdering)]) -> String {
    let mut s = String::new();
    for (id, o) in orderings {
        let chain: Vec<String> = o.order.iter().zip(&o.deltas).map(|(r, d)| format!("{r} ({d:.6})")).collect();
        writeln!(s, "  {id}: {}", chain.join(" < ")).unwrap();
    }
    s
}

fn write_matrix(out: &mut Output, m: &DeltaMatrix) -> Result<Vec<(String, SimilarityOrdering)>, CliError> {
    out.text("delta.csv", &m.to_csv())?;
    out.json("delta.json", m)?;
    let orderings: Vec<(String, SimilarityOrdering)> = (0..m.rows.len())
        .map(|i| m.row_ordering(i).map(|o| (m.rows[i].clone(), o)))
        .collect::<Result<_, _>>()
        .context(|| "ordering references".into())?;
    out.json("ordering.json", &orderings.iter().cloned().collect::<BTreeMap<_, _>>())?;
    Ok(orderings)
}

fn compare<T: Scalar>(ctx: &Ctx, out: &mut Output) -> Result<String, CliError> {
    let fleet: Fleet<T> = ctx.fleet(out)?;
    let unknowns = ctx.unknowns(out)?;
    let mut m = delta_matrix(&fleet, &unknowns, ctx.config.parallel).context(|| "evaluating Δ".into())?;
    if ctx.config.normalize {
        let refs = ctx.references(out)?;
        m = normalize_deltas(&m, &refs).context(|| "normalizing Δ".into())?;
    }
    let orderings = write_matrix(out, &m)?;
    if let Some(g) = &ctx.config.gallery {
        let id = g.member.clone().unwrap_or_else(|| fleet.reference_ids()[0].to_string());
        let member = fleet
            .member(&id)
            .ok_or_else(|| CliError::config("gallery", "gallery.member", format!("no fleet member `{id}`")))?;
        for u in &unknowns {
            let n = g.count.min(u.len());
            let idx: Vec<usize> = (0..n).collect();
            let dir = out.path(&format!("gallery/{}", file_stem(u.id())));
            out.files.extend(emit_reconstruction_gallery(member, &u.subset(&idx, u.id()), &dir)?);
        }
    }
    let norm = if m.normalized { ", normalized" } else { "" };
    Ok(format!(
        "Δ ({}{norm}) for {} unknown(s) against {} reference(s); most similar first:\n{}",
        m.loss,
        m.rows.len(),
        m.columns.len(),
        ordering_lines(&orderings)
    ))
}

#[derive(Serialize)]
struct PairReport<'a> {
    schema_version: u32,
    rows: &'a [String],
    columns: &'a [String],
    pairs: Vec<NamedPair<'a>>,
    unpaired_rows: Vec<&'a str>,
    unpaired_columns: Vec<&'a str>,
}

#[derive(Serialize)]
struct NamedPair<'a> {
    unknown: &'a str,
    reference: &'a str,
    delta: f64,
}

fn pair<T: Scalar>(ctx: &Ctx, out: &mut Output) -> Result<String, CliError> {
    let reference = ctx.references(out)?.remove(0);
    let unknown = ctx.unknowns(out)?.remove(0);
    let classes = |d: &Dataset| -> Result<Vec<Dataset>, CliError> {
        if !d.is_labeled() {
            return Err(CliError::config("pair", "references", format!("`{}` is unlabeled", d.id())));
        }
        Ok(d.class_subsets())
    };
    let fleet: Fleet<T> = ctx.train_fleet(&classes(&reference)?, out)?;
    let m = delta_matrix(&fleet, &classes(&unknown)?, ctx.config.parallel).context(|| "evaluating Δ".into())?;
    write_matrix(out, &m)?;
    let p: PairingResult = greedy_pairing(&m.values).context(|| "pairing classes".into())?;
    let report = PairReport {
        schema_version: SCHEMA_VERSION,
        rows: &m.rows,
        columns: &m.columns,
        pairs: p
            .pairs
            .iter()
            .map(|q| NamedPair {
                unknown: &m.rows[q.row],
                reference: &m.columns[q.column],
                delta: q.cost,
            })
            .collect(),
        unpaired_rows: p.unpaired_rows.iter().map(|&i| m.rows[i].as_str()).collect(),
        unpaired_columns: p.unpaired_columns.iter().map(|&k| m.columns[k].as_str()).collect(),
    };
    out.json("pairing.json", &report)?;
    let mut s = format!("greedy class pairing by {} Δ:\n", m.loss);
    for q in &report.pairs {
        writeln!(s, "  {} -> {} ({:.6})", q.unknown, q.reference, q.delta).unwrap();
    }
    Ok(s)
}

fn confusion(ctx: &Ctx, out: &mut Output) -> Result<String, CliError> {
    let d = ctx.references(out)?.remove(0);
    if !d.is_labeled() {
        return Err(CliError::config("confusion", "references", format!("`{}` is unlabeled", d.id())));
    }
    // Probes need contiguous labels; reports use the original ones.
    let labels = d.classes();
    let dense = d
        .remap_labels(|c| labels.iter().position(|&l| l == c), d.id())
        .context(|| format!("relabeling `{}`", d.id()))?;
    let train = ctx.config.classifier_train();
    for k in 0..labels.len() {
        out.seeds.insert(format!("confusion/{}", labels[k]), derive_seed(train.seed, &format!("confusion-{k}")));
    }
    let mut grid: Vec<ConfusionReport> =
        confusion_grid(&dense, &train, ctx.config.parallel).context(|| format!("confusion probes on `{}`", d.id()))?;
    for r in &mut grid {
        r.held_out = labels[r.held_out];
        for c in &mut r.classes {
            *c = labels[*c];
        }
    }
    out.json("confusion.json", &grid)?;
    let mut csv = String::from("held_out");
    for k in &labels {
        write!(csv, ",{k}").unwrap();
    }
    csv.push('\n');
    let mut s = String::from("mass of each held-out class on the remaining classes:\n");
    for r in &grid {
        write!(csv, "{}", r.held_out).unwrap();
        for &k in &labels {
            if k == r.held_out {
                csv.push(',');
            } else {
                write!(csv, ",{}", r.mass_on(k)).unwrap();
            }
        }
        csv.push('\n');
        let best = r.classes.iter().zip(&r.mass).max_by(|a, b| a.1.total_cmp(b.1)).expect("at least one class");
        writeln!(s, "  class {}: most confused with {} ({:.3})", r.held_out, best.0, best.1).unwrap();
    }
    out.text("confusion.csv", &csv)?;
    Ok(s)
}

fn bench<T: Scalar>(ctx: &Ctx, out: &mut Output) -> Result<String, CliError> {
    let c = ctx.config;
    // The retrain splits each dataset itself, so the holdout is not applied.
    let base = c.references[0].load(ctx.base, c.seed)?;
    let target = c.unknowns[0].load(ctx.base, c.seed)?;
    let mut cost = PretrainCost::default();

    let classifier: ClassifierModel<T> = match &c.classifier_checkpoint {
        Some(p) => {
            let p = ctx.base.join(p);
            load_checkpoint(&p).context(|| format!("loading classifier {}", p.display()))?
        }
        None => {
            let train = c.classifier_train();
            out.seeds.insert("classifier".into(), derive_seed(train.seed, base.id()));
            let t = Instant::now();
            let m = pretrain_classifier(&base, &train, SplitSpec::new(0.8, c.seed))
                .context(|| format!("pretraining the classifier on `{}`", base.id()))?;
            cost.classifier_seconds = Some(t.elapsed().as_secs_f64());
            let p = out.path("classifier.ckpt");
            save_checkpoint(&m, &p).context(|| format!("saving {}", p.display()))?;
            out.files.push(p);
            m
        }
    };
    let member = match &c.fleet_dir {
        Some(_) => {
            let fleet: Fleet<T> = ctx.fleet(out)?;
            fleet
                .member(base.id())
                .cloned()
                .ok_or_else(|| CliError::config("bench", "fleet_dir", format!("fleet has no member `{}`", base.id())))?
        }
        None => {
            let train = c.fleet_train();
            out.seeds.insert(format!("member/{}", base.id()), member_seed(train.seed, base.id()));
            let (m, report) = pretrain_member::<T>(&base, &train).context(|| "pretraining the autoencoder".into())?;
            cost.autoencoder_seconds = Some(report.wall_seconds);
            let fleet = Fleet::from_members(vec![m.clone()]).context(|| "assembling the fleet".into())?;
            let dir = out.path("fleet");
            fleet.save_dir(&dir).context(|| format!("saving fleet to {}", dir.display()))?;
            out.files.push(dir);
            m
        }
    };
    let seed = c.classifier_train().seed;
    out.seeds.insert("transfer".into(), seed);
    let settings = BenchSettings::standard(c.repeats, c.transfer_epochs, c.patience, seed);
    let report = bench_pairwise(&member, &classifier, &target, &settings, cost).context(|| "benchmarking".into())?;
    out.json("bench.json", &report)?;
    let mut s = format!(
        "SimEx on `{}` ({} samples): {:.4} s mean over {} runs\n",
        report.target_id, report.target_samples, report.simex.mean, report.repeats
    );
    for t in &report.transfer {
        writeln!(
            s,
            "  {}: {:.4} s mean (±{:.1}%), best epoch {:?}, speedup {:.1}x",
            t.name,
            t.latency.mean,
            100.0 * t.latency.relative_std,
            t.epochs_to_best[0],
            t.speedup
        )
        .unwrap();
    }
    writeln!(s, "fastest retrain {}: SimEx is {:.1}x faster", report.fastest_transfer, report.speedup_vs_fastest).unwrap();
    Ok(s)
}

#[derive(Serialize)]
struct SynthEntry {
    id: String,
    samples: usize,
    height: usize,
    width: usize,
    classes: Vec<usize>,
    images: String,
    labels: Option<String>,
}

fn synth(ctx: &Ctx, out: &mut Output) -> Result<String, CliError> {
    let mut all = ctx.load(&ctx.config.references, out, true)?;
    all.extend(ctx.load(&ctx.config.unknowns, out, true)?);
    let mut entries = Vec::with_capacity(all.len());
    for d in &all {
        let stem = file_stem(d.id());
        let images = format!("{stem}-images.idx");
        let labels = d.is_labeled().then(|| format!("{stem}-labels.idx"));
        let label_path = labels.as_ref().map(|l| out.path(l));
        write_idx(d, &out.path(&images), label_path.as_deref()).context(|| format!("writing `{}`", d.id()))?;
        out.files.push(out.path(&images));
        out.files.extend(label_path);
        entries.push(SynthEntry {
            id: d.id().to_string(),
            samples: d.len(),
            height: d.height(),
            width: d.width(),
            classes: d.classes(),
            images,
            labels,
        });
    }
    out.json("datasets.json", &entries)?;
    let mut s = String::from("wrote datasets:\n");
    for e in &entries {
        writeln!(s, "  {}: {} samples, {}x{}", e.id, e.samples, e.height, e.width).unwrap();
    }
    Ok(s)
}

fn dispatch<T: Scalar>(command: Command, ctx: &Ctx, out: &mut Output) -> Result<String, CliError> {
    match command {
        Command::Pretrain => pretrain::<T>(ctx, out),
        Command::Compare => compare::<T>(ctx, out),
        Command::Pair => pair::<T>(ctx, out),
        Command::Confusion => confusion(ctx, out),
        Command::Bench => bench::<T>(ctx, out),
        Command::Synth => synth(ctx, out),
    }
}

/// Run a validated config. Relative paths, including the output
/// directory, resolve against `base`.
pub fn execute(config: &RunConfig, command: Command, base: &Path) -> Result<Outcome, CliError> {
    if config.classifier.precision != config.train.precision {
        return Err(CliError::config(
            "run",
            "classifier.precision",
            "must match train.precision",
        ));
    }
    let mut out = Output::new(base.join(&config.output_dir))?;
    out.seeds.insert("root".into(), config.seed);
    if let Some(h) = config.holdout {
        out.seeds.insert("holdout".into(), h.seed);
    }
    let ctx = Ctx { config, base };
    let summary = match config.train.precision {
        Precision::F32 => dispatch::<f32>(command, &ctx, &mut out)?,
        Precision::F64 => dispatch::<f64>(command, &ctx, &mut out)?,
    };
    out.text("summary.txt", &summary)?;
    if !out.timings.is_empty() {
        let timings = std::mem::take(&mut out.timings);
        out.json("timings.json", &timings)?;
    }
    let manifest = Manifest::new(config, std::mem::take(&mut out.seeds));
    out.json("manifest.json", &manifest)?;
    Ok(Outcome {
        summary,
        files: out.files,
    })
}
