//! End-to-end acceptance suite. Runs every criterion serially (timing
//! criteria must not share the CPU) and prints one PASS/FAIL line each.
//! Pass criterion numbers as arguments to run a subset.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use simex_cli::{execute, BenchSettings, Command, DatasetDescriptor, PretrainCost, RunConfig};
use simex_core::analytics::{greedy_pairing, rank_of, spearman_rho, RankList};
use simex_core::baselines::{
    confusion_grid, pretrain_classifier, sample_distance, transfer_retrain, PairSampling, TransferConfig,
};
use simex_core::data::idx::{encode_images, encode_labels};
use simex_core::data::{load_idx, split, synth_generate, write_idx, Dataset, SplitSpec, SynthSpec};
use simex_core::engine::{
    delta_matrix, pretrain_fleet, train_with_ordering_convergence, ConvergenceConfig, DeltaMatrix, Fleet,
};
use simex_core::loss::LossKind;
use simex_core::models::checkpoint::{decode_checkpoint, encode_checkpoint};
use simex_core::models::{AutoencoderModel, ClassifierModel, TrainConfig};
use simex_core::rng::RngStream;
use simex_core::tensor::{layer_suite, LayerKind, OptimizerConfig, OptimizerKind};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rmsprop(lr: f64, loss: LossKind, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig::new(OptimizerConfig::new(OptimizerKind::Rmsprop, lr), loss, epochs).with_seed(seed)
}

fn glyph_data(spec: SynthSpec, seed: u64, id: &str) -> Dataset {
    synth_generate(&spec, seed).expect("valid synth spec").with_id(id)
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn mnist() -> Dataset {
    let dir = data_dir();
    load_idx(
        &dir.join("mnist-10k-images-idx3-ubyte"),
        Some(&dir.join("mnist-10k-labels-idx1-ubyte")),
    )
    .expect("MNIST IDX files under data/mnist")
}

/// Spearman ρ between an ascending-Δ ranking and another scored ranking.
fn rho(a: &[(String, f64)], a_ascending: bool, b: &[(String, f64)], b_ascending: bool) -> f64 {
    spearman_rho(&rank_of(a, a_ascending).unwrap(), &rank_of(b, b_ascending).unwrap()).unwrap()
}

// ---------------------------------------------------------------- 1

fn digit_four_ordering() -> Verdict {
    let all = mnist();
    let fours = all.class_subset(4).unwrap();
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let (train, held_out) = split(&fours, SplitSpec::new(0.8, seed)).unwrap();
        let fleet: Fleet = pretrain_fleet(&[train.with_id("4")], &rmsprop(2e-4, LossKind::Mse, 50, seed), false).unwrap();
        let unknowns: Vec<Dataset> = (0..10)
            .map(|d| {
                if d == 4 {
                    held_out.clone().with_id("4")
                } else {
                    all.class_subset(d).unwrap().with_id(d.to_string())
                }
            })
            .collect();
        let m = delta_matrix(&fleet, &unknowns, false).unwrap();
        let delta = |d: usize| m.values[d][0];
        let self_min = (0..10).filter(|&d| d != 4).all(|d| delta(4) < delta(d));
        let group = delta(7).max(delta(9)) < delta(3).min(delta(5));
        let ok = self_min && group;
        passes += ok as usize;
        let order = m.column_ordering(0).unwrap().order.join("<");
        lines.push(format!(
            "seed {seed}: {} [{order}] self-min {self_min} group {group} (Δ4 {:.5} Δ9 {:.5} Δ7 {:.5} Δ5 {:.5} Δ3 {:.5})",
            if ok { "ok" } else { "miss" },
            delta(4),
            delta(9),
            delta(7),
            delta(5),
            delta(3)
        ));
    }
    verdict(passes >= 2, format!("{passes}/3 seeds hold; {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 2 and 5

const SIGMAS: [f64; 4] = [0.0, 0.1, 0.2, 0.4];

fn noise_setup() -> (Dataset, Vec<Dataset>) {
    let clean = glyph_data(SynthSpec::glyphs(100), 0, "clean");
    let probes = SIGMAS
        .iter()
        .map(|&s| glyph_data(SynthSpec::glyphs(20).noisy(s), 1, &format!("noise-{s:.1}")))
        .collect();
    (clean, probes)
}

/// The epoch count applies to criterion 2; the convergence run sets its
/// own budget from the checkpoints.
fn noise_train(loss: LossKind) -> TrainConfig {
    rmsprop(1e-3, loss, 50, 0)
}

fn ground_truth_ordering() -> Verdict {
    let (clean, probes) = noise_setup();
    let truth: Vec<(String, f64)> = probes.iter().zip(SIGMAS).map(|(p, s)| (p.id().to_string(), s)).collect();
    let mut ok = true;
    let mut lines = Vec::new();
    for loss in [LossKind::Mse, LossKind::issim()] {
        let fleet: Fleet = pretrain_fleet(&[clean.clone()], &noise_train(loss), false).unwrap();
        let m = delta_matrix(&fleet, &probes, false).unwrap();
        let predicted: Vec<(String, f64)> = m.rows.iter().cloned().zip(m.values.iter().map(|r| r[0])).collect();
        let r = rho(&predicted, true, &truth, true);
        ok &= r == 1.0;
        let deltas: Vec<String> = predicted.iter().map(|(_, d)| format!("{d:.5}")).collect();
        lines.push(format!("{loss} ρ={r} Δ=[{}]", deltas.join(", ")));
    }
    verdict(ok, lines.join("; "))
}

fn ordering_convergence() -> Verdict {
    let (clean, probes) = noise_setup();
    let mut ok = true;
    let mut lines = Vec::new();
    for loss in [LossKind::Mse, LossKind::issim()] {
        let full = ConvergenceConfig {
            stop_on_convergence: false,
            ..ConvergenceConfig::default()
        };
        let trace = train_with_ordering_convergence::<f32>(&clean, &probes, &noise_train(loss), &full, None)
            .unwrap()
            .trace;
        let last = trace.last().expect("non-empty trace");
        assert_eq!(last.epoch, 100);
        // Earliest checkpoint from which every ordering equals the 100-epoch one.
        let stable_from = trace
            .iter()
            .rposition(|c| c.ordering != last.ordering)
            .map_or(trace[0].epoch, |j| trace[j + 1].epoch);
        let stopped = train_with_ordering_convergence::<f32>(&clean, &probes, &noise_train(loss), &ConvergenceConfig::default(), None)
            .unwrap();
        let stop_epoch = stopped.model.meta().epochs_trained;
        let stop_matches = stopped.trace.last().unwrap().ordering == last.ordering;
        ok &= stable_from <= 50 && stopped.converged && stop_epoch <= 50;
        // Reported, not asserted: early orderings can be stable yet transient.
        let note = if stop_matches { "" } else { "; note: stopped on an ordering that later changes" };
        lines.push(format!(
            "{loss}: stable from epoch {stable_from}, stopped at {stop_epoch} (converged {}){note}",
            stopped.converged
        ));
    }
    verdict(ok, lines.join("; "))
}

// ---------------------------------------------------------------- 3 and 4

const TARGET_SIGMAS: [f64; 4] = [0.05, 0.3, 0.55, 0.9];

struct TransferSetup {
    classifier: ClassifierModel,
    member: AutoencoderModel,
    targets: Vec<Dataset>,
    pretrain: PretrainCost,
}

fn transfer_setup(seed: u64) -> TransferSetup {
    let base = glyph_data(SynthSpec::glyphs(100), seed, "base");
    let classifier_train = TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Adam), LossKind::Mse, 10)
        .with_batch_size(64)
        .with_seed(seed);
    let t = Instant::now();
    let classifier = pretrain_classifier(&base, &classifier_train, SplitSpec::new(0.8, seed)).unwrap();
    let classifier_seconds = t.elapsed().as_secs_f64();
    let fleet: Fleet = pretrain_fleet(&[base], &rmsprop(2e-4, LossKind::issim(), 30, seed), false).unwrap();
    let targets = TARGET_SIGMAS
        .iter()
        .enumerate()
        .map(|(i, &s)| glyph_data(SynthSpec::glyphs(100).noisy(s), seed + 1000, &format!("t{i}-noise{s}")))
        .collect();
    TransferSetup {
        pretrain: PretrainCost {
            autoencoder_seconds: Some(fleet.pretrain_seconds()),
            classifier_seconds: Some(classifier_seconds),
        },
        member: fleet.member("base").unwrap().clone(),
        classifier,
        targets,
    }
}

static SEED_ZERO: OnceLock<TransferSetup> = OnceLock::new();

fn setup_for(seed: u64) -> TransferSetup {
    if seed == 0 {
        let s = SEED_ZERO.get_or_init(|| transfer_setup(0));
        TransferSetup {
            classifier: s.classifier.clone(),
            member: s.member.clone(),
            targets: s.targets.clone(),
            pretrain: s.pretrain.clone(),
        }
    } else {
        transfer_setup(seed)
    }
}

fn transfer_agreement() -> Verdict {
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let s = setup_for(seed);
        let fleet = Fleet::from_members(vec![s.member.clone()]).unwrap();
        let m = delta_matrix(&fleet, &s.targets, false).unwrap();
        let predicted: Vec<(String, f64)> = m.rows.iter().cloned().zip(m.values.iter().map(|r| r[0])).collect();
        let tl1 = TransferConfig::new(TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Rmsprop), LossKind::Mse, 100).with_seed(seed));
        let retrained: Vec<(String, f64)> = s
            .targets
            .iter()
            .map(|t| (t.id().to_string(), transfer_retrain(&s.classifier, t, &tl1).unwrap().1.retrained_accuracy))
            .collect();
        let r = rho(&predicted, true, &retrained, false);
        passes += (r >= 0.8) as usize;
        let acc: Vec<String> = retrained.iter().map(|(_, a)| format!("{a:.3}")).collect();
        let d: Vec<String> = predicted.iter().map(|(_, v)| format!("{v:.4}")).collect();
        lines.push(format!("seed {seed}: ρ={r:.3} Δ=[{}] acc=[{}]", d.join(", "), acc.join(", ")));
    }
    verdict(passes >= 2, format!("{passes}/3 seeds with ρ ≥ 0.8; {}", lines.join("; ")))
}

fn latency_ratio() -> Verdict {
    let s = setup_for(0);
    let target = &s.targets[1];
    let settings = BenchSettings::standard(5, 100, 3, 0);
    let r = simex_cli::bench_pairwise(&s.member, &s.classifier, target, &settings, s.pretrain.clone()).unwrap();
    let mut worst_rel = r.simex.relative_std;
    let mut lines = vec![format!(
        "SimEx {:.4}s ±{:.1}% on {} samples",
        r.simex.mean,
        100.0 * r.simex.relative_std,
        r.target_samples
    )];
    for t in &r.transfer {
        worst_rel = worst_rel.max(t.latency.relative_std);
        lines.push(format!(
            "{} {:.3}s ±{:.1}% (best epoch {}, {} run) {:.1}x",
            t.name,
            t.latency.mean,
            100.0 * t.latency.relative_std,
            t.epochs_to_best[0],
            t.epochs_run[0],
            t.speedup
        ));
    }
    let ok = r.speedup_vs_fastest >= 5.0 && worst_rel < 0.10;
    verdict(
        ok,
        format!(
            "fastest {} → {:.1}x (need ≥ 5), worst relative std {:.1}% (need < 10%); {}",
            r.fastest_transfer,
            r.speedup_vs_fastest,
            100.0 * worst_rel,
            lines.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 6

fn gradient_suite() -> Verdict {
    let cases = layer_suite(&[LossKind::Mse, LossKind::issim()], 10, 6).unwrap();
    let covered: BTreeSet<&str> = cases.iter().flat_map(|c| c.kinds.iter().map(|k| k.name())).collect();
    let all = [
        LayerKind::Conv2d,
        LayerKind::MaxPool2,
        LayerKind::Upsample2,
        LayerKind::Dense,
        LayerKind::Relu,
        LayerKind::Sigmoid,
        LayerKind::Reshape,
    ];
    let missing: Vec<&str> = all.iter().map(|k| k.name()).filter(|k| !covered.contains(k)).collect();
    let losses: BTreeSet<&str> = cases.iter().map(|c| c.loss).collect();
    let worst = cases.iter().map(|c| c.worst).fold(0.0, f64::max);
    let ok = missing.is_empty() && losses.len() == 2 && cases.iter().all(|c| c.points == 10 && c.worst < 1e-4);
    verdict(
        ok,
        format!("{} cases over {} layer kinds, worst relative error {worst:.2e}, missing {missing:?}", cases.len(), covered.len()),
    )
}

// ---------------------------------------------------------------- 7

fn oracle_suites() -> Verdict {
    let mut rng = RngStream::new(7);
    let draw = |rng: &mut RngStream, n: usize, levels: usize| -> Vec<f64> { (0..n).map(|_| rng.below(levels) as f64).collect() };
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let n = 2 + rng.below(14);
        let levels = if rng.below(2) == 0 { 4 } else { 1000 };
        let (x, y) = (draw(&mut rng, n, levels), draw(&mut rng, n, levels));
        if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
            continue;
        }
        let ids: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
        let pair = |v: &[f64]| -> Vec<(String, f64)> { ids.iter().cloned().zip(v.iter().copied()).collect() };
        worst = worst.max((rho(&pair(&x), true, &pair(&y), true) - oracles::brute_spearman(&x, &y)).abs());
        cases += 1;
    }
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (rows, cols) = (1 + rng.below(8), 1 + rng.below(8));
        let costs: Vec<Vec<f64>> = (0..rows).map(|_| draw(&mut rng, cols, 6)).collect();
        let got: Vec<(usize, usize)> = greedy_pairing(&costs).unwrap().pairs.iter().map(|p| (p.row, p.column)).collect();
        mismatches += (got != oracles::sort_and_scan(&costs)) as usize;
    }
    let predicted = RankList::from_order(&["M", "R", "E", "F", "B"]).unwrap();
    let retrained = RankList::from_order(&["M", "E", "R", "F", "B"]).unwrap();
    let cell = spearman_rho(&predicted, &retrained).unwrap();
    let ok = worst <= 1e-12 && mismatches == 0 && (cell - 0.9).abs() <= 1e-12;
    verdict(
        ok,
        format!("ρ worst deviation {worst:.1e} over 1000 cases; greedy mismatches {mismatches}/1000; worked cell {cell}"),
    )
}

// ---------------------------------------------------------------- 8

/// Pair id for classes `a` and `b`, order-independent.
fn pair_id(a: &str, b: &str) -> String {
    if a < b {
        format!("{a}~{b}")
    } else {
        format!("{b}~{a}")
    }
}

fn symmetric_pairs(m: &DeltaMatrix) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, a) in m.rows.iter().enumerate() {
        for b in &m.rows[i + 1..] {
            let (x, y) = (m.value(a, b).unwrap(), m.value(b, a).unwrap());
            out.push((pair_id(a, b), (x + y) / 2.0));
        }
    }
    out
}

fn confusability_agreement() -> Verdict {
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let n = 100;
        let classes = [
            glyph_data(SynthSpec::glyph_classes(n, vec![0]), seed, "bar").relabel_all(0),
            glyph_data(SynthSpec::glyph_classes(n, vec![0]).rotated(18.0, 22.0), seed + 1, "tilted").relabel_all(1),
            glyph_data(SynthSpec::glyph_classes(n, vec![0]).rotated(58.0, 62.0), seed + 2, "steep").relabel_all(2),
        ];
        let names: Vec<&str> = classes.iter().map(|c| c.id()).collect();
        let all = Dataset::concat("ladder", &classes.iter().collect::<Vec<_>>()).unwrap();
        let (mut refs, mut tests) = (Vec::new(), Vec::new());
        for c in &classes {
            let (tr, te) = split(c, SplitSpec::new(0.8, seed)).unwrap();
            refs.push(tr.with_id(c.id()));
            tests.push(te.with_id(c.id()));
        }
        let confusion_train = TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Adam), LossKind::Mse, 5)
            .with_seed(seed)
            .with_batch_size(32);
        let grid = confusion_grid(&all, &confusion_train, false).unwrap();
        let mut confusion = Vec::new();
        for a in 0..3 {
            for b in a + 1..3 {
                let mass = (grid[a].mass_on(b) + grid[b].mass_on(a)) / 2.0;
                confusion.push((pair_id(names[a], names[b]), mass));
            }
        }
        let mut per_loss = Vec::new();
        for loss in [LossKind::issim(), LossKind::Mse] {
            let fleet: Fleet = pretrain_fleet(&refs, &rmsprop(1e-3, loss, 20, seed), false).unwrap();
            let m = delta_matrix(&fleet, &tests, false).unwrap();
            per_loss.push((loss, rho(&symmetric_pairs(&m), true, &confusion, false)));
        }
        let mut sample = Vec::new();
        for a in 0..3 {
            for b in a + 1..3 {
                let d = sample_distance(&tests[a], &tests[b], &LossKind::Mse, &PairSampling::default()).unwrap();
                sample.push((pair_id(names[a], names[b]), d));
            }
        }
        let sample_rho = rho(&sample, true, &confusion, false);
        let issim_rho = per_loss[0].1;
        ok &= issim_rho == 1.0;
        let conf: Vec<String> = confusion.iter().map(|(p, v)| format!("{p} {v:.3}")).collect();
        lines.push(format!(
            "seed {seed}: confusion [{}] ρ(SimEx issim)={issim_rho} ρ(SimEx mse)={} ρ(sample mse)={sample_rho}",
            conf.join(", "),
            per_loss[1].1
        ));
    }
    verdict(ok, format!("asserted on the iSSIM fleet, all seeds; {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 9

fn round_trips_and_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    // IDX: the shipped files re-encode to identical bytes, and a written
    // subset reads back identically.
    let dir = data_dir();
    let images = fs::read(dir.join("mnist-10k-images-idx3-ubyte")).unwrap();
    let labels = fs::read(dir.join("mnist-10k-labels-idx1-ubyte")).unwrap();
    let all = mnist();
    checks.push(("idx re-encode", encode_images(&all) == images && encode_labels(&all).unwrap() == labels));
    let sub = all.subset(&(0..500).collect::<Vec<_>>(), "sub");
    let (pi, pl) = (tmp.path().join("i.idx"), tmp.path().join("l.idx"));
    write_idx(&sub, &pi, Some(&pl)).unwrap();
    let back = load_idx(&pi, Some(&pl)).unwrap();
    checks.push(("idx write/read", back.pixels() == sub.pixels() && back.labels() == sub.labels()));

    // Checkpoints: decode(encode(m)) == m and re-encodes to the same bytes.
    let refs: Vec<Dataset> = (0..3)
        .map(|k| glyph_data(SynthSpec::glyph_classes(12, vec![k * 3]), k as u64, &format!("g{k}")))
        .collect();
    let train = rmsprop(1e-3, LossKind::issim(), 2, 5).with_batch_size(16);
    let fleet_p: Fleet = pretrain_fleet(&refs, &train, true).unwrap();
    let member = fleet_p.member("g0").unwrap();
    let bytes = encode_checkpoint(member).unwrap();
    let decoded: AutoencoderModel = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
    let clf_data = Dataset::concat("clf", &refs.iter().collect::<Vec<_>>()).unwrap();
    let clf_train = TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Adam), LossKind::Mse, 2).with_batch_size(16);
    let clf: ClassifierModel = pretrain_classifier(&clf_data, &clf_train, SplitSpec::default()).unwrap();
    let cbytes = encode_checkpoint(&clf).unwrap();
    let cdecoded: ClassifierModel = decode_checkpoint(&cbytes, Path::new("mem")).unwrap();
    checks.push((
        "checkpoint",
        &decoded == member && encode_checkpoint(&decoded).unwrap() == bytes && cdecoded == clf && encode_checkpoint(&cdecoded).unwrap() == cbytes,
    ));

    // Parallel == serial.
    let fleet_s: Fleet = pretrain_fleet(&refs, &train, false).unwrap();
    checks.push(("fleet parallel == serial", fleet_p == fleet_s));
    let unknowns: Vec<Dataset> = (0..4).map(|k| glyph_data(SynthSpec::glyph_classes(5, vec![k]), 40 + k as u64, &format!("u{k}"))).collect();
    let mp = delta_matrix(&fleet_p, &unknowns, true).unwrap();
    let ms = delta_matrix(&fleet_s, &unknowns, false).unwrap();
    let bits = |m: &DeltaMatrix| m.values.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    checks.push(("delta_matrix parallel == serial", bits(&mp) == bits(&ms)));

    // Reruns of the same config write byte-identical JSON reports.
    let config = RunConfig {
        command: Some(Command::Compare),
        output_dir: "out".into(),
        seed: 11,
        references: vec![
            DatasetDescriptor::synth("bars", SynthSpec::glyph_classes(8, vec![0]), 1),
            DatasetDescriptor::synth("rings", SynthSpec::glyph_classes(8, vec![5]), 2),
        ],
        unknowns: vec![DatasetDescriptor::synth("mixed", SynthSpec::glyph_classes(4, vec![0, 5]), 3)],
        train: rmsprop(1e-3, LossKind::Mse, 2, 0).with_batch_size(16),
        ..RunConfig::default()
    };
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for r in &runs {
        execute(&config, Command::Compare, r.path()).unwrap();
    }
    let identical = ["delta.json", "ordering.json", "manifest.json"].iter().all(|f| {
        fs::read(runs[0].path().join("out").join(f)).unwrap() == fs::read(runs[1].path().join("out").join(f)).unwrap()
    });
    checks.push(("rerun JSON byte-identical", identical));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let names: Vec<&str> = checks.iter().map(|c| c.0).collect();
    verdict(failed.is_empty(), format!("checked [{}]; failed {failed:?}", names.join(", ")))
}

// ----------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 9] = [
    (1, "digit-4 ordering", digit_four_ordering),
    (2, "ground-truth synthetic ordering", ground_truth_ordering),
    (3, "SimEx vs transfer rank agreement", transfer_agreement),
    (4, "latency ratio", latency_ratio),
    (5, "ordering-convergence early stop", ordering_convergence),
    (6, "gradient suite", gradient_suite),
    (7, "oracle suites", oracle_suites),
    (8, "SimEx vs confusion agreement", confusability_agreement),
    (9, "round-trips and determinism", round_trips_and_determinism),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (n, name, _) in CRITERIA {
            println!("criterion {n} ({name}): test");
        }
        return;
    }
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failures += !v.pass as usize;
        println!(
            "criterion {n} ({name}): {} [{:.0}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
