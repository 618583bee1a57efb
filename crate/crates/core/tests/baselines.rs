use simex_core::baselines::{
    confusion_probe, distance_grid, embedding_distance, evaluate_accuracy, pretrain_classifier, sample_distance,
    transfer_retrain, DistanceMethod, PairSampling, TransferConfig,
};
use simex_core::data::{synth_generate, Dataset, SplitSpec, SynthSpec};
use simex_core::engine::{pretrain_fleet, Fleet};
use simex_core::loss::LossKind;
use simex_core::models::{build_classifier, TrainConfig, Trainable};
use simex_core::tensor::{Layer, OptimizerConfig, OptimizerKind, Tensor};
use simex_core::SimexError;

fn adam(epochs: usize) -> TrainConfig {
    TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Adam), LossKind::Mse, epochs)
        .with_batch_size(32)
        .with_seed(4)
}

fn glyphs(per_class: usize, seed: u64) -> Dataset {
    synth_generate(&SynthSpec::glyphs(per_class), seed).unwrap()
}

#[test]
fn sample_distance_is_symmetric_and_grows_with_noise() {
    let clean = glyphs(8, 1);
    let sampling = PairSampling {
        max_pairs: 500,
        seed: 3,
        ..PairSampling::default()
    };
    let mut last = 0.0;
    for sigma in [0.1, 0.2, 0.4] {
        let noisy = synth_generate(&SynthSpec::glyphs(8).noisy(sigma), 2).unwrap();
        let d = sample_distance(&clean, &noisy, &LossKind::Mse, &sampling).unwrap();
        assert_eq!(d, sample_distance(&noisy, &clean, &LossKind::Mse, &sampling).unwrap());
        assert!(d > last, "sigma {sigma}: {d} <= {last}");
        last = d;
    }
    let one = clean.subset(&[0], "one");
    assert_eq!(sample_distance(&one, &one, &LossKind::issim(), &sampling).unwrap(), 0.0);
}

#[test]
fn embeddings_separate_classes() {
    let bars = synth_generate(&SynthSpec::glyph_classes(30, vec![0]), 1).unwrap().with_id("bars");
    let rings = synth_generate(&SynthSpec::glyph_classes(30, vec![5]), 2).unwrap().with_id("rings");
    let both = Dataset::concat("both", &[&bars, &rings]).unwrap();
    let fleet: Fleet = pretrain_fleet(&[both], &adam(10), false).unwrap();
    let ae = fleet.member("both").unwrap();
    let s = PairSampling::default();
    let within = embedding_distance(ae, &bars, &bars.clone().with_id("bars2"), &s).unwrap();
    let cross = embedding_distance(ae, &bars, &rings, &s).unwrap();
    assert!(within < cross, "{within} vs {cross}");
    assert_eq!(cross, embedding_distance(ae, &rings, &bars, &s).unwrap());
    let one = bars.subset(&[3], "one");
    assert_eq!(embedding_distance(ae, &one, &one, &s).unwrap(), 0.0);
    let grid = distance_grid(DistanceMethod::Embeddings, &[bars.clone(), rings.clone()], &[bars, rings], &s, Some(ae)).unwrap();
    assert!(grid.values[0][1] > grid.values[0][0]);
    assert_eq!(grid.values[0][1], grid.values[1][0]);
}

#[test]
fn transfer_freezes_the_trunk_and_self_transfer_keeps_accuracy() {
    let data = glyphs(40, 5).with_id("glyphs");
    let base = pretrain_classifier::<f32>(&data, &adam(8), SplitSpec::new(0.8, 5)).unwrap();
    let base_acc = base.meta().test_accuracy.unwrap();
    assert!(base_acc > 0.9, "{base_acc}");

    let cfg = TransferConfig::new(TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Rmsprop), LossKind::Mse, 60).with_seed(5));
    let (model, result) = transfer_retrain(&base, &data, &cfg).unwrap();
    let trunk = base.trunk_len();
    assert_eq!(&model.network().layers()[..trunk], &base.network().layers()[..trunk]);
    assert_ne!(&model.network().layers()[trunk..], &base.network().layers()[trunk..]);
    assert!((result.normalized_accuracy - 1.0).abs() <= 0.05, "{result:?}");
    assert!(result.seconds > 0.0);
    assert!(result.epochs_run >= result.epochs_to_best + cfg.patience || result.epochs_run == 60);
    assert!((0.0..=1.0).contains(&result.retrained_accuracy));

    let nine = synth_generate(&SynthSpec::glyph_classes(10, (0..9).collect()), 1)
        .unwrap()
        .remap_labels(Some, "nine")
        .unwrap();
    assert_eq!(nine.num_classes(), 9);
    assert!(transfer_retrain(&base, &nine, &cfg).is_err());
    let untested = build_classifier::<f32>(28, 28, 10, 0).unwrap();
    assert!(transfer_retrain(&untested, &data, &cfg).is_err());
}

#[test]
fn accuracy_matches_a_tally_and_chance_level() {
    let data = glyphs(5, 9);
    let mut clf = build_classifier::<f32>(28, 28, 10, 1).unwrap();
    let probs = clf.predict(&data.to_tensor()).unwrap();
    let tally = (0..data.len())
        .filter(|&i| {
            let row = probs.sample(i);
            let best = (0..10).rev().max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            best == data.labels().unwrap()[i]
        })
        .count();
    assert_eq!(evaluate_accuracy(&clf, &data).unwrap(), tally as f64 / 50.0);

    // Zero the output layer and favour class 3: a constant predictor.
    let layers = clf.network_mut().layers_mut();
    let Layer::Dense(last) = layers.last_mut().unwrap() else { panic!("head ends in a dense layer") };
    last.weight = Tensor::zeros(last.weight.shape());
    last.bias.data_mut()[3] = 1.0;
    assert_eq!(evaluate_accuracy(&clf, &data).unwrap(), 0.1);
    let all_three = data.remap_labels(|_| Some(3), "threes").unwrap();
    assert_eq!(evaluate_accuracy(&clf, &all_three).unwrap(), 1.0);
    assert!(matches!(evaluate_accuracy(&clf, &data.subset(&[], "e")), Err(SimexError::Empty(_))));
}

#[test]
fn confusion_rows_are_distributions() {
    let data = synth_generate(&SynthSpec::glyph_classes(20, vec![0, 1, 2, 5]), 3)
        .unwrap()
        .remap_labels(|c| [0, 1, 2, 5].iter().position(|&k| k == c), "four")
        .unwrap();
    let r = confusion_probe(&data, 2, &adam(3)).unwrap();
    assert_eq!(r.classes, [0, 1, 3]);
    let total: f64 = r.mass.iter().sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert!(r.mass.iter().all(|&m| m >= 0.0));
    assert_eq!(r.mass_on(2), 0.0);
    let missing = data.remap_labels(|c| if c == 1 { None } else { Some(c) }, "gap").unwrap();
    assert!(confusion_probe(&missing, 0, &adam(1)).is_err());
}
