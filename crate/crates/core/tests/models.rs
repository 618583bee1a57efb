use simex_core::data::{synth_generate, SynthSpec};
use simex_core::loss::LossKind;
use simex_core::models::{
    build_autoencoder, build_classifier, load_checkpoint, save_checkpoint, train, AutoencoderModel, ClassifierModel,
    TrainConfig,
};
use simex_core::tensor::{LayerKind, OptimizerConfig, OptimizerKind, Tensor};
use simex_core::SimexError;

/// 156 + 2416 + 48120 + 48400 + 2406 + 151, summed from the layer table.
const AUTOENCODER_PARAMS_28: usize = 101_649;

fn rmsprop(lr: f64) -> OptimizerConfig {
    OptimizerConfig::new(OptimizerKind::Rmsprop, lr)
}

fn glyph_batch(n_per_class: usize, seed: u64) -> Tensor<f32> {
    synth_generate(&SynthSpec::glyphs(n_per_class), seed).unwrap().to_tensor()
}

#[test]
fn autoencoder_shapes_and_parameter_count() {
    let ae = build_autoencoder::<f32>(28, 28, 0).unwrap();
    assert_eq!(ae.network().output_shape(&[3, 1, 28, 28]).unwrap(), vec![3, 1, 28, 28]);
    assert_eq!(ae.bottleneck_width(), 120);
    assert_eq!(ae.param_count(), AUTOENCODER_PARAMS_28);
    let x = glyph_batch(1, 0);
    assert_eq!(ae.embed(&x).unwrap().shape(), &[10, 120]);
}

#[test]
fn reconstruction_shape_holds_for_accepted_sizes() {
    for side in [16, 17, 20, 23, 28, 32, 33, 48] {
        let ae = build_autoencoder::<f32>(side, side, 1).unwrap();
        let out = ae.network().output_shape(&[2, 1, side, side]).unwrap();
        assert_eq!(out, vec![2, 1, side, side], "side {side}");
        let widths: Vec<usize> = ae
            .network()
            .layers()
            .iter()
            .filter_map(|l| match l {
                simex_core::tensor::Layer::Dense(d) => Some(d.out_units),
                _ => None,
            })
            .collect();
        assert_eq!(widths.iter().min(), Some(&ae.bottleneck_width()));
    }
    assert!(matches!(
        build_autoencoder::<f32>(15, 15, 0),
        Err(SimexError::UnsupportedShape(_))
    ));
    assert!(build_autoencoder::<f32>(28, 24, 0).is_err());
}

#[test]
fn untrained_reconstructions_lie_strictly_inside_unit_interval() {
    let ae = build_autoencoder::<f32>(28, 28, 5).unwrap();
    let out = ae.reconstruct(&glyph_batch(2, 5)).unwrap();
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn single_sample_matches_its_row_in_a_batch() {
    let ae = build_autoencoder::<f32>(28, 28, 2).unwrap();
    let x = glyph_batch(4, 2).gather(&(0..32).collect::<Vec<_>>());
    let full = ae.reconstruct(&x).unwrap();
    for i in [0, 13, 31] {
        let one = ae.reconstruct(&x.gather(&[i])).unwrap();
        assert_eq!(one.data(), full.sample(i), "row {i}");
    }
}

#[test]
fn embedding_is_the_first_half_of_reconstruction() {
    let ae = build_autoencoder::<f32>(28, 28, 9).unwrap();
    let x = glyph_batch(1, 9);
    let e = ae.embed(&x).unwrap();
    assert_eq!(e, ae.embed(&x).unwrap());
    assert_eq!(ae.decode(e).unwrap(), ae.reconstruct(&x).unwrap());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let ae = build_autoencoder::<f32>(28, 28, 0).unwrap();
    assert!(matches!(
        ae.reconstruct(&Tensor::zeros(&[1, 1, 20, 20])),
        Err(SimexError::ShapeMismatch { .. })
    ));
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let data = synth_generate(&SynthSpec::glyphs(2), 0).unwrap();
    let mut ae = build_autoencoder::<f32>(28, 28, 4).unwrap();
    let before = ae.clone();
    let report = train(&mut ae, &data, &TrainConfig::new(rmsprop(1e-3), LossKind::Mse, 0)).unwrap();
    assert!(report.history.is_empty());
    assert_eq!(ae.network(), before.network());
}

#[test]
fn training_is_deterministic() {
    let data = synth_generate(&SynthSpec::glyphs(3), 1).unwrap();
    let cfg = TrainConfig::new(rmsprop(1e-3), LossKind::Mse, 2).with_seed(8).with_batch_size(8);
    let run = || {
        let mut ae = build_autoencoder::<f32>(28, 28, 4).unwrap();
        let report = train(&mut ae, &data, &cfg).unwrap();
        (ae, report.history)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a.network(), b.network());
    assert_eq!(a.meta().epochs_trained, 2);
}

fn assert_loss_decreases(kind: LossKind) {
    let data = synth_generate(&SynthSpec::glyphs(20), 3).unwrap();
    assert_eq!(data.len(), 200);
    let mut ae = build_autoencoder::<f32>(28, 28, 3).unwrap();
    let cfg = TrainConfig::new(rmsprop(2e-4), kind, 30).with_seed(3);
    let report = train(&mut ae, &data, &cfg).unwrap();
    assert_eq!(report.history.len(), 30);
    let (first, last) = (report.history[0], report.history[29]);
    assert!(last < first, "{kind}: {first} -> {last}");
    assert!(report.wall_seconds > 0.0);
    assert_eq!(ae.meta().loss, Some(kind));
}

#[test]
fn mse_training_reduces_loss() {
    assert_loss_decreases(LossKind::Mse);
}

#[test]
fn issim_training_reduces_loss() {
    assert_loss_decreases(LossKind::issim());
}

#[test]
fn classifier_outputs_and_trunk_contract() {
    for k in [9, 10] {
        let clf = build_classifier::<f32>(28, 28, k, 0).unwrap();
        let probs = clf.predict(&glyph_batch(1, 0)).unwrap();
        assert_eq!(probs.shape(), &[10, k]);
        for i in 0..10 {
            let s: f32 = probs.sample(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
    let clf = build_classifier::<f32>(28, 28, 10, 0).unwrap();
    let ae = build_autoencoder::<f32>(28, 28, 0).unwrap();
    let convs = |layers: &[simex_core::tensor::Layer<f32>]| {
        layers.iter().filter(|l| l.kind() == LayerKind::Conv2d).count()
    };
    assert_eq!(
        convs(&clf.network().layers()[..clf.trunk_len()]),
        convs(&ae.network().layers()[..ae.encoder_len()])
    );
    assert_eq!(clf.trunk_len(), 7);
    assert!(build_classifier::<f32>(28, 28, 1, 0).is_err());
}

#[test]
fn classifier_learns_glyphs() {
    let data = synth_generate(&SynthSpec::glyphs(12), 2).unwrap();
    let mut clf = build_classifier::<f32>(28, 28, 10, 2).unwrap();
    let cfg = TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Adam), LossKind::Mse, 15)
        .with_seed(2)
        .with_batch_size(16);
    let report = train(&mut clf, &data, &cfg).unwrap();
    assert!(report.history.last().unwrap() < &report.history[0]);
    let preds = clf.predict_labels(&data.to_tensor()).unwrap();
    let correct = preds.iter().zip(data.labels().unwrap()).filter(|(a, b)| a == b).count();
    assert!(correct as f64 / data.len() as f64 > 0.8, "{correct}/{}", data.len());
}

#[test]
fn unlabeled_data_cannot_train_a_classifier() {
    let data = synth_generate(&SynthSpec::glyphs(1), 0).unwrap();
    let unlabeled = simex_core::data::Dataset::new("u", 28, 28, data.pixels().to_vec(), None, None, "").unwrap();
    let mut clf = build_classifier::<f32>(28, 28, 10, 0).unwrap();
    let cfg = TrainConfig::new(rmsprop(1e-3), LossKind::Mse, 1);
    assert!(train(&mut clf, &unlabeled, &cfg).is_err());
    assert!(matches!(
        train(&mut clf, &data.subset(&[], "empty"), &cfg),
        Err(SimexError::Empty(_))
    ));
}

#[test]
fn checkpoint_file_round_trip_reconstructs_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.ckpt");
    let data = synth_generate(&SynthSpec::glyphs(2), 6).unwrap();
    let mut ae = build_autoencoder::<f32>(28, 28, 6).unwrap();
    train(&mut ae, &data, &TrainConfig::new(rmsprop(1e-3), LossKind::issim(), 1).with_seed(6)).unwrap();
    ae.meta_mut().reference_id = Some("glyphs".into());
    save_checkpoint(&ae, &path).unwrap();
    let back: AutoencoderModel<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back.meta(), ae.meta());
    let x = data.to_tensor();
    assert_eq!(back.reconstruct(&x).unwrap(), ae.reconstruct(&x).unwrap());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1, "temporary file left behind");

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    let err = load_checkpoint::<f32, AutoencoderModel<f32>>(&path).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
}

#[test]
fn classifier_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.ckpt");
    let clf = build_classifier::<f64>(20, 20, 9, 11).unwrap();
    save_checkpoint(&clf, &path).unwrap();
    let back: ClassifierModel<f64> = load_checkpoint(&path).unwrap();
    assert_eq!(back, clf);
}
