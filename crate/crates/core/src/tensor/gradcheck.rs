//! Central-difference verification of analytic gradients.

use crate::error::{Result, SimexError};
use crate::loss::{batch_loss_and_grad, LossKind};
use crate::rng::RngStream;

use super::{Layer, LayerKind, Sequential, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per parameter tensor (and from the input).
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples_per_tensor: 24,
            seed: 0,
        }
    }
}

fn loss_at(net: &Sequential<f64>, loss: &LossKind, input: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    let out = net.predict(input.clone())?;
    let (values, _) = batch_loss_and_grad(target, &out, loss)?;
    let v = values.iter().sum::<f64>() / values.len() as f64;
    if !v.is_finite() {
        return Err(SimexError::NonFinite("loss at perturbed point".into()));
    }
    Ok(v)
}

/// Below this magnitude a gradient is judged by absolute error, since
/// central differences cannot resolve it relatively.
pub const GRADIENT_FLOOR: f64 = 1e-7;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

fn sample_coords(len: usize, count: usize, rng: &mut RngStream) -> Vec<usize> {
    if len <= count {
        (0..len).collect()
    } else {
        (0..count).map(|_| rng.below(len)).collect()
    }
}

/// Maximum relative error between analytic and central-difference gradients
/// of `loss(net(input), target)`, over sampled parameter coordinates and
/// sampled input coordinates.
pub fn finite_difference_check(
    net: &Sequential<f64>,
    loss: &LossKind,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    opts: GradCheckOptions,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(SimexError::invalid(format!(
            "finite-difference epsilon {} outside [1e-7, 1e-3]",
            opts.epsilon
        )));
    }
    let (out, trace) = net.forward(input.clone())?;
    let (_, grad_out) = batch_loss_and_grad(target, &out, loss)?;
    let (grad_in, grad_params) = net.backward(&trace, grad_out, true)?;
    let grad_in = grad_in.expect("input gradient requested");

    let mut rng = RngStream::new(opts.seed);
    let eps = opts.epsilon;
    let mut worst: f64 = 0.0;

    let mut probe = net.clone();
    let n_params = grad_params.len();
    for t in 0..n_params {
        let len = grad_params[t].len();
        for j in sample_coords(len, opts.samples_per_tensor, &mut rng) {
            let original = probe.params_from(0)[t].data()[j];
            probe.params_mut_from(0)[t].data_mut()[j] = original + eps;
            let plus = loss_at(&probe, loss, input, target)?;
            probe.params_mut_from(0)[t].data_mut()[j] = original - eps;
            let minus = loss_at(&probe, loss, input, target)?;
            probe.params_mut_from(0)[t].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad_params[t].data()[j], numeric));
        }
    }

    for j in sample_coords(input.len(), opts.samples_per_tensor, &mut rng) {
        let mut xp = input.clone();
        xp.data_mut()[j] += eps;
        let mut xm = input.clone();
        xm.data_mut()[j] -= eps;
        let numeric = (loss_at(net, loss, &xp, target)? - loss_at(net, loss, &xm, target)?) / (2.0 * eps);
        worst = worst.max(relative_error(grad_in.data()[j], numeric));
    }
    Ok(worst)
}

/// Worst gradient error of one suite case over all of its points.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub name: &'static str,
    pub kinds: Vec<LayerKind>,
    pub loss: &'static str,
    pub points: usize,
    pub worst: f64,
}

/// Small networks ending in a single-channel image of side >= 11, so that
/// both losses apply. Together they cover every layer kind and both
/// convolution code paths.
fn suite_networks() -> Vec<(&'static str, Vec<Layer<f64>>, Vec<usize>, bool)> {
    vec![
        (
            "conv2d-direct",
            vec![Layer::conv2d(1, 2, 3, 1), Layer::conv2d(2, 1, 5, 2)],
            vec![2, 1, 12, 12],
            false,
        ),
        (
            "conv2d-unfolded",
            vec![Layer::conv2d(1, 3, 3, 1), Layer::conv2d(3, 4, 5, 4), Layer::conv2d(4, 1, 3, 0)],
            vec![2, 1, 12, 12],
            false,
        ),
        ("maxpool2", vec![Layer::MaxPool2], vec![2, 1, 25, 25], true),
        ("upsample2", vec![Layer::Upsample2 { target: Some((13, 13)) }], vec![2, 1, 6, 6], false),
        (
            "dense",
            vec![Layer::dense(36, 144), Layer::Reshape { shape: vec![1, 12, 12] }],
            vec![2, 36],
            false,
        ),
        ("relu", vec![Layer::Relu], vec![2, 1, 12, 12], true),
        ("sigmoid", vec![Layer::Sigmoid], vec![2, 1, 12, 12], true),
        ("reshape", vec![Layer::Reshape { shape: vec![1, 12, 12] }], vec![2, 144], false),
    ]
}

/// Central-difference step per loss. iSSIM gradients of single pixels are
/// around 1e-8..1e-7, where a 1e-5 step is dominated by roundoff in the
/// windowed sums; the larger step keeps truncation error below 1e-5.
pub fn suite_epsilon(loss: &LossKind) -> f64 {
    match loss {
        LossKind::Mse => 1e-5,
        LossKind::Issim(_) => 1e-4,
    }
}

/// Run [`finite_difference_check`] over the layer suite for `losses`, at
/// `points` random (parameters, input, target) draws per case.
pub fn layer_suite(losses: &[LossKind], points: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    for (name, layers, input_shape, signed_input) in suite_networks() {
        let kinds = layers.iter().map(Layer::kind).collect::<Vec<_>>();
        for loss in losses {
            let mut worst: f64 = 0.0;
            for p in 0..points {
                let mut rng = RngStream::new(seed).fork(&format!("{name}/{loss}/{p}"));
                let mut net = Sequential::new(layers.clone());
                net.init_params(&mut rng);
                let n: usize = input_shape.iter().product();
                let x: Vec<f64> = (0..n)
                    .map(|_| if signed_input { rng.normal() } else { rng.uniform() })
                    .collect();
                let input = Tensor::from_f64(&input_shape, &x)?;
                let out_shape = net.output_shape(&input_shape)?;
                let m: usize = out_shape.iter().product();
                let target = Tensor::from_f64(&out_shape, &(0..m).map(|_| rng.uniform()).collect::<Vec<_>>())?;
                let opts = GradCheckOptions {
                    epsilon: suite_epsilon(loss),
                    seed: rng.next_u64(),
                    ..GradCheckOptions::default()
                };
                worst = worst.max(finite_difference_check(&net, loss, &input, &target, opts)?);
            }
            out.push(SuiteCase {
                name,
                kinds: kinds.clone(),
                loss: loss.name(),
                points,
                worst,
            });
        }
    }
    Ok(out)
}
