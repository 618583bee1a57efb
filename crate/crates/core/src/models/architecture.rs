use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};
use crate::loss::LossKind;
use crate::rng::RngStream;
use crate::tensor::{Layer, OptimizerConfig, Scalar, Sequential, Tensor};

/// Smallest accepted square input side.
pub const MIN_INPUT_SIDE: usize = 16;
/// Width of the autoencoder bottleneck (and of the classifier's first FC
/// layer) for inputs of 20x20 and larger.
pub const BOTTLENECK_WIDTH: usize = 120;
pub const TRUNK_CHANNELS: usize = 16;

/// Provenance of a model's parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    /// Reconstruction loss used in training (autoencoders only).
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub epochs_trained: usize,
    /// Seed the parameters were initialised from.
    pub seed: u64,
    #[serde(default)]
    pub reference_id: Option<String>,
    /// Held-out accuracy recorded after training (classifiers only).
    #[serde(default)]
    pub test_accuracy: Option<f64>,
}

/// Spatial sizes through the shared conv trunk for a square input `side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TrunkGeometry {
    pub side: usize,
    /// After the first pooling.
    pub pooled: usize,
    /// After the valid convolution.
    pub conv2: usize,
    /// After the second pooling.
    pub final_side: usize,
}

impl TrunkGeometry {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height != width || height < MIN_INPUT_SIDE {
            return Err(SimexError::UnsupportedShape(vec![1, height, width]));
        }
        let pooled = height / 2;
        let conv2 = pooled - 4;
        Ok(TrunkGeometry {
            side: height,
            pooled,
            conv2,
            final_side: conv2 / 2,
        })
    }

    pub fn flat(&self) -> usize {
        TRUNK_CHANNELS * self.final_side * self.final_side
    }

    pub fn bottleneck(&self) -> usize {
        BOTTLENECK_WIDTH.min(self.flat())
    }
}

/// conv(6@5x5, same) -> relu -> pool -> conv(16@5x5, valid) -> relu -> pool -> flatten.
pub(crate) fn conv_trunk<T: Scalar>(g: &TrunkGeometry) -> Vec<Layer<T>> {
    vec![
        Layer::conv2d(1, 6, 5, 2),
        Layer::Relu,
        Layer::MaxPool2,
        Layer::conv2d(6, TRUNK_CHANNELS, 5, 0),
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Reshape { shape: vec![g.flat()] },
    ]
}

pub(crate) fn check_batch<T: Scalar>(batch: &Tensor<T>, height: usize, width: usize) -> Result<()> {
    match batch.shape() {
        [_, 1, h, w] if *h == height && *w == width => Ok(()),
        other => Err(SimexError::shape(
            "model input",
            &[other.first().copied().unwrap_or(0), 1, height, width],
            other,
        )),
    }
}

/// Symmetric convolutional autoencoder. The encoder ends at the bottleneck
/// ReLU, whose activations are the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel<T = f32> {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) net: Sequential<T>,
    pub(crate) encoder_len: usize,
    pub(crate) meta: ModelMeta,
}

/// Build the default autoencoder for `height x width` single-channel input
/// with Glorot-initialised weights and zero biases.
///
/// The decoder mirrors the trunk: dense back to the flattened width,
/// reshape, nearest-neighbour upsample to the pre-pooling size, a 5x5
/// convolution with padding 4 that undoes the valid convolution's shrink
/// (10x10 -> 14x14 at 28x28), upsample to the input size, a same-padded 5x5
/// convolution to one channel, and a sigmoid.
pub fn build_autoencoder<T: Scalar>(height: usize, width: usize, seed: u64) -> Result<AutoencoderModel<T>> {
    let g = TrunkGeometry::new(height, width)?;
    let bn = g.bottleneck();
    let mut layers = conv_trunk::<T>(&g);
    layers.extend([Layer::dense(g.flat(), bn), Layer::Relu]);
    let encoder_len = layers.len();
    layers.extend([
        Layer::dense(bn, g.flat()),
        Layer::Relu,
        Layer::Reshape {
            shape: vec![TRUNK_CHANNELS, g.final_side, g.final_side],
        },
        Layer::Upsample2 {
            target: Some((g.conv2, g.conv2)),
        },
        Layer::conv2d(TRUNK_CHANNELS, 6, 5, 4),
        Layer::Relu,
        Layer::Upsample2 {
            target: Some((g.side, g.side)),
        },
        Layer::conv2d(6, 1, 5, 2),
        Layer::Sigmoid,
    ]);
    let mut net = Sequential::new(layers);
    net.init_params(&mut RngStream::new(seed).fork("init"));
    Ok(AutoencoderModel {
        height,
        width,
        net,
        encoder_len,
        meta: ModelMeta {
            seed,
            ..ModelMeta::default()
        },
    })
}

impl<T: Scalar> AutoencoderModel<T> {
    pub fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn network(&self) -> &Sequential<T> {
        &self.net
    }

    pub fn encoder_len(&self) -> usize {
        self.encoder_len
    }

    pub fn bottleneck_width(&self) -> usize {
        TrunkGeometry::new(self.height, self.width)
            .map(|g| g.bottleneck())
            .unwrap_or(0)
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    pub fn reference_id(&self) -> Option<&str> {
        self.meta.reference_id.as_deref()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Reconstructions `x̂` of a `(N, 1, H, W)` batch, in `(0, 1)`.
    pub fn reconstruct(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        check_batch(batch, self.height, self.width)?;
        self.net.predict(batch.clone())
    }

    /// Bottleneck activations, `(N, bottleneck_width)`.
    pub fn embed(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        check_batch(batch, self.height, self.width)?;
        self.net.apply_range(batch.clone(), 0..self.encoder_len)
    }

    /// Decoder half applied to embeddings.
    pub fn decode(&self, embeddings: Tensor<T>) -> Result<Tensor<T>> {
        self.net.apply_range(embeddings, self.encoder_len..self.net.len())
    }
}

/// LeNet-5 style classifier: the autoencoder's conv trunk followed by a
/// fully connected head producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T = f32> {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) num_classes: usize,
    pub(crate) net: Sequential<T>,
    pub(crate) trunk_len: usize,
    pub(crate) meta: ModelMeta,
}

fn classifier_head<T: Scalar>(g: &TrunkGeometry, num_classes: usize) -> Vec<Layer<T>> {
    vec![
        Layer::dense(g.flat(), BOTTLENECK_WIDTH),
        Layer::Relu,
        Layer::dense(BOTTLENECK_WIDTH, 84),
        Layer::Relu,
        Layer::dense(84, num_classes),
    ]
}

pub fn build_classifier<T: Scalar>(
    height: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
) -> Result<ClassifierModel<T>> {
    let g = TrunkGeometry::new(height, width)?;
    if num_classes < 2 {
        return Err(SimexError::invalid(format!(
            "classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    let mut layers = conv_trunk::<T>(&g);
    let trunk_len = layers.len();
    layers.extend(classifier_head(&g, num_classes));
    let mut net = Sequential::new(layers);
    net.init_params(&mut RngStream::new(seed).fork("init"));
    Ok(ClassifierModel {
        height,
        width,
        num_classes,
        net,
        trunk_len,
        meta: ModelMeta {
            seed,
            ..ModelMeta::default()
        },
    })
}

/// Row-wise softmax of `(N, K)` logits, computed stably in f64.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.per_sample();
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..logits.batch() {
        let row = logits.sample(i);
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64_lossy(e / sum)));
    }
    Tensor::from_vec(&[logits.batch(), k], out).expect("softmax keeps shape")
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn network(&self) -> &Sequential<T> {
        &self.net
    }

    /// Index of the first head layer; layers before it form the conv trunk.
    pub fn trunk_len(&self) -> usize {
        self.trunk_len
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Unnormalised class scores, `(N, num_classes)`.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        check_batch(batch, self.height, self.width)?;
        self.net.predict(batch.clone())
    }

    /// Class probabilities, `(N, num_classes)`.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax_rows(&self.logits(batch)?))
    }

    /// Arg-max class per sample; ties go to the lower index.
    pub fn predict_labels(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok((0..logits.batch())
            .map(|i| {
                let row = logits.sample(i);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Replace the FC head with freshly initialised layers for
    /// `num_classes` outputs, keeping the trunk.
    pub fn reset_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes < 2 {
            return Err(SimexError::invalid(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let g = TrunkGeometry::new(self.height, self.width)?;
        let mut rng = RngStream::new(seed).fork("head");
        let mut layers: Vec<Layer<T>> = self.net.layers()[..self.trunk_len].to_vec();
        for mut layer in classifier_head::<T>(&g, num_classes) {
            layer.init_params(&mut rng);
            layers.push(layer);
        }
        self.net = Sequential::new(layers);
        self.num_classes = num_classes;
        Ok(())
    }
}
