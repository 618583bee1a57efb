//! Minimal tensor and layer substrate for small convolutional networks.

mod gradcheck;
mod layer;
mod network;
mod optim;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{finite_difference_check, layer_suite, suite_epsilon, GradCheckOptions, SuiteCase, GRADIENT_FLOOR};
pub use layer::{glorot_bound, Cache, Conv2d, Dense, Layer, LayerKind};
pub use network::{Sequential, Trace};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;
