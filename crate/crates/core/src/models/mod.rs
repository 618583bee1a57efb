//! Network definitions, training and checkpoints.

mod architecture;
pub mod checkpoint;
mod train;

pub use architecture::{
    build_autoencoder, build_classifier, softmax_rows, AutoencoderModel, ClassifierModel, ModelMeta,
    BOTTLENECK_WIDTH, MIN_INPUT_SIDE,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpointable, ModelKind};
pub use train::{
    cross_entropy_and_grad, train, train_monitored, EpochInfo, Flow, Objective, TrainConfig, TrainReport, Trainable,
};
