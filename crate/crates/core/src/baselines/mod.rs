//! Methods SimEx is compared against: sample-space and embedding
//! distances, freeze-and-retrain transfer, and held-out-class confusion.

mod confusion;
mod distance;
mod transfer;

pub use confusion::{confusion_grid, confusion_probe, ConfusionReport};
pub use distance::{
    distance_grid, embedding_distance, sample_distance, Aggregation, DistanceMethod, DistanceReport, PairSampling,
};
pub use transfer::{
    evaluate_accuracy, pretrain_classifier, tl_configs, transfer_retrain, TransferConfig, TransferResult,
};
