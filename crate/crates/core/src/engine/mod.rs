//! Fleet pretraining, Δ matrices, similarity orderings and
//! ordering-convergence early stopping.

mod convergence;
mod delta;
mod fleet;

pub use convergence::{
    convergence_point, train_with_ordering_convergence, CheckpointRecord, ConvergenceConfig, ConvergenceOutcome,
};
pub use delta::{
    delta_matrix, evaluate_delta, normalize_deltas, order_by_similarity, DeltaEvaluation, DeltaMatrix, Percentiles,
    SimilarityOrdering, TIE_BREAK_LEXICAL,
};
pub use fleet::{member_seed, pretrain_fleet, pretrain_member, Fleet};
