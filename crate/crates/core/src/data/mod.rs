//! Datasets: IDX ingestion, class partitioning, splitting, balancing and
//! synthetic generation.

mod dataset;
pub mod idx;
mod split;
pub mod synth;

pub use dataset::{ClassPartition, Dataset};
pub use idx::{load_idx, write_idx};
pub use split::{balance, split, take_subset, SplitSpec};
pub use synth::{rotate_image, synth_generate, SynthSpec, GLYPH_CLASSES, GLYPH_NAMES};
