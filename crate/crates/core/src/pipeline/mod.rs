//! Toy video-classification harness around the aggregators.

mod dataset;
mod eval;
mod head;
mod sampling;
mod train;

pub use dataset::{class_patterns, DatasetSpec, Sample, SyntheticDataset};
pub use eval::{evaluate, EvalReport};
pub use head::{softmax, ClassifierHead, HeadGrads};
pub use sampling::{segment_bounds, segment_centers, segment_sample};
pub use train::{train, EpochMetrics, Model, TrainConfig, TrainOutcome};

/// splitmix64 over `(base, a, b)`; independent per-sample RNG streams keep
/// parallel and sequential runs identical.
pub(crate) fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
