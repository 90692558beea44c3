//! Desk-scale credit scorecard pipeline.
//!
//! Turns raw marketplace transaction events plus a bureau score into
//! engineered features, trains a gradient-boosted tree classifier,
//! explains it with exact tree Shapley attribution, and evaluates
//! bureau-only versus bureau-plus-app models with AUC, KS, an
//! example-dependent cost measure, and rank-sum tests under a
//! bootstrap protocol with population segmentation.

pub mod datamodel;
pub mod explain;
pub mod features;
pub mod gbdt;
pub mod metrics;
pub mod segments;
pub mod synth;

/// Derives an independent child seed from a master seed and a stream
/// index, so sub-tasks (splits, model fits, per-user generators) get
/// decorrelated but reproducible randomness.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
