//! Synthetic-data toy detector: dataset generation, underwater
//! degradation, a small anchor-free grid network with a swappable pyramid
//! block, the deterministic trainer, and the four-arm ablation harness.

pub mod net;
pub mod synth;
pub mod train;

pub use net::{
    decode_anchor_preds, forward_detect, img_to_tensor, predict, PlainSppf, SppfBlock, ToyNet,
};
pub use synth::{degrade_underwater, synth_dataset};
pub use train::{
    ablate, ablation_markdown, train_toy, AblationRow, EpochRecord, TrainConfig, TrainError,
    TrainOutcome,
};

use crate::enhance::ImageF32;
use crate::fgiou::BBox;

/// Images are square 64x64.
pub const IMG_SIZE: usize = 64;
/// Detection grid is 16x16 (stride 4).
pub const GRID: usize = 16;
pub const STRIDE: usize = IMG_SIZE / GRID;
/// Shape classes: 0 disc, 1 square, 2 triangle.
pub const NUM_CLASSES: usize = 3;
/// Head channels: objectness + class logits + box deltas.
pub const HEAD_CH: usize = 1 + NUM_CLASSES + 4;

/// One synthetic image with its annotations and generation seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: ImageF32,
    pub objects: Vec<(usize, BBox)>,
    pub seed: u64,
}
