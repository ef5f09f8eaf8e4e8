//! Synthetic cell-selection tasks, permutation augmentation and training.

mod ablation;
mod augment;
mod generate;
mod train;

pub use ablation::{compare_ablation, AblationReport, ArmResult};
pub use augment::{augment, AugmentationPlan, AugmentedDataset, ALLOWED_COPIES};
pub use generate::{answer, generate_dataset, TaskKind, TaskSpec, VocabPool};
pub use train::{evaluate, train, EpochMetrics, Evaluation, OptimizerKind, TrainConfig, TrainOutcome};

use crate::encoder::EncoderConfig;

/// Two layers, four heads, width 64, FFN 128, 4096 hashed word ids and 64
/// positions: big enough for the toy tasks, small enough to train in
/// seconds.
///
/// Weights start at std `1/sqrt(64)` and each of the four summed embedding
/// tables at std 0.5, so first-layer inputs have roughly unit scale and
/// attention logits are not flat at initialization.
pub fn toy_encoder_config() -> EncoderConfig {
    let mut config = EncoderConfig::new(2, 4, 64).with_vocab(4096, 64);
    config.init_std = 0.125;
    config.embedding_init_std = Some(0.5);
    config
}
