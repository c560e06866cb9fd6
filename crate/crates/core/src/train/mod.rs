//! Losses, batch mixing, the three-stage schedule and ablation switches.

mod batch;
mod config;
mod losses;
mod stage;

pub use batch::{mix_batch, MixedBatch};
pub use config::{Ablation, TrainConfig};
pub use losses::{alignment_loss, chamfer_loss, kl_loss, loss_pose, pose_loss, PoseTarget};
pub use stage::{batch_gradients, batch_loss, run_stage, BatchLoss, stage_batch, trainable_in, LossLog, StageReport};
