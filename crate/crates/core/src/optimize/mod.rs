//! Losses, the optimizer and the training schedule.

pub mod adam;
pub mod loss;
pub mod objective;
pub mod ssim;
pub mod train;

pub use loss::{loss_alpha, loss_normal, loss_photometric};
pub use objective::{evaluate, total_loss, LossBreakdown, LossConfig, Stage};
pub use ssim::ssim;
pub use train::{train, Checkpoint, LearningRates, LossRecord, ProbeSpec, TrainConfig, TrainOutput};
