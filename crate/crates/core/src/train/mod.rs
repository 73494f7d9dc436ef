//! Losses, optimization, sampling and the training loop.

mod adam;
pub mod baselines;
mod loss;
mod sampler;
mod schedule;
mod trainer;

pub use adam::{AdamConfig, AdamState, Moments};
pub use loss::{dice_loss, DEFAULT_SMOOTH};
pub use sampler::{epoch_order, mix_sampler, sampled_rater, TrainingStrategy};
pub use schedule::Schedule;
pub use trainer::{epoch_means, read_log, train, write_log, LogRow, TrainConfig, TrainSession};
