//! Adam with a step-cosine schedule, the training loop and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod run;
mod schedule;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, Dtype, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use run::{evaluate, TrainReport, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE};
pub use schedule::{lr_schedule, LrSchedule};
