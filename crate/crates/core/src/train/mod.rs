//! Pretraining and fine-tuning loops, optimizer, schedule and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod log;
mod run;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{lr_schedule, Phase, TrainConfig};
pub use log::{TrainLog, FINETUNE_COLUMNS, PRETRAIN_COLUMNS};
pub use run::{
    finetune, finetune_samples, finetune_with, pretrain, pretrain_triplets, pretrain_with,
    FinetuneSample, TrainOutcome,
};
