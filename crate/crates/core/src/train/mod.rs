//! Alternating adversarial training, optimizers and checkpoints.

mod adam;
mod checkpoint;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Record, RecordData, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use trainer::{
    read_hyper, read_model, write_model, EpochLosses, StepLosses, TrainConfig, TrainReport,
    Trainer, LOSS_CSV_HEADER, MIN_BATCH,
};
