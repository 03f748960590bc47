//! Training: BCE loss, AdamW, datasets (disk and synthetic) and the loop.

mod data;
mod fit;
mod loss;
mod optim;

pub use data::{
    load_dataset, read_gray, split_dataset, stack, synth_generate, to_gray, write_dataset, Sample, SyntheticSpec,
};
pub use fit::{evaluate, ground_truth, predict, train_loop, train_step, EpochRecord, History, TrainConfig};
pub use loss::bce_loss;
pub use optim::{AdamW, OptimizerHyper};
