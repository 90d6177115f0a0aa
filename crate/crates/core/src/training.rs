//! Parallel multi-task training over random paths, the sequential
//! freeze-as-you-go baseline, single-task training, and validation.

mod config;
mod report;
mod scheduler;
mod train;

pub use config::TrainConfig;
pub use report::{
    EpochRecord, FinalAccuracy, FreezeEvent, RunReport, TaskEpoch, TaskInfo, TrainMode,
};
pub use scheduler::EpochScheduler;
pub use train::{
    predict, train_parallel, train_sequential, train_single, validate, Optimizer, TaskData,
};
