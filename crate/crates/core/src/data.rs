//! Task datasets: synthetic Gaussian tasks, CSV ingestion, oversampling to a
//! common size, per-task standardization and epoch batching.

mod batch;
mod csv_io;
mod dataset;
mod synthetic;

pub use batch::BatchPlan;
pub use csv_io::{load_csv, write_csv};
pub use dataset::{oversample_to_equal, standardize, Dataset, Standardization};
pub use synthetic::gen_synthetic_task;
