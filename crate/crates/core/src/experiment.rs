//! Config-driven experiment runs and their on-disk artifacts.

mod compare;
mod config;
mod run;

pub use compare::{compare, CompareRow, CompareTable};
pub use config::{
    AnalysisConfig, ExperimentConfig, GridConfig, PathAssignment, TaskSource, TrainSettings,
};
pub use run::{
    analyze, build_grid, evaluate, gen_data, prepare_data, profile_sharing, run, run_to_dir,
    AnalysisOutput, RunOutcome, SharingOutput,
};
