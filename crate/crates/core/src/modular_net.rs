//! The module grid: `L` layers of `M` dense blocks, per-task paths through
//! them, a partitioned output head, and forward/backward passes restricted to
//! one task's path.

mod checkpoint;
mod grid;
mod pass;
mod path;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use grid::{
    GridShape, HeadSlice, ModuleBlock, ModuleGrid, NormInstance, NormMode, NormOwner, ParamId,
    TaskEntry, TaskId, NORM_EPS, NORM_MOMENTUM,
};
pub use pass::{Gradients, LayerTape, Mode, ModuleTape, Tape};
pub use path::{assign_random_path, build_controlled_paths, parse_setup_label, Path};
