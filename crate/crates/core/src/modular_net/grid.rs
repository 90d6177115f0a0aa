use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::path::Path;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng;

pub type TaskId = usize;

pub const NORM_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// One normalization instance per block, used by every task.
    Shared,
    /// Every block holds one instance per registered task.
    PerTask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub layers: usize,
    pub modules: usize,
    pub d_in: usize,
    pub d_hid: usize,
}

impl GridShape {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.modules == 0 || self.d_in == 0 || self.d_hid == 0 {
            return Err(Error::input(format!("degenerate grid shape {self:?}")));
        }
        Ok(())
    }

    pub fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.d_in
        } else {
            self.d_hid
        }
    }
}

/// Batch-norm style feature normalization with running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormInstance {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub run_mean: Vec<f64>,
    pub run_var: Vec<f64>,
    pub momentum: f64,
}

impl NormInstance {
    pub fn new(width: usize) -> Self {
        NormInstance {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            run_mean: vec![0.0; width],
            run_var: vec![1.0; width],
            momentum: NORM_MOMENTUM,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's mean and biased variance into the running stats.
    pub(crate) fn absorb(&mut self, mean: &[f64], biased_var: &[f64], n: usize) {
        let correction = if n > 1 {
            n as f64 / (n - 1) as f64
        } else {
            1.0
        };
        let mom = self.momentum;
        for (rm, &m) in self.run_mean.iter_mut().zip(mean) {
            *rm = (1.0 - mom) * *rm + mom * m;
        }
        for (rv, &v) in self.run_var.iter_mut().zip(biased_var) {
            *rv = (1.0 - mom) * *rv + mom * v * correction;
        }
    }
}

/// One grid cell: `relu(norm(h·W + b))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleBlock {
    pub w: Matrix,
    pub b: Vec<f64>,
    /// A single instance in shared mode; one per task id in per-task mode.
    pub norms: Vec<NormInstance>,
}

impl ModuleBlock {
    fn random<R: Rng + ?Sized>(fan_in: usize, width: usize, rng: &mut R) -> Self {
        // He-uniform
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = Matrix::from_fn(fan_in, width, |_, _| rng.random_range(-bound..bound));
        ModuleBlock {
            w,
            b: vec![0.0; width],
            norms: Vec::new(),
        }
    }

    pub fn norm_count(&self) -> usize {
        self.norms.len()
    }
}

/// The output-layer columns owned by one task, stored as `d_hid × c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSlice {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: TaskId,
    pub classes: usize,
    pub start: usize,
    pub end: usize,
    pub path: Option<Path>,
}

impl TaskEntry {
    pub fn slice(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NormOwner {
    Shared,
    Task(TaskId),
}

/// Addresses one trainable tensor of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamId {
    BlockWeight {
        layer: usize,
        module: usize,
    },
    BlockBias {
        layer: usize,
        module: usize,
    },
    NormScale {
        layer: usize,
        module: usize,
        owner: NormOwner,
    },
    NormShift {
        layer: usize,
        module: usize,
        owner: NormOwner,
    },
    HeadWeight(TaskId),
    HeadBias(TaskId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuleGrid {
    pub(crate) shape: GridShape,
    pub(crate) norm_mode: NormMode,
    pub(crate) seed: u64,
    pub(crate) layers: Vec<Vec<ModuleBlock>>,
    pub(crate) heads: Vec<HeadSlice>,
    pub(crate) tasks: Vec<TaskEntry>,
    pub(crate) frozen_blocks: BTreeSet<(usize, usize)>,
    pub(crate) frozen_tasks: BTreeSet<TaskId>,
    /// Bumped on every mutation that can change a forward pass.
    pub(crate) version: u64,
}

impl ModuleGrid {
    /// A grid with freshly initialized blocks drawn from `seed`'s init stream.
    pub fn new(shape: GridShape, norm_mode: NormMode, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut init = rng::stream(seed, rng::STREAM_INIT);
        let layers = (0..shape.layers)
            .map(|l| {
                (0..shape.modules)
                    .map(|_| {
                        let mut block =
                            ModuleBlock::random(shape.fan_in(l), shape.d_hid, &mut init);
                        if norm_mode == NormMode::Shared {
                            block.norms.push(NormInstance::new(shape.d_hid));
                        }
                        block
                    })
                    .collect()
            })
            .collect();
        Ok(ModuleGrid {
            shape,
            norm_mode,
            seed,
            layers,
            heads: Vec::new(),
            tasks: Vec::new(),
            frozen_blocks: BTreeSet::new(),
            frozen_tasks: BTreeSet::new(),
            version: 0,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Total output neurons, the sum of all registered class counts.
    pub fn total_classes(&self) -> usize {
        self.tasks.last().map_or(0, |t| t.end)
    }

    pub fn tasks(&self) -> &[TaskEntry] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskEntry> {
        self.tasks
            .get(id)
            .ok_or_else(|| Error::input(format!("task {id} is not registered")))
    }

    pub fn block(&self, layer: usize, module: usize) -> &ModuleBlock {
        &self.layers[layer][module]
    }

    pub fn head(&self, task: TaskId) -> &HeadSlice {
        &self.heads[task]
    }

    /// Adds a task with `classes` output neurons appended to the head. In
    /// per-task mode every block also gains a normalization instance for it.
    pub fn register_task<R: Rng + ?Sized>(
        &mut self,
        classes: usize,
        rng: &mut R,
    ) -> Result<TaskId> {
        if classes < 2 {
            return Err(Error::input(format!(
                "a task needs at least 2 classes, got {classes}"
            )));
        }
        let id = self.tasks.len();
        let start = self.total_classes();
        let d = self.shape.d_hid;
        let bound = 1.0 / (d as f64).sqrt();
        let w = Matrix::from_fn(d, classes, |_, _| rng.random_range(-bound..bound));
        let b = (0..classes)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.heads.push(HeadSlice { w, b });
        self.tasks.push(TaskEntry {
            id,
            classes,
            start,
            end: start + classes,
            path: None,
        });
        if self.norm_mode == NormMode::PerTask {
            for block in self.layers.iter_mut().flatten() {
                block.norms.push(NormInstance::new(d));
            }
        }
        self.version += 1;
        Ok(id)
    }

    pub fn assign_path(&mut self, task: TaskId, path: Path) -> Result<()> {
        self.task(task)?;
        if path.layers() != self.shape.layers {
            return Err(Error::input(format!(
                "path has {} layers, grid has {}",
                path.layers(),
                self.shape.layers
            )));
        }
        if path.max_module() >= self.shape.modules {
            return Err(Error::input(format!(
                "path references module {} but layers hold {}",
                path.max_module(),
                self.shape.modules
            )));
        }
        self.tasks[task].path = Some(path);
        self.version += 1;
        Ok(())
    }

    pub fn path(&self, task: TaskId) -> Result<&Path> {
        self.task(task)?
            .path
            .as_ref()
            .ok_or_else(|| Error::input(format!("task {task} has no path assigned")))
    }

    pub(crate) fn norm_index(&self, task: TaskId) -> usize {
        match self.norm_mode {
            NormMode::Shared => 0,
            NormMode::PerTask => task,
        }
    }

    pub fn norm_owner(&self, task: TaskId) -> NormOwner {
        match self.norm_mode {
            NormMode::Shared => NormOwner::Shared,
            NormMode::PerTask => NormOwner::Task(task),
        }
    }

    pub fn norm(&self, layer: usize, module: usize, task: TaskId) -> &NormInstance {
        &self.layers[layer][module].norms[self.norm_index(task)]
    }

    // ---------------------------------------------------------------- freezing

    /// Marks every block on `path` frozen (including, in shared mode, its
    /// normalization instance).
    pub fn freeze_path(&mut self, path: &Path) -> Result<()> {
        if path.layers() != self.shape.layers || path.max_module() >= self.shape.modules {
            return Err(Error::input("path does not fit the grid"));
        }
        self.frozen_blocks.extend(path.cells());
        self.version += 1;
        Ok(())
    }

    /// Freezes what a task owns outright: its head slice and, in per-task
    /// mode, its normalization instances.
    pub fn freeze_task(&mut self, task: TaskId) -> Result<()> {
        self.task(task)?;
        self.frozen_tasks.insert(task);
        self.version += 1;
        Ok(())
    }

    pub fn is_frozen(&self, layer: usize, module: usize) -> bool {
        self.frozen_blocks.contains(&(layer, module))
    }

    pub fn is_task_frozen(&self, task: TaskId) -> bool {
        self.frozen_tasks.contains(&task)
    }

    pub fn frozen_blocks(&self) -> &BTreeSet<(usize, usize)> {
        &self.frozen_blocks
    }

    pub fn frozen_tasks(&self) -> &BTreeSet<TaskId> {
        &self.frozen_tasks
    }

    /// Whether the normalization instance `task` uses in block
    /// `(layer, module)` may still change.
    pub fn norm_trainable(&self, layer: usize, module: usize, task: TaskId) -> bool {
        match self.norm_mode {
            NormMode::Shared => !self.is_frozen(layer, module),
            NormMode::PerTask => !self.is_task_frozen(task),
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        match id {
            ParamId::BlockWeight { layer, module } | ParamId::BlockBias { layer, module } => {
                !self.is_frozen(layer, module)
            }
            ParamId::NormScale {
                layer,
                module,
                owner,
            }
            | ParamId::NormShift {
                layer,
                module,
                owner,
            } => match owner {
                NormOwner::Shared => !self.is_frozen(layer, module),
                NormOwner::Task(t) => !self.is_task_frozen(t),
            },
            ParamId::HeadWeight(t) | ParamId::HeadBias(t) => !self.is_task_frozen(t),
        }
    }

    // -------------------------------------------------------------- parameters

    fn norm_slot(&self, owner: NormOwner) -> Result<usize> {
        match (self.norm_mode, owner) {
            (NormMode::Shared, NormOwner::Shared) => Ok(0),
            (NormMode::PerTask, NormOwner::Task(t)) if t < self.tasks.len() => Ok(t),
            _ => Err(Error::input(format!(
                "no norm instance for {owner:?} in {:?} mode",
                self.norm_mode
            ))),
        }
    }

    fn check_cell(&self, layer: usize, module: usize) -> Result<()> {
        if layer >= self.shape.layers || module >= self.shape.modules {
            return Err(Error::input(format!(
                "cell ({layer}, {module}) outside grid"
            )));
        }
        Ok(())
    }

    pub fn param(&self, id: ParamId) -> Result<&[f64]> {
        Ok(match id {
            ParamId::BlockWeight { layer, module } => {
                self.check_cell(layer, module)?;
                self.layers[layer][module].w.as_slice()
            }
            ParamId::BlockBias { layer, module } => {
                self.check_cell(layer, module)?;
                &self.layers[layer][module].b
            }
            ParamId::NormScale {
                layer,
                module,
                owner,
            } => {
                self.check_cell(layer, module)?;
                &self.layers[layer][module].norms[self.norm_slot(owner)?].gamma
            }
            ParamId::NormShift {
                layer,
                module,
                owner,
            } => {
                self.check_cell(layer, module)?;
                &self.layers[layer][module].norms[self.norm_slot(owner)?].beta
            }
            ParamId::HeadWeight(t) => {
                self.task(t)?;
                self.heads[t].w.as_slice()
            }
            ParamId::HeadBias(t) => {
                self.task(t)?;
                &self.heads[t].b
            }
        })
    }

    /// Mutable access to one tensor. Invalidates outstanding tapes.
    pub fn param_mut(&mut self, id: ParamId) -> Result<&mut [f64]> {
        self.param(id)?;
        self.version += 1;
        Ok(match id {
            ParamId::BlockWeight { layer, module } => self.layers[layer][module].w.as_mut_slice(),
            ParamId::BlockBias { layer, module } => &mut self.layers[layer][module].b,
            ParamId::NormScale {
                layer,
                module,
                owner,
            } => {
                let s = self.norm_slot(owner)?;
                &mut self.layers[layer][module].norms[s].gamma
            }
            ParamId::NormShift {
                layer,
                module,
                owner,
            } => {
                let s = self.norm_slot(owner)?;
                &mut self.layers[layer][module].norms[s].beta
            }
            ParamId::HeadWeight(t) => self.heads[t].w.as_mut_slice(),
            ParamId::HeadBias(t) => &mut self.heads[t].b,
        })
    }

    /// Every trainable tensor id in canonical order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for layer in 0..self.shape.layers {
            for module in 0..self.shape.modules {
                ids.push(ParamId::BlockWeight { layer, module });
                ids.push(ParamId::BlockBias { layer, module });
                let owners: Vec<NormOwner> = match self.norm_mode {
                    NormMode::Shared => vec![NormOwner::Shared],
                    NormMode::PerTask => (0..self.tasks.len()).map(NormOwner::Task).collect(),
                };
                for owner in owners {
                    ids.push(ParamId::NormScale {
                        layer,
                        module,
                        owner,
                    });
                    ids.push(ParamId::NormShift {
                        layer,
                        module,
                        owner,
                    });
                }
            }
        }
        for t in 0..self.tasks.len() {
            ids.push(ParamId::HeadWeight(t));
            ids.push(ParamId::HeadBias(t));
        }
        ids
    }

    /// The full `d_hid × C_total` output weight matrix.
    pub fn head_weights(&self) -> Matrix {
        let total = self.total_classes();
        let mut out = Matrix::zeros(self.shape.d_hid, total);
        for (task, head) in self.tasks.iter().zip(&self.heads) {
            for r in 0..self.shape.d_hid {
                out.row_mut(r)[task.start..task.end].copy_from_slice(head.w.row(r));
            }
        }
        out
    }

    pub fn head_bias(&self) -> Vec<f64> {
        self.heads
            .iter()
            .flat_map(|h| h.b.iter().copied())
            .collect()
    }

    /// SHA-256 over a block's weights, bias and (in shared mode) its
    /// normalization parameters and running statistics.
    pub fn block_digest(&self, layer: usize, module: usize) -> String {
        let block = &self.layers[layer][module];
        let mut h = Sha256::new();
        feed(&mut h, block.w.as_slice());
        feed(&mut h, &block.b);
        if self.norm_mode == NormMode::Shared {
            feed_norm(&mut h, &block.norms[0]);
        }
        hex::encode(h.finalize())
    }

    /// SHA-256 over what a task owns: its head slice and, in per-task mode,
    /// its normalization instances in every block.
    pub fn task_digest(&self, task: TaskId) -> String {
        let mut h = Sha256::new();
        feed(&mut h, self.heads[task].w.as_slice());
        feed(&mut h, &self.heads[task].b);
        if self.norm_mode == NormMode::PerTask {
            for block in self.layers.iter().flatten() {
                feed_norm(&mut h, &block.norms[task]);
            }
        }
        hex::encode(h.finalize())
    }
}

fn feed(h: &mut Sha256, values: &[f64]) {
    for v in values {
        h.update(v.to_le_bytes());
    }
}

fn feed_norm(h: &mut Sha256, n: &NormInstance) {
    feed(h, &n.gamma);
    feed(h, &n.beta);
    feed(h, &n.run_mean);
    feed(h, &n.run_var);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> GridShape {
        GridShape {
            layers: 3,
            modules: 4,
            d_in: 5,
            d_hid: 6,
        }
    }

    #[test]
    fn slices_are_cumulative_class_counts() {
        let mut g = ModuleGrid::new(shape(), NormMode::Shared, 0).unwrap();
        let mut r = rng::stream(0, 9);
        for _ in 0..3 {
            g.register_task(10, &mut r).unwrap();
        }
        assert_eq!(g.task(1).unwrap().slice(), 10..20);
        assert_eq!(g.total_classes(), 30);

        let mut g = ModuleGrid::new(shape(), NormMode::Shared, 0).unwrap();
        g.register_task(4, &mut r).unwrap();
        assert_eq!(g.task(0).unwrap().slice(), 0..4);
        assert_eq!(g.total_classes(), 4);
        assert_eq!(g.head_weights().shape(), (6, 4));
        assert!(g.register_task(1, &mut r).is_err());
    }

    #[test]
    fn per_task_mode_adds_one_norm_per_task() {
        let mut g = ModuleGrid::new(shape(), NormMode::PerTask, 0).unwrap();
        let mut r = rng::stream(0, 9);
        for _ in 0..5 {
            g.register_task(3, &mut r).unwrap();
        }
        for block in g.layers.iter().flatten() {
            assert_eq!(block.norm_count(), 5);
            assert!(block.norms.iter().all(|n| n.width() == 6));
        }
        let shared = ModuleGrid::new(shape(), NormMode::Shared, 0).unwrap();
        assert!(shared.layers.iter().flatten().all(|b| b.norm_count() == 1));
    }

    #[test]
    fn layer_zero_takes_input_width() {
        let g = ModuleGrid::new(shape(), NormMode::Shared, 0).unwrap();
        assert_eq!(g.block(0, 0).w.shape(), (5, 6));
        assert_eq!(g.block(2, 3).w.shape(), (6, 6));
        assert_eq!(
            g.layers.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![4, 4, 4]
        );
    }

    #[test]
    fn nothing_frozen_after_construction() {
        let g = ModuleGrid::new(shape(), NormMode::Shared, 0).unwrap();
        for l in 0..3 {
            for m in 0..4 {
                assert!(!g.is_frozen(l, m));
            }
        }
    }

    #[test]
    fn freezing_marks_path_cells() {
        let mut g = ModuleGrid::new(shape(), NormMode::Shared, 0).unwrap();
        let p = Path::new(vec![vec![0, 1], vec![1, 2], vec![0, 3]]).unwrap();
        g.freeze_path(&p).unwrap();
        assert!(g.is_frozen(0, 0) && g.is_frozen(1, 2) && g.is_frozen(2, 3));
        assert!(!g.is_frozen(0, 2));
        assert!(!g.is_trainable(ParamId::NormScale {
            layer: 0,
            module: 0,
            owner: NormOwner::Shared
        }));
        assert!(g.is_trainable(ParamId::NormScale {
            layer: 0,
            module: 3,
            owner: NormOwner::Shared
        }));
    }

    #[test]
    fn same_seed_same_grid() {
        let a = ModuleGrid::new(shape(), NormMode::PerTask, 42).unwrap();
        let b = ModuleGrid::new(shape(), NormMode::PerTask, 42).unwrap();
        let c = ModuleGrid::new(shape(), NormMode::PerTask, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
