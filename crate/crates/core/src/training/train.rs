use std::collections::BTreeMap;
use std::time::Instant;

use super::config::TrainConfig;
use super::report::{
    EpochRecord, FinalAccuracy, FreezeEvent, RunReport, TaskEpoch, TaskInfo, TrainMode,
};
use super::scheduler::EpochScheduler;
use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::modular_net::{Gradients, Mode, ModuleGrid, ParamId, TaskId};
use crate::numerics::{softmax_xent_slice, AdamState, Matrix};
use crate::rng;

/// Training and validation split of one registered task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub val: Dataset,
}

/// One Adam state per parameter tensor, created on first update. Tasks that
/// share a block share its moments.
#[derive(Clone, Debug, Default)]
pub struct Optimizer {
    states: BTreeMap<ParamId, AdamState>,
}

impl Optimizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState> {
        self.states.get(&id)
    }

    /// Applies `grads` to every tensor that is still trainable.
    pub fn apply(&mut self, grid: &mut ModuleGrid, grads: &Gradients, lr: f64) -> Result<()> {
        for (&id, g) in grads.iter() {
            if !grid.is_trainable(id) {
                continue;
            }
            let state = self
                .states
                .entry(id)
                .or_insert_with(|| AdamState::new(g.len(), lr));
            state.lr = lr;
            state.update(grid.param_mut(id)?, g)?;
        }
        Ok(())
    }
}

/// Argmax over the task's slice; the lowest index wins ties.
pub fn predict(grid: &ModuleGrid, task: TaskId, x: &Matrix) -> Result<Vec<usize>> {
    let tape = grid.forward(task, x, Mode::Eval)?;
    Ok((0..tape.logits.rows())
        .map(|i| {
            let row = tape.logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Fraction of `val` the task's path classifies correctly, in eval mode.
pub fn validate(grid: &ModuleGrid, task: TaskId, val: &Dataset) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::input("empty validation set"));
    }
    let entry = grid.task(task)?;
    if val.classes() != entry.classes {
        return Err(Error::input(format!(
            "task {task} has {} classes, validation set {}",
            entry.classes,
            val.classes()
        )));
    }
    let pred = predict(grid, task, val.features())?;
    let hits = pred
        .iter()
        .zip(val.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / val.len() as f64)
}

fn check_setup(grid: &ModuleGrid, data: &[TaskData], cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if grid.norm_mode() != cfg.norm_mode {
        return Err(Error::contract(format!(
            "grid uses {:?} normalization, config asks for {:?}",
            grid.norm_mode(),
            cfg.norm_mode
        )));
    }
    if data.len() != grid.tasks().len() {
        return Err(Error::contract(format!(
            "{} datasets for {} registered tasks",
            data.len(),
            grid.tasks().len()
        )));
    }
    for (entry, d) in grid.tasks().iter().zip(data) {
        grid.path(entry.id)?;
        if d.train.classes() != entry.classes || d.val.classes() != entry.classes {
            return Err(Error::contract(format!(
                "task {}: class count mismatch with its data",
                entry.id
            )));
        }
        if d.train.dims() != grid.shape().d_in || d.val.dims() != grid.shape().d_in {
            return Err(Error::contract(format!(
                "task {}: feature width mismatch",
                entry.id
            )));
        }
    }
    Ok(())
}

fn train_batch(
    grid: &mut ModuleGrid,
    opt: &mut Optimizer,
    task: TaskId,
    ds: &Dataset,
    idx: &[usize],
    lr: f64,
) -> Result<f64> {
    let (x, y) = ds.batch(idx);
    let (logits, tape) = grid.forward_task(task, &x, Mode::Train)?;
    let (loss, dlogits) = softmax_xent_slice(&logits, &y, 0, logits.cols())?;
    let grads = grid.backward_task(&tape, &dlogits)?;
    opt.apply(grid, &grads, lr)?;
    Ok(loss)
}

/// State that lives across the epochs of one run.
struct Run<'a> {
    grid: &'a mut ModuleGrid,
    data: &'a [TaskData],
    cfg: &'a TrainConfig,
    opt: Optimizer,
    scheduler: EpochScheduler,
    shuffles: Vec<rng::Rng>,
    plans: Vec<Option<BatchPlan>>,
}

impl<'a> Run<'a> {
    fn new(grid: &'a mut ModuleGrid, data: &'a [TaskData], cfg: &'a TrainConfig) -> Self {
        let k = data.len();
        Run {
            grid,
            data,
            cfg,
            opt: Optimizer::new(),
            scheduler: EpochScheduler::new(
                cfg.batch_set_size,
                rng::stream(cfg.seed, rng::STREAM_SCHEDULER),
            ),
            shuffles: (0..k).map(|t| rng::shuffle_stream(cfg.seed, t)).collect(),
            plans: vec![None; k],
        }
    }

    /// One epoch over `active` tasks; returns the mean training loss of each.
    fn epoch(&mut self, active: &[TaskId], lr: f64) -> Result<BTreeMap<TaskId, f64>> {
        let mut batches = vec![0; active.len()];
        for (slot, &t) in active.iter().enumerate() {
            let shuffle = &mut self.shuffles[t];
            let plan = match &mut self.plans[t] {
                Some(plan) => {
                    plan.reshuffle(shuffle);
                    plan
                }
                none => none.insert(BatchPlan::new(
                    self.data[t].train.len(),
                    self.cfg.batch_size,
                    shuffle,
                )),
            };
            batches[slot] = plan.batches_per_epoch();
        }
        self.scheduler.start_epoch(&batches);
        let mut sums: BTreeMap<TaskId, (f64, usize)> = BTreeMap::new();
        while let Some((slot, count)) = self.scheduler.schedule_round() {
            let t = active[slot];
            let granted = self.plans[t]
                .as_mut()
                .expect("plan built above")
                .next_batches(count);
            for idx in granted {
                let loss = train_batch(self.grid, &mut self.opt, t, &self.data[t].train, &idx, lr)?;
                let e = sums.entry(t).or_default();
                e.0 += loss * idx.len() as f64;
                e.1 += idx.len();
            }
        }
        Ok(sums
            .into_iter()
            .map(|(t, (s, n))| (t, s / n as f64))
            .collect())
    }

    fn record(&self, epoch: usize, lr: f64, losses: &BTreeMap<TaskId, f64>) -> Result<EpochRecord> {
        let per_task = (0..self.data.len())
            .map(|t| {
                Ok(TaskEpoch {
                    loss: losses.get(&t).copied(),
                    val_acc: validate(self.grid, t, &self.data[t].val)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EpochRecord {
            epoch,
            lr,
            per_task,
        })
    }

    fn finish(
        self,
        mode: TrainMode,
        epochs: Vec<EpochRecord>,
        freeze_events: Vec<FreezeEvent>,
        start: Instant,
    ) -> Result<RunReport> {
        let tasks = self
            .grid
            .tasks()
            .iter()
            .map(|e| TaskInfo {
                id: e.id,
                c: e.classes,
                slice: [e.start, e.end],
            })
            .collect();
        let final_acc = (0..self.data.len())
            .map(|t| {
                Ok(FinalAccuracy {
                    task: t,
                    val_acc: validate(self.grid, t, &self.data[t].val)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunReport {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            mode,
            tasks,
            epochs,
            final_acc,
            freeze_events,
            wallclock_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Trains all tasks together: every epoch interleaves batch-sets of
/// randomly chosen tasks until each task's data is used once. Nothing is
/// ever frozen. Training sets must already have equal sizes.
pub fn train_parallel(
    grid: &mut ModuleGrid,
    data: &[TaskData],
    cfg: &TrainConfig,
) -> Result<RunReport> {
    check_setup(grid, data, cfg)?;
    if let Some(d) = data.iter().find(|d| d.train.len() != data[0].train.len()) {
        return Err(Error::contract(format!(
            "parallel training needs equal training-set sizes; {} has {} vs {}",
            d.train.name,
            d.train.len(),
            data[0].train.len()
        )));
    }
    if !grid.frozen_blocks().is_empty() || !grid.frozen_tasks().is_empty() {
        return Err(Error::contract(
            "parallel training on a grid with frozen parameters",
        ));
    }
    let start = Instant::now();
    let active: Vec<TaskId> = (0..data.len()).collect();
    let mut run = Run::new(grid, data, cfg);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let lr = cfg.lr_at(e);
        let losses = run.epoch(&active, lr)?;
        epochs.push(run.record(e, lr, &losses)?);
    }
    run.finish(TrainMode::Parallel, epochs, Vec::new(), start)
}

/// Trains tasks one after another for `cfg.epochs` each. When a task
/// finishes, the blocks on its path, its head slice and its normalization
/// instances freeze. Epoch records are numbered consecutively across tasks.
pub fn train_sequential(
    grid: &mut ModuleGrid,
    data: &[TaskData],
    cfg: &TrainConfig,
) -> Result<RunReport> {
    check_setup(grid, data, cfg)?;
    let start = Instant::now();
    let mut run = Run::new(grid, data, cfg);
    let mut epochs = Vec::new();
    let mut events = Vec::new();
    for t in 0..data.len() {
        for e in 0..cfg.epochs {
            let lr = cfg.lr_at(e);
            let losses = run.epoch(&[t], lr)?;
            epochs.push(run.record(t * cfg.epochs + e, lr, &losses)?);
        }
        let path = run.grid.path(t)?.clone();
        run.grid.freeze_path(&path)?;
        run.grid.freeze_task(t)?;
        events.push(FreezeEvent {
            task: t,
            blocks: path
                .cells()
                .map(|(l, m)| (l, m, run.grid.block_digest(l, m)))
                .collect(),
            task_digest: run.grid.task_digest(t),
        });
    }
    run.finish(TrainMode::Sequential, epochs, events, start)
}

/// Trains only `task`; every other task's head, norms and off-path blocks
/// keep their initial values. All tasks are still validated.
pub fn train_single(
    grid: &mut ModuleGrid,
    data: &[TaskData],
    task: TaskId,
    cfg: &TrainConfig,
) -> Result<RunReport> {
    check_setup(grid, data, cfg)?;
    grid.task(task)?;
    let start = Instant::now();
    let mut run = Run::new(grid, data, cfg);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let lr = cfg.lr_at(e);
        let losses = run.epoch(&[task], lr)?;
        epochs.push(run.record(e, lr, &losses)?);
    }
    run.finish(TrainMode::Single, epochs, Vec::new(), start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_task, oversample_to_equal, standardize};
    use crate::modular_net::{assign_random_path, GridShape, NormMode, Path};

    fn cfg(epochs: usize, mode: NormMode) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            batch_set_size: 3,
            lr0: 0.01,
            lr_halve_epochs: vec![],
            seed: 5,
            norm_mode: mode,
        }
    }

    fn shape() -> GridShape {
        GridShape {
            layers: 2,
            modules: 4,
            d_in: 6,
            d_hid: 8,
        }
    }

    fn task_data(seed: u64, t: usize, classes: usize, n: usize, margin: f64) -> TaskData {
        let (tr, va) = gen_synthetic_task(
            &mut rng::data_stream(seed, t),
            classes,
            n,
            shape().d_in,
            margin,
        )
        .unwrap();
        let (train, val) = standardize(&tr, &va).unwrap();
        TaskData { train, val }
    }

    fn setup(
        paths: &[Path],
        classes: &[usize],
        mode: NormMode,
        margin: f64,
    ) -> (ModuleGrid, Vec<TaskData>) {
        let mut grid = ModuleGrid::new(shape(), mode, 5).unwrap();
        let mut init = rng::stream(5, rng::STREAM_INIT + 100);
        let mut data = Vec::new();
        for (t, (p, &c)) in paths.iter().zip(classes).enumerate() {
            let id = grid.register_task(c, &mut init).unwrap();
            grid.assign_path(id, p.clone()).unwrap();
            data.push(task_data(5, t, c, 60, margin));
        }
        (grid, data)
    }

    fn disjoint() -> Vec<Path> {
        vec![
            Path::new(vec![vec![0, 1], vec![0, 1]]).unwrap(),
            Path::new(vec![vec![2, 3], vec![2, 3]]).unwrap(),
        ]
    }

    #[test]
    fn validate_uses_lowest_index_on_ties() {
        let (mut grid, data) = setup(&disjoint()[..1], &[3], NormMode::Shared, 3.0);
        for id in [ParamId::HeadWeight(0), ParamId::HeadBias(0)] {
            grid.param_mut(id)
                .unwrap()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let acc = validate(&grid, 0, &data[0].val).unwrap();
        let zeros = data[0].val.labels().iter().filter(|&&y| y == 0).count();
        assert_eq!(acc, zeros as f64 / data[0].val.len() as f64);
    }

    #[test]
    fn validate_matches_a_per_sample_loop() {
        let (grid, data) = setup(&disjoint()[..1], &[3], NormMode::Shared, 3.0);
        let val = &data[0].val;
        let mut hits = 0;
        for i in 0..val.len() {
            let (x, y) = val.batch(&[i]);
            let logits = grid.forward(0, &x, Mode::Eval).unwrap().logits;
            let row = logits.row(0);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hits += usize::from(best == y[0]);
        }
        let acc = validate(&grid, 0, val).unwrap();
        assert!((acc - hits as f64 / val.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn empty_batches_are_rejected() {
        let (grid, _) = setup(&disjoint()[..1], &[3], NormMode::Shared, 3.0);
        assert!(predict(&grid, 0, &Matrix::zeros(0, 6)).is_err());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let (mut grid, data) = setup(&disjoint()[..1], &[3], NormMode::Shared, 3.0);
        // slice logits forced to the onehot of class 1
        grid.param_mut(ParamId::HeadWeight(0))
            .unwrap()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        grid.param_mut(ParamId::HeadBias(0))
            .unwrap()
            .copy_from_slice(&[0.0, 1.0, 0.0]);
        let x = data[0].val.features().select_rows(&[0, 1, 2]);
        assert_eq!(predict(&grid, 0, &x).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn parallel_with_one_task_equals_single() {
        let paths = &disjoint()[..1];
        let (mut a, data) = setup(paths, &[3], NormMode::Shared, 3.0);
        let mut b = a.clone();
        let ra = train_parallel(&mut a, &data, &cfg(3, NormMode::Shared)).unwrap();
        let rb = train_single(&mut b, &data, 0, &cfg(3, NormMode::Shared)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epochs, rb.epochs);
        assert_eq!(ra.final_acc, rb.final_acc);
    }

    #[test]
    fn separable_disjoint_tasks_learn_in_parallel() {
        let (mut grid, data) = setup(&disjoint(), &[2, 3], NormMode::Shared, 8.0);
        let data = {
            let trains = oversample_to_equal(
                &data.iter().map(|d| d.train.clone()).collect::<Vec<_>>(),
                &mut rng::stream(5, rng::STREAM_OVERSAMPLE),
            )
            .unwrap();
            trains
                .into_iter()
                .zip(&data)
                .map(|(train, d)| TaskData {
                    train,
                    val: d.val.clone(),
                })
                .collect::<Vec<_>>()
        };
        let report = train_parallel(&mut grid, &data, &cfg(30, NormMode::Shared)).unwrap();
        for f in &report.final_acc {
            assert!(f.val_acc >= 0.95, "{report:?}");
        }
        assert!(grid.frozen_blocks().is_empty());
    }

    #[test]
    fn parallel_refuses_unequal_sizes_and_mode_mismatch() {
        let (mut grid, mut data) = setup(&disjoint(), &[2, 2], NormMode::Shared, 3.0);
        data[1] = task_data(9, 1, 2, 40, 3.0);
        assert!(matches!(
            train_parallel(&mut grid, &data, &cfg(1, NormMode::Shared)),
            Err(Error::Contract(_))
        ));
        let (mut grid, data) = setup(&disjoint(), &[2, 2], NormMode::Shared, 3.0);
        assert!(matches!(
            train_parallel(&mut grid, &data, &cfg(1, NormMode::PerTask)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sequential_on_disjoint_paths_matches_independent_runs() {
        let (grid0, data) = setup(&disjoint(), &[2, 3], NormMode::Shared, 3.0);
        let c = cfg(4, NormMode::Shared);
        let mut seq = grid0.clone();
        let report = train_sequential(&mut seq, &data, &c).unwrap();
        for t in 0..2 {
            let mut single = grid0.clone();
            let r = train_single(&mut single, &data, t, &c).unwrap();
            assert_eq!(r.final_acc[t], report.final_acc[t]);
            assert_eq!(single.task_digest(t), seq.task_digest(t));
        }
    }

    #[test]
    fn sequential_freezing_holds_and_only_grows() {
        let shared = Path::new(vec![vec![0, 1], vec![1, 2]]).unwrap();
        let (mut grid, data) = setup(&[shared.clone(), shared], &[2, 3], NormMode::PerTask, 3.0);
        let before = grid.block_digest(0, 0);
        let report = train_sequential(&mut grid, &data, &cfg(3, NormMode::PerTask)).unwrap();
        assert_eq!(report.freeze_events.len(), 2);
        let first: Vec<_> = report.freeze_events[0].blocks.clone();
        assert_ne!(first[0].2, before);
        // identical paths: the second task can only move its head and norms
        assert_eq!(report.freeze_events[1].blocks, first);
        for (l, m, digest) in &first {
            assert_eq!(&grid.block_digest(*l, *m), digest);
        }
        assert_eq!(grid.task_digest(0), report.freeze_events[0].task_digest);
        assert!(report.epochs[3].per_task[1].loss.is_some());
        assert!(report.epochs[3].per_task[0].loss.is_none());
    }

    #[test]
    fn single_leaves_other_tasks_untouched() {
        let (mut grid, data) = setup(&disjoint(), &[2, 3], NormMode::PerTask, 3.0);
        let other = grid.task_digest(1);
        let blocks: Vec<_> = disjoint()[1]
            .cells()
            .map(|(l, m)| grid.block_digest(l, m))
            .collect();
        train_single(&mut grid, &data, 0, &cfg(2, NormMode::PerTask)).unwrap();
        assert_eq!(grid.task_digest(1), other);
        let after: Vec<_> = disjoint()[1]
            .cells()
            .map(|(l, m)| grid.block_digest(l, m))
            .collect();
        assert_eq!(blocks, after);
    }

    #[test]
    fn zero_epochs_report_initial_accuracy() {
        let (mut grid, data) = setup(&disjoint(), &[2, 2], NormMode::Shared, 3.0);
        let before = grid.clone();
        let report = train_parallel(&mut grid, &data, &cfg(0, NormMode::Shared)).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(grid, before);
        assert_eq!(report.final_acc.len(), 2);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut r = rng::stream(1, 0);
        let paths: Vec<Path> = (0..3)
            .map(|_| assign_random_path(4, 2, 2, &mut r).unwrap())
            .collect();
        let (grid, data) = setup(&paths, &[2, 3, 4], NormMode::PerTask, 2.0);
        let data: Vec<TaskData> = {
            let trains = oversample_to_equal(
                &data.iter().map(|d| d.train.clone()).collect::<Vec<_>>(),
                &mut rng::stream(1, rng::STREAM_OVERSAMPLE),
            )
            .unwrap();
            trains
                .into_iter()
                .zip(&data)
                .map(|(train, d)| TaskData {
                    train,
                    val: d.val.clone(),
                })
                .collect()
        };
        let c = cfg(3, NormMode::PerTask);
        let (mut a, mut b) = (grid.clone(), grid);
        let ra = train_parallel(&mut a, &data, &c).unwrap();
        let rb = train_parallel(&mut b, &data, &c).unwrap();
        assert_eq!(ra.without_wallclock(), rb.without_wallclock());
        assert_eq!(a, b);
        for e in &ra.epochs {
            for t in &e.per_task {
                assert!((0.0..=1.0).contains(&t.val_acc));
            }
        }
    }
}
