use std::collections::BTreeMap;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PathAssignment, TaskSource};
use crate::analysis::{
    binomial_expected_count, capture_balanced, layerwise_cka_report, sharing_profile, CkaReport,
    Kernel, SharingProfile,
};
use crate::data::{
    gen_synthetic_task, load_csv, oversample_to_equal, standardize, write_csv, Dataset,
};
use crate::error::{Error, Result};
use crate::modular_net::{
    assign_random_path, build_controlled_paths, load_checkpoint, parse_setup_label,
    save_checkpoint, ModuleGrid, Path,
};
use crate::rng;
use crate::training::{
    train_parallel, train_sequential, train_single, validate, FinalAccuracy, RunReport, TaskData,
    TrainMode,
};

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn raw_splits(cfg: &ExperimentConfig) -> Result<Vec<(Dataset, Dataset)>> {
    cfg.tasks
        .iter()
        .enumerate()
        .map(|(t, task)| match task {
            TaskSource::Synthetic {
                classes,
                n_per_class,
                margin,
            } => {
                let (mut train, mut val) = gen_synthetic_task(
                    &mut rng::data_stream(cfg.seed, t),
                    *classes,
                    *n_per_class,
                    cfg.grid.d_in,
                    *margin,
                )?;
                train.name = format!("task{t}/train");
                val.name = format!("task{t}/val");
                Ok((train, val))
            }
            TaskSource::Csv {
                train,
                val,
                classes,
            } => {
                let (train, val) = (load_csv(train)?, load_csv(val)?);
                for ds in [&train, &val] {
                    if ds.classes() != *classes {
                        return Err(Error::config(
                            format!("tasks[{t}].classes"),
                            format!(
                                "{} has {} classes, config says {classes}",
                                ds.name,
                                ds.classes()
                            ),
                        ));
                    }
                    if ds.dims() != cfg.grid.d_in {
                        return Err(Error::config(
                            "grid.d_in",
                            format!(
                                "{} has {} features, grid expects {}",
                                ds.name,
                                ds.dims(),
                                cfg.grid.d_in
                            ),
                        ));
                    }
                }
                Ok((train, val))
            }
        })
        .collect()
}

/// Loads or synthesizes every task, standardizes each with its own training
/// statistics, and oversamples the training sets to a common size.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Vec<TaskData>> {
    let splits = raw_splits(cfg)?
        .iter()
        .map(|(train, val)| standardize(train, val))
        .collect::<Result<Vec<_>>>()?;
    let trains: Vec<Dataset> = splits.iter().map(|(t, _)| t.clone()).collect();
    let trains = oversample_to_equal(&trains, &mut rng::stream(cfg.seed, rng::STREAM_OVERSAMPLE))?;
    Ok(trains
        .into_iter()
        .zip(splits)
        .map(|(train, (_, val))| TaskData { train, val })
        .collect())
}

fn assign_paths(cfg: &ExperimentConfig) -> Result<Vec<Path>> {
    let g = &cfg.grid;
    match &cfg.paths {
        PathAssignment::Random => {
            let mut r = rng::stream(cfg.seed, rng::STREAM_PATHS);
            (0..cfg.tasks.len())
                .map(|_| assign_random_path(g.modules, g.path_width, g.layers, &mut r))
                .collect()
        }
        PathAssignment::Controlled { setup } => {
            let (a, b) = build_controlled_paths(
                g.layers,
                g.modules,
                g.path_width,
                &parse_setup_label(setup)?,
            )?;
            Ok(vec![a, b])
        }
    }
}

/// A freshly initialized grid with every configured task registered on its path.
pub fn build_grid(cfg: &ExperimentConfig) -> Result<ModuleGrid> {
    let mut grid = ModuleGrid::new(cfg.grid.shape(), cfg.norm_mode, cfg.seed)?;
    let mut heads = rng::stream(cfg.seed, rng::STREAM_HEADS);
    for (task, path) in cfg.tasks.iter().zip(assign_paths(cfg)?) {
        let id = grid.register_task(task.classes(), &mut heads)?;
        grid.assign_path(id, path)?;
    }
    Ok(grid)
}

pub struct RunOutcome {
    pub report: RunReport,
    pub grid: ModuleGrid,
    pub data: Vec<TaskData>,
}

/// Trains according to `cfg.mode`. The report carries the experiment hash.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let mut grid = build_grid(cfg)?;
    let tc = cfg.train_config();
    let mut report = match cfg.mode {
        TrainMode::Parallel => train_parallel(&mut grid, &data, &tc)?,
        TrainMode::Sequential => train_sequential(&mut grid, &data, &tc)?,
        TrainMode::Single => train_single(&mut grid, &data, cfg.single_task, &tc)?,
    };
    report.config_hash = cfg.hash()?;
    Ok(RunOutcome { report, grid, data })
}

fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs and writes `report.json`, `model.ckpt` and, when configured, the
/// analysis artifacts under `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &FsPath) -> Result<RunOutcome> {
    let outcome = run(cfg)?;
    fs::create_dir_all(out)?;
    write_json(&out.join(REPORT_FILE), &outcome.report)?;
    save_checkpoint(&outcome.grid, out.join(CHECKPOINT_FILE))?;
    if cfg.analysis.is_some() {
        let analysis = analyze_grid(cfg, &outcome.grid, &outcome.data)?;
        analysis.write(&out.join("analysis"))?;
    }
    Ok(outcome)
}

fn check_matches(cfg: &ExperimentConfig, grid: &ModuleGrid) -> Result<()> {
    let classes: Vec<usize> = grid.tasks().iter().map(|t| t.classes).collect();
    let expected: Vec<usize> = cfg.tasks.iter().map(TaskSource::classes).collect();
    if grid.shape() != cfg.grid.shape() || classes != expected || grid.norm_mode() != cfg.norm_mode
    {
        return Err(Error::input(format!(
            "checkpoint (shape {:?}, classes {classes:?}, {:?} norms) does not match the config",
            grid.shape(),
            grid.norm_mode()
        )));
    }
    Ok(())
}

/// Validation accuracy of every task of a saved model.
pub fn evaluate(ckpt: &FsPath, cfg: &ExperimentConfig) -> Result<Vec<FinalAccuracy>> {
    let grid = load_checkpoint(ckpt)?;
    check_matches(cfg, &grid)?;
    let data = prepare_data(cfg)?;
    data.iter()
        .enumerate()
        .map(|(task, d)| {
            Ok(FinalAccuracy {
                task,
                val_acc: validate(&grid, task, &d.val)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub cka: CkaReport,
    pub sharing: SharingProfile,
}

impl AnalysisOutput {
    /// `cka_report.json`, `sharing.json` and one `heatmap_layer{l}.csv`
    /// per layer (1-based) under `dir`.
    pub fn write(&self, dir: &FsPath) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = vec![dir.join("cka_report.json"), dir.join("sharing.json")];
        write_json(&written[0], &self.cka)?;
        write_json(&written[1], &self.sharing)?;
        for layer in &self.cka.layers {
            let p = dir.join(format!("heatmap_layer{}.csv", layer.layer + 1));
            fs::write(&p, layer.heatmap_csv()?)?;
            written.push(p);
        }
        Ok(written)
    }
}

fn setup_label(cfg: &ExperimentConfig) -> String {
    match &cfg.paths {
        PathAssignment::Random => "random".into(),
        PathAssignment::Controlled { setup } => setup.clone(),
    }
}

fn analyze_grid(
    cfg: &ExperimentConfig,
    grid: &ModuleGrid,
    data: &[TaskData],
) -> Result<AnalysisOutput> {
    let a = cfg
        .analysis
        .clone()
        .unwrap_or(super::config::AnalysisConfig {
            kernel: Kernel::default(),
            samples: 100,
            tasks: [0, 1],
            sharing_trials: 0,
        });
    let [ta, tb] = a.tasks;
    if ta >= data.len() || tb >= data.len() {
        return Err(Error::config(
            "analysis.tasks",
            "needs two tasks present in the config",
        ));
    }
    let sa = capture_balanced(grid, ta, &data[ta].val, a.samples)?;
    let sb = capture_balanced(grid, tb, &data[tb].val, a.samples)?;
    let cka = layerwise_cka_report(&setup_label(cfg), &sa, &sb, a.kernel)?;
    let paths: Vec<Path> = grid
        .tasks()
        .iter()
        .map(|t| grid.path(t.id).cloned())
        .collect::<Result<_>>()?;
    let sharing = sharing_profile(&paths, cfg.grid.modules, cfg.grid.layers)?;
    Ok(AnalysisOutput { cka, sharing })
}

/// CKA and sharing analysis of a saved model on the config's data.
pub fn analyze(ckpt: &FsPath, cfg: &ExperimentConfig) -> Result<AnalysisOutput> {
    let grid = load_checkpoint(ckpt)?;
    check_matches(cfg, &grid)?;
    let data = prepare_data(cfg)?;
    analyze_grid(cfg, &grid, &data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingOutput {
    /// Profile of the config's own path assignment.
    pub profile: SharingProfile,
    /// Closed-form expectation per usage count under random paths.
    pub expected: BTreeMap<usize, f64>,
    /// Mean histogram over `trials` fresh random assignments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical_mean: Option<BTreeMap<usize, f64>>,
    pub trials: usize,
}

pub fn profile_sharing(cfg: &ExperimentConfig) -> Result<SharingOutput> {
    let g = &cfg.grid;
    let k = cfg.tasks.len();
    let profile = sharing_profile(&assign_paths(cfg)?, g.modules, g.layers)?;
    let expected = (0..=k)
        .map(|t| {
            (
                t,
                binomial_expected_count(g.layers, g.modules, g.path_width, k, t),
            )
        })
        .collect();
    let trials = cfg.analysis.as_ref().map_or(0, |a| a.sharing_trials);
    let empirical_mean = (trials > 0)
        .then(|| -> Result<BTreeMap<usize, f64>> {
            let mut r = rng::stream(cfg.seed, rng::STREAM_PATHS);
            let mut sums: BTreeMap<usize, f64> = (0..=k).map(|t| (t, 0.0)).collect();
            for _ in 0..trials {
                let paths = (0..k)
                    .map(|_| assign_random_path(g.modules, g.path_width, g.layers, &mut r))
                    .collect::<Result<Vec<_>>>()?;
                for (t, c) in sharing_profile(&paths, g.modules, g.layers)?.histogram {
                    *sums.get_mut(&t).expect("all t present") += c as f64;
                }
            }
            Ok(sums
                .into_iter()
                .map(|(t, s)| (t, s / trials as f64))
                .collect())
        })
        .transpose()?;
    Ok(SharingOutput {
        profile,
        expected,
        empirical_mean,
        trials,
    })
}

/// Writes each task's raw (unstandardized) splits as
/// `task{t}_train.csv` / `task{t}_val.csv` under `dir`.
pub fn gen_data(cfg: &ExperimentConfig, dir: &FsPath) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (t, (train, val)) in raw_splits(cfg)?.iter().enumerate() {
        for (split, ds) in [("train", train), ("val", val)] {
            let p = dir.join(format!("task{t}_{split}.csv"));
            write_csv(ds, &p)?;
            written.push(p);
        }
    }
    Ok(written)
}
