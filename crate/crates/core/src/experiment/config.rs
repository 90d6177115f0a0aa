use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::Kernel;
use crate::error::{Error, Result};
use crate::modular_net::{parse_setup_label, GridShape, NormMode};
use crate::training::{TrainConfig, TrainMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub layers: usize,
    pub modules: usize,
    /// Modules per layer on each task's path.
    pub path_width: usize,
    pub d_in: usize,
    pub d_hid: usize,
}

impl GridConfig {
    pub fn shape(&self) -> GridShape {
        GridShape {
            layers: self.layers,
            modules: self.modules,
            d_in: self.d_in,
            d_hid: self.d_hid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub batch_set_size: usize,
    pub lr0: f64,
    #[serde(default)]
    pub lr_halve_epochs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSource {
    /// Gaussian clusters in `d_in` dimensions.
    Synthetic {
        classes: usize,
        n_per_class: usize,
        margin: f64,
    },
    Csv {
        train: PathBuf,
        val: PathBuf,
        classes: usize,
    },
}

impl TaskSource {
    pub fn classes(&self) -> usize {
        match self {
            TaskSource::Synthetic { classes, .. } | TaskSource::Csv { classes, .. } => *classes,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathAssignment {
    /// Independent uniform path per task.
    #[default]
    Random,
    /// Two tasks sharing modules `0..N` exactly at the layers named by a
    /// label like `"layer 123"` or `"no layer"`.
    Controlled { setup: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub kernel: Kernel,
    /// Class-balanced validation samples per task.
    pub samples: usize,
    #[serde(default = "default_pair")]
    pub tasks: [usize; 2],
    /// Random path assignments to average in `profile-sharing`.
    #[serde(default)]
    pub sharing_trials: usize,
}

fn default_pair() -> [usize; 2] {
    [0, 1]
}

/// A complete, self-contained description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: TrainMode,
    pub norm_mode: NormMode,
    pub grid: GridConfig,
    pub train: TrainSettings,
    pub tasks: Vec<TaskSource>,
    #[serde(default)]
    pub paths: PathAssignment,
    /// Task trained in `single` mode.
    #[serde(default)]
    pub single_task: usize,
    /// When present, `run` also writes CKA and sharing artifacts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
    /// Artifact directory; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn field(name: &str, msg: impl Into<String>) -> Error {
    Error::config(name, msg)
}

impl ExperimentConfig {
    /// Parses and validates a config file. Relative CSV paths resolve
    /// against the config file's directory.
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| field("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(FsPath::new("."));
        for task in &mut cfg.tasks {
            if let TaskSource::Csv { train, val, .. } = task {
                for p in [train, val] {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| field("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.layers == 0 {
            return Err(field("grid.layers", "must be at least 1"));
        }
        if g.modules == 0 {
            return Err(field("grid.modules", "must be at least 1"));
        }
        if g.path_width == 0 || g.path_width > g.modules {
            return Err(field(
                "grid.path_width",
                format!(
                    "must lie in 1..={} (grid.modules), got {}",
                    g.modules, g.path_width
                ),
            ));
        }
        if g.d_in == 0 {
            return Err(field("grid.d_in", "must be positive"));
        }
        if g.d_hid == 0 {
            return Err(field("grid.d_hid", "must be positive"));
        }
        self.train_config().validate().map_err(|e| match e {
            Error::Config { field: f, msg } => field(&format!("train.{f}"), msg),
            other => other,
        })?;
        if self.tasks.is_empty() {
            return Err(field("tasks", "at least one task is required"));
        }
        for (t, task) in self.tasks.iter().enumerate() {
            let name = |f: &str| format!("tasks[{t}].{f}");
            if task.classes() < 2 {
                return Err(field(&name("classes"), "must be at least 2"));
            }
            match task {
                TaskSource::Synthetic {
                    n_per_class,
                    margin,
                    ..
                } => {
                    if *n_per_class < 5 {
                        return Err(field(&name("n_per_class"), "must be at least 5"));
                    }
                    if !(*margin > 0.0 && margin.is_finite()) {
                        return Err(field(&name("margin"), "must be positive and finite"));
                    }
                    if g.d_in < 2 {
                        return Err(field(
                            "grid.d_in",
                            "synthetic tasks need at least 2 dimensions",
                        ));
                    }
                }
                TaskSource::Csv { train, val, .. } => {
                    for (f, p) in [("train", train), ("val", val)] {
                        if !p.is_file() {
                            return Err(field(&name(f), format!("{} does not exist", p.display())));
                        }
                    }
                }
            }
        }
        if self.mode == TrainMode::Single && self.single_task >= self.tasks.len() {
            return Err(field(
                "single_task",
                format!(
                    "{} is not a task index below {}",
                    self.single_task,
                    self.tasks.len()
                ),
            ));
        }
        if let PathAssignment::Controlled { setup } = &self.paths {
            let layers =
                parse_setup_label(setup).map_err(|e| field("paths.setup", e.to_string()))?;
            if let Some(&l) = layers.iter().find(|&&l| l >= g.layers) {
                return Err(field(
                    "paths.setup",
                    format!("layer {} exceeds grid.layers", l + 1),
                ));
            }
            if self.tasks.len() != 2 {
                return Err(field("paths", "controlled paths need exactly two tasks"));
            }
            if g.modules != 2 * g.path_width {
                return Err(field(
                    "grid.modules",
                    "controlled paths need modules = 2 * path_width",
                ));
            }
        }
        if let Some(a) = &self.analysis {
            if a.samples < 3 {
                return Err(field("analysis.samples", "must be at least 3"));
            }
            if a.tasks.iter().any(|&t| t >= self.tasks.len()) || a.tasks[0] == a.tasks[1] {
                return Err(field("analysis.tasks", "must name two distinct tasks"));
            }
            match a.kernel {
                Kernel::Rbf { frac } if !(frac > 0.0) => {
                    return Err(field("analysis.kernel.frac", "must be positive"));
                }
                Kernel::RbfAbsolute { sigma } if !(sigma > 0.0) => {
                    return Err(field("analysis.kernel.sigma", "must be positive"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            batch_set_size: self.train.batch_set_size,
            lr0: self.train.lr0,
            lr_halve_epochs: self.train.lr_halve_epochs.clone(),
            seed: self.seed,
            norm_mode: self.norm_mode,
        }
    }

    /// SHA-256 over the canonical JSON of every field except `out_dir`,
    /// followed by the contents of any CSV task files.
    pub fn hash(&self) -> Result<String> {
        let canonical = ExperimentConfig {
            out_dir: None,
            ..self.clone()
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical)?);
        for task in &self.tasks {
            if let TaskSource::Csv { train, val, .. } = task {
                for p in [train, val] {
                    h.update(Sha256::digest(fs::read(p)?));
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "seed": 1,
        "mode": "parallel",
        "norm_mode": "shared",
        "grid": {"layers": 2, "modules": 4, "path_width": 2, "d_in": 4, "d_hid": 6},
        "train": {"epochs": 2, "batch_size": 16, "batch_set_size": 2, "lr0": 0.01},
        "tasks": [
            {"kind": "synthetic", "classes": 2, "n_per_class": 20, "margin": 3.0},
            {"kind": "synthetic", "classes": 3, "n_per_class": 20, "margin": 3.0}
        ]
    }"#;

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> Result<ExperimentConfig> {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        edit(&mut v);
        let cfg = ExperimentConfig::parse(&v.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn field_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg = with(|_| {}).unwrap();
        assert_eq!(cfg.paths, PathAssignment::Random);
        assert!(cfg.analysis.is_none());
    }

    #[test]
    fn errors_name_the_offending_field() {
        assert_eq!(
            field_of(with(|v| v["grid"]["path_width"] = 5.into())),
            "grid.path_width"
        );
        assert_eq!(
            field_of(with(|v| v["tasks"][1]["classes"] = 1.into())),
            "tasks[1].classes"
        );
        assert_eq!(
            field_of(with(|v| v["train"]["lr0"] = (-1.0).into())),
            "train.lr0"
        );
        assert_eq!(field_of(with(|v| v["bogus"] = 1.into())), "<document>");
        assert_eq!(
            field_of(with(|v| {
                v["tasks"][0] = serde_json::json!({"kind": "csv", "train": "/nonexistent.csv", "val": "/x.csv", "classes": 2})
            })),
            "tasks[0].train"
        );
        assert_eq!(
            field_of(with(
                |v| v["paths"] = serde_json::json!({"kind": "controlled", "setup": "layer 5"})
            )),
            "paths.setup"
        );
        assert_eq!(
            field_of(with(|v| {
                v["mode"] = "single".into();
                v["single_task"] = 2.into();
            })),
            "single_task"
        );
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = with(|_| {}).unwrap();
        let b = with(|v| v["out_dir"] = "/tmp/elsewhere".into()).unwrap();
        let c = with(|v| v["train"]["epochs"] = 3.into()).unwrap();
        let d = with(|v| v["norm_mode"] = "per-task".into()).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_ne!(a.hash().unwrap(), d.hash().unwrap());
    }
}
