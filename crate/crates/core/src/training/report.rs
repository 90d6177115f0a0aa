use serde::{Deserialize, Serialize};

use crate::modular_net::TaskId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Parallel,
    Sequential,
    Single,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Parallel => "parallel",
            TrainMode::Sequential => "sequential",
            TrainMode::Single => "single",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub id: TaskId,
    pub c: usize,
    pub slice: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEpoch {
    /// Mean training loss; `None` when the task was not trained this epoch.
    pub loss: Option<f64>,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub per_task: Vec<TaskEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalAccuracy {
    pub task: TaskId,
    pub val_acc: f64,
}

/// Digests of everything frozen when a sequential task finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeEvent {
    pub task: TaskId,
    /// `(layer, module, sha256)` for each block on the task's path.
    pub blocks: Vec<(usize, usize, String)>,
    pub task_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub mode: TrainMode,
    pub tasks: Vec<TaskInfo>,
    pub epochs: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub final_acc: Vec<FinalAccuracy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freeze_events: Vec<FreezeEvent>,
    pub wallclock_s: f64,
}

impl RunReport {
    pub fn mean_final_accuracy(&self) -> f64 {
        if self.final_acc.is_empty() {
            return 0.0;
        }
        self.final_acc.iter().map(|f| f.val_acc).sum::<f64>() / self.final_acc.len() as f64
    }

    /// Best per-epoch validation accuracy of `task`.
    pub fn best_accuracy(&self, task: TaskId) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.per_task.get(task).map(|t| t.val_acc))
            .reduce(f64::max)
    }

    /// The report with wallclock zeroed, for reproducibility comparisons.
    pub fn without_wallclock(&self) -> RunReport {
        RunReport {
            wallclock_s: 0.0,
            ..self.clone()
        }
    }
}
