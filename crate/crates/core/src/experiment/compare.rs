use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::RunReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub task: usize,
    pub a: f64,
    pub b: f64,
    /// `b − a`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub mode_a: String,
    pub mode_b: String,
    pub rows: Vec<CompareRow>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_delta: f64,
}

impl std::fmt::Display for CompareTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:>6} {:>12} {:>12} {:>9}",
            "task", self.mode_a, self.mode_b, "delta"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>6} {:>12.4} {:>12.4} {:>+9.4}",
                r.task, r.a, r.b, r.delta
            )?;
        }
        write!(
            f,
            "{:>6} {:>12.4} {:>12.4} {:>+9.4}",
            "mean", self.mean_a, self.mean_b, self.mean_delta
        )
    }
}

/// Per-task final accuracy differences `b − a`. Both reports must cover
/// the same tasks with the same class counts.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<CompareTable> {
    if a.tasks != b.tasks {
        return Err(Error::input("reports cover different task lists"));
    }
    let rows: Vec<CompareRow> = a
        .final_acc
        .iter()
        .zip(&b.final_acc)
        .map(|(x, y)| CompareRow {
            task: x.task,
            a: x.val_acc,
            b: y.val_acc,
            delta: y.val_acc - x.val_acc,
        })
        .collect();
    let mean_a = a.mean_final_accuracy();
    let mean_b = b.mean_final_accuracy();
    Ok(CompareTable {
        mode_a: a.mode.to_string(),
        mode_b: b.mode.to_string(),
        rows,
        mean_a,
        mean_b,
        mean_delta: mean_b - mean_a,
    })
}
