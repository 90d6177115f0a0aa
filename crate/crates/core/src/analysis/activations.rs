use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::modular_net::{Mode, ModuleGrid, TaskId};
use crate::numerics::Matrix;

/// One task's representation of a sample set at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSet {
    pub task: TaskId,
    pub layer: usize,
    /// Summed layer output `h_l`, `n × d_hid`.
    pub rep: Matrix,
    /// `(module, output)` for each module on the task's path at this layer.
    pub modules: Vec<(usize, Matrix)>,
}

/// Eval-mode activations of `task` on `x`, one set per layer. The labels
/// must be balanced: class counts may differ by at most one.
pub fn capture_activations(
    grid: &ModuleGrid,
    task: TaskId,
    x: &Matrix,
    labels: &[usize],
) -> Result<Vec<ActivationSet>> {
    let classes = grid.task(task)?.classes;
    if labels.len() != x.rows() {
        return Err(Error::input(format!(
            "{} labels for {} samples",
            labels.len(),
            x.rows()
        )));
    }
    let mut counts = vec![0usize; classes];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::input(format!("label {y} outside {classes} classes")))? += 1;
    }
    let (lo, hi) = (
        counts.iter().min().copied().unwrap_or(0),
        counts.iter().max().copied().unwrap_or(0),
    );
    if hi - lo > 1 {
        return Err(Error::input(format!(
            "sample is not class-balanced: counts {counts:?}"
        )));
    }
    let tape = grid.forward(task, x, Mode::Eval)?;
    Ok(tape
        .layers
        .into_iter()
        .enumerate()
        .map(|(layer, lt)| ActivationSet {
            task,
            layer,
            rep: lt.output,
            modules: lt
                .modules
                .into_iter()
                .map(|mt| (mt.module, mt.output))
                .collect(),
        })
        .collect())
}

/// Captures activations on exactly `n` class-balanced samples of `ds`.
pub fn capture_balanced(
    grid: &ModuleGrid,
    task: TaskId,
    ds: &Dataset,
    n: usize,
) -> Result<Vec<ActivationSet>> {
    let (x, y) = ds.balanced_sample(n)?;
    capture_activations(grid, task, &x, &y)
}
