//! Forward and reverse passes over one task's path.
//!
//! Layer `l` computes `h_l = Σ_{m ∈ path[l]} relu(norm(h_{l-1}·W_m + b_m))`
//! and the task's logits are `h_L · W_head[:, slice] + b_head[slice]`.
//!
//! A normalization instance that may still change normalizes with batch
//! statistics in train mode. Frozen instances and every instance in eval
//! mode use their running statistics. In batch-statistics mode the block
//! bias cancels exactly, so it is left out of the centering and its gradient
//! is exactly zero.

use std::collections::BTreeMap;

use super::grid::{ModuleGrid, ParamId, TaskId, NORM_EPS};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of one block on the path.
#[derive(Clone, Debug)]
pub struct ModuleTape {
    pub module: usize,
    /// Normalized pre-activation `x̂`.
    xhat: Matrix,
    inv_std: Vec<f64>,
    batch_stats: bool,
    /// Batch mean of `h·W + b` and biased variance; set when `batch_stats`.
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Block output after the nonlinearity.
    pub output: Matrix,
}

#[derive(Clone, Debug)]
pub struct LayerTape {
    /// Summed layer output `h_l`.
    pub output: Matrix,
    pub modules: Vec<ModuleTape>,
}

/// Everything the reverse pass needs, plus the per-layer and per-module
/// representations used by the analysis tools.
#[derive(Clone, Debug)]
pub struct Tape {
    pub task: TaskId,
    pub mode: Mode,
    version: u64,
    pub input: Matrix,
    pub layers: Vec<LayerTape>,
    /// `n × c` logits of the task's slice.
    pub logits: Matrix,
}

/// Gradients of one task batch. Holds exactly the tensors the batch can
/// influence: blocks on the path, the task's normalization instances on the
/// path, and the task's head slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub task: TaskId,
    pub entries: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Vec<f64>)> {
        self.entries.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flatten()
            .fold(0.0, |a, &b| a.max(b.abs()))
    }
}

impl ModuleGrid {
    /// Side-effect free forward pass of `task` on `x`.
    pub fn forward(&self, task: TaskId, x: &Matrix, mode: Mode) -> Result<Tape> {
        let entry = self.task(task)?;
        let path = self.path(task)?;
        if x.cols() != self.shape.d_in {
            return Err(Error::input(format!(
                "input width {} but grid expects {}",
                x.cols(),
                self.shape.d_in
            )));
        }
        if x.rows() == 0 {
            return Err(Error::input("empty batch"));
        }
        if !x.is_finite() {
            return Err(Error::input("non-finite input"));
        }
        let n = x.rows();
        let d = self.shape.d_hid;
        let slot = self.norm_index(task);

        let mut layers = Vec::with_capacity(self.shape.layers);
        let mut h = x.clone();
        for l in 0..self.shape.layers {
            let mut sum = Matrix::zeros(n, d);
            let mut modules = Vec::with_capacity(path.width());
            for &m in path.layer(l) {
                let block = &self.layers[l][m];
                let norm = &block.norms[slot];
                let batch_stats = mode == Mode::Train && self.norm_trainable(l, m, task);
                let mut z = h.matmul(&block.w)?;

                let (mut batch_mean, mut batch_var) = (Vec::new(), Vec::new());
                let inv_std: Vec<f64>;
                if batch_stats {
                    let mu = z.column_means();
                    let mut var = vec![0.0; d];
                    for i in 0..n {
                        for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                            *v -= mu[j];
                            var[j] += *v * *v;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= n as f64);
                    inv_std = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
                    batch_mean = mu.iter().zip(&block.b).map(|(a, b)| a + b).collect();
                    batch_var = var;
                } else {
                    z.add_row_vector(&block.b);
                    for i in 0..n {
                        for (v, rm) in z.row_mut(i).iter_mut().zip(&norm.run_mean) {
                            *v -= rm;
                        }
                    }
                    inv_std = norm
                        .run_var
                        .iter()
                        .map(|v| 1.0 / (v + NORM_EPS).sqrt())
                        .collect();
                }
                // z now holds the centered pre-activation; scale to x̂
                for i in 0..n {
                    for (v, s) in z.row_mut(i).iter_mut().zip(&inv_std) {
                        *v *= s;
                    }
                }
                let xhat = z;
                let mut out = Matrix::zeros(n, d);
                for i in 0..n {
                    let xr = xhat.row(i);
                    let or = out.row_mut(i);
                    for j in 0..d {
                        let y = norm.gamma[j] * xr[j] + norm.beta[j];
                        or[j] = y.max(0.0);
                    }
                }
                sum.add_assign(&out)?;
                modules.push(ModuleTape {
                    module: m,
                    xhat,
                    inv_std,
                    batch_stats,
                    batch_mean,
                    batch_var,
                    output: out,
                });
            }
            h = sum.clone();
            layers.push(LayerTape {
                output: sum,
                modules,
            });
        }

        let head = &self.heads[task];
        let mut logits = h.matmul(&head.w)?;
        logits.add_row_vector(&head.b);
        debug_assert_eq!(logits.cols(), entry.classes);
        if !logits.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(Tape {
            task,
            mode,
            version: self.version,
            input: x.clone(),
            layers,
            logits,
        })
    }

    /// Forward pass that, in train mode, also folds the batch statistics
    /// into the task's unfrozen normalization instances. Returns the task's
    /// `n × c` logits and the tape for [`ModuleGrid::backward_task`].
    pub fn forward_task(&mut self, task: TaskId, x: &Matrix, mode: Mode) -> Result<(Matrix, Tape)> {
        let mut tape = self.forward(task, x, mode)?;
        if mode == Mode::Train {
            let slot = self.norm_index(task);
            let n = x.rows();
            let mut touched = false;
            for (l, layer) in tape.layers.iter().enumerate() {
                for mt in layer.modules.iter().filter(|mt| mt.batch_stats) {
                    self.layers[l][mt.module].norms[slot].absorb(&mt.batch_mean, &mt.batch_var, n);
                    touched = true;
                }
            }
            if touched {
                self.version += 1;
                tape.version = self.version;
            }
        }
        Ok((tape.logits.clone(), tape))
    }

    /// Reverse pass for the batch recorded in `tape`, given the gradient of
    /// the loss with respect to the task's `n × c` logits.
    pub fn backward_task(&self, tape: &Tape, dlogits: &Matrix) -> Result<Gradients> {
        if tape.version != self.version {
            return Err(Error::contract(format!(
                "stale tape: recorded at grid version {}, grid is at {}",
                tape.version, self.version
            )));
        }
        if dlogits.shape() != tape.logits.shape() {
            return Err(Error::contract(format!(
                "dlogits {:?} vs logits {:?}",
                dlogits.shape(),
                tape.logits.shape()
            )));
        }
        let task = tape.task;
        let n = tape.input.rows();
        let d = self.shape.d_hid;
        let slot = self.norm_index(task);
        let owner = self.norm_owner(task);
        let mut entries = BTreeMap::new();

        let h_last = &tape.layers.last().expect("grid has layers").output;
        let head = &self.heads[task];
        entries.insert(
            ParamId::HeadWeight(task),
            h_last.t_matmul(dlogits)?.into_vec(),
        );
        entries.insert(ParamId::HeadBias(task), dlogits.column_sums());
        let mut dh = dlogits.matmul_t(&head.w)?;

        for l in (0..self.shape.layers).rev() {
            let h_prev = if l == 0 {
                &tape.input
            } else {
                &tape.layers[l - 1].output
            };
            let mut dh_prev = Matrix::zeros(n, h_prev.cols());
            for mt in &tape.layers[l].modules {
                let m = mt.module;
                let block = &self.layers[l][m];
                let norm = &block.norms[slot];

                // through relu and the affine part of the norm
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dxhat = Matrix::zeros(n, d);
                for i in 0..n {
                    let (out, xh, g) = (mt.output.row(i), mt.xhat.row(i), dh.row(i));
                    let dx = dxhat.row_mut(i);
                    for j in 0..d {
                        if out[j] > 0.0 {
                            dgamma[j] += g[j] * xh[j];
                            dbeta[j] += g[j];
                            dx[j] = g[j] * norm.gamma[j];
                        }
                    }
                }

                // through the normalization
                let mut dz = Matrix::zeros(n, d);
                let dbias;
                if mt.batch_stats {
                    let sum_dx = dxhat.column_sums();
                    let mut sum_dx_xhat = vec![0.0; d];
                    for i in 0..n {
                        for ((s, a), b) in
                            sum_dx_xhat.iter_mut().zip(dxhat.row(i)).zip(mt.xhat.row(i))
                        {
                            *s += a * b;
                        }
                    }
                    let nf = n as f64;
                    for i in 0..n {
                        let (dx, xh) = (dxhat.row(i), mt.xhat.row(i));
                        let row = dz.row_mut(i);
                        for j in 0..d {
                            row[j] = mt.inv_std[j] / nf
                                * (nf * dx[j] - sum_dx[j] - xh[j] * sum_dx_xhat[j]);
                        }
                    }
                    dbias = vec![0.0; d];
                } else {
                    for i in 0..n {
                        for ((z, a), s) in
                            dz.row_mut(i).iter_mut().zip(dxhat.row(i)).zip(&mt.inv_std)
                        {
                            *z = a * s;
                        }
                    }
                    dbias = dz.column_sums();
                }

                entries.insert(
                    ParamId::BlockWeight {
                        layer: l,
                        module: m,
                    },
                    h_prev.t_matmul(&dz)?.into_vec(),
                );
                entries.insert(
                    ParamId::BlockBias {
                        layer: l,
                        module: m,
                    },
                    dbias,
                );
                entries.insert(
                    ParamId::NormScale {
                        layer: l,
                        module: m,
                        owner,
                    },
                    dgamma,
                );
                entries.insert(
                    ParamId::NormShift {
                        layer: l,
                        module: m,
                        owner,
                    },
                    dbeta,
                );
                if l > 0 {
                    dh_prev.add_assign(&dz.matmul_t(&block.w)?)?;
                }
            }
            dh = dh_prev;
        }
        Ok(Gradients { task, entries })
    }
}
