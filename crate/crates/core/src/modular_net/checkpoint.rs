//! Binary checkpoint of a [`ModuleGrid`].
//!
//! Layout (little-endian):
//!
//! ```text
//! "PART"            4 bytes magic
//! version           u32
//! meta_len          u64
//! meta              meta_len bytes of JSON (CheckpointMeta)
//! blob              f64 values, canonical order:
//!                     for each layer, for each module:
//!                       W (row-major), b,
//!                       norm instances in task-id order (one in shared mode):
//!                         gamma, beta, run_mean, run_var
//!                     head_W (d_hid × C_total, row-major), head_b
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::grid::{
    GridShape, HeadSlice, ModuleBlock, ModuleGrid, NormInstance, NormMode, TaskEntry, TaskId,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PART";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub shape: GridShape,
    pub norm_mode: NormMode,
    pub norm_momentum: f64,
    pub seed: u64,
    pub tasks: Vec<TaskEntry>,
    pub frozen_blocks: Vec<(usize, usize)>,
    pub frozen_tasks: Vec<TaskId>,
    pub param_count: usize,
}

fn norms_per_block(grid: &ModuleGrid) -> usize {
    match grid.norm_mode {
        NormMode::Shared => 1,
        NormMode::PerTask => grid.tasks.len(),
    }
}

fn param_count(shape: &GridShape, norms: usize, total_classes: usize) -> usize {
    let mut count = 0;
    for l in 0..shape.layers {
        count +=
            shape.modules * (shape.fan_in(l) * shape.d_hid + shape.d_hid + norms * 4 * shape.d_hid);
    }
    count + shape.d_hid * total_classes + total_classes
}

pub fn write_checkpoint<W: Write>(grid: &ModuleGrid, mut w: W) -> Result<()> {
    let momentum = grid
        .layers
        .iter()
        .flatten()
        .flat_map(|b| &b.norms)
        .map(|n| n.momentum)
        .next()
        .unwrap_or(super::NORM_MOMENTUM);
    let meta = CheckpointMeta {
        shape: grid.shape,
        norm_mode: grid.norm_mode,
        norm_momentum: momentum,
        seed: grid.seed,
        tasks: grid.tasks.clone(),
        frozen_blocks: grid.frozen_blocks.iter().copied().collect(),
        frozen_tasks: grid.frozen_tasks.iter().copied().collect(),
        param_count: param_count(&grid.shape, norms_per_block(grid), grid.total_classes()),
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&meta_bytes)?;

    let mut put = |values: &[f64]| -> Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    for block in grid.layers.iter().flatten() {
        put(block.w.as_slice())?;
        put(&block.b)?;
        for norm in &block.norms {
            put(&norm.gamma)?;
            put(&norm.beta)?;
            put(&norm.run_mean)?;
            put(&norm.run_var)?;
        }
    }
    put(grid.head_weights().as_slice())?;
    put(&grid.head_bias())?;
    w.flush()?;
    Ok(())
}

struct Blob {
    values: Vec<f64>,
    pos: usize,
}

impl Blob {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.values[self.pos..self.pos + n].to_vec();
        self.pos += n;
        out
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModuleGrid> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let meta_len = u64::from_le_bytes(len) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    meta.shape.validate()?;

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let norms = match meta.norm_mode {
        NormMode::Shared => 1,
        NormMode::PerTask => meta.tasks.len(),
    };
    let total_classes = meta.tasks.last().map_or(0, |t| t.end);
    let expected = param_count(&meta.shape, norms, total_classes);
    if meta.param_count != expected || rest.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter blob holds {} bytes, expected {} values",
            rest.len(),
            expected
        )));
    }
    let mut blob = Blob {
        values: rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        pos: 0,
    };

    let shape = meta.shape;
    let d = shape.d_hid;
    let mut layers = Vec::with_capacity(shape.layers);
    for l in 0..shape.layers {
        let mut row = Vec::with_capacity(shape.modules);
        for _ in 0..shape.modules {
            let w = Matrix::from_vec(shape.fan_in(l), d, blob.take(shape.fan_in(l) * d))?;
            let b = blob.take(d);
            let norms = (0..norms)
                .map(|_| NormInstance {
                    gamma: blob.take(d),
                    beta: blob.take(d),
                    run_mean: blob.take(d),
                    run_var: blob.take(d),
                    momentum: meta.norm_momentum,
                })
                .collect();
            row.push(ModuleBlock { w, b, norms });
        }
        layers.push(row);
    }
    let head_w = Matrix::from_vec(d, total_classes, blob.take(d * total_classes))?;
    let head_b = blob.take(total_classes);

    let mut start = 0;
    let mut heads = Vec::with_capacity(meta.tasks.len());
    for (i, t) in meta.tasks.iter().enumerate() {
        if t.id != i || t.start != start || t.end != start + t.classes || t.classes < 2 {
            return Err(Error::Checkpoint(format!(
                "inconsistent task registry entry {i}"
            )));
        }
        if let Some(p) = &t.path {
            if p.layers() != shape.layers || p.max_module() >= shape.modules {
                return Err(Error::Checkpoint(format!(
                    "path of task {i} does not fit the grid"
                )));
            }
        }
        heads.push(HeadSlice {
            w: head_w.select_cols(t.start, t.end),
            b: head_b[t.start..t.end].to_vec(),
        });
        start = t.end;
    }

    Ok(ModuleGrid {
        shape,
        norm_mode: meta.norm_mode,
        seed: meta.seed,
        layers,
        heads,
        tasks: meta.tasks,
        frozen_blocks: meta.frozen_blocks.into_iter().collect(),
        frozen_tasks: meta.frozen_tasks.into_iter().collect(),
        version: 0,
    })
}

pub fn save_checkpoint(grid: &ModuleGrid, path: impl AsRef<FsPath>) -> Result<()> {
    write_checkpoint(grid, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<FsPath>) -> Result<ModuleGrid> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modular_net::{assign_random_path, Mode};
    use crate::rng;

    fn trained_grid(mode: NormMode) -> ModuleGrid {
        let shape = GridShape {
            layers: 2,
            modules: 3,
            d_in: 4,
            d_hid: 5,
        };
        let mut g = ModuleGrid::new(shape, mode, 17).unwrap();
        let mut r = rng::stream(17, 5);
        for c in [2, 3] {
            let t = g.register_task(c, &mut r).unwrap();
            g.assign_path(t, assign_random_path(3, 2, 2, &mut r).unwrap())
                .unwrap();
        }
        let x = Matrix::from_fn(6, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 1.0);
        g.forward_task(1, &x, Mode::Train).unwrap();
        let p = g.path(0).unwrap().clone();
        g.freeze_path(&p).unwrap();
        g.freeze_task(0).unwrap();
        g
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for mode in [NormMode::Shared, NormMode::PerTask] {
            let g = trained_grid(mode);
            let mut first = Vec::new();
            write_checkpoint(&g, &mut first).unwrap();
            let loaded = read_checkpoint(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_checkpoint(&loaded, &mut second).unwrap();
            assert_eq!(first, second);
            assert_eq!(loaded.layers, g.layers);
            assert_eq!(loaded.heads, g.heads);
            assert_eq!(loaded.tasks, g.tasks);
            assert!(loaded.is_frozen(0, g.path(0).unwrap().layer(0)[0]));
            assert!(loaded.is_task_frozen(0));
        }
    }

    #[test]
    fn bad_magic_and_version_are_refused() {
        let mut bytes = Vec::new();
        write_checkpoint(&trained_grid(NormMode::Shared), &mut bytes).unwrap();
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(
            read_checkpoint(corrupt.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&99u32.to_le_bytes());
        let err = read_checkpoint(future.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
        bytes.pop();
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
