use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modular_net::Path;

/// How many tasks use each grid cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingProfile {
    pub tasks: usize,
    pub layers: usize,
    pub modules: usize,
    /// `t → number of cells used by exactly t tasks`, for every t in 0..=k.
    pub histogram: BTreeMap<usize, usize>,
    /// The same histogram restricted to each layer.
    pub per_layer: Vec<BTreeMap<usize, usize>>,
    /// `usage[l][m]`: tasks whose path contains cell (l, m).
    pub usage: Vec<Vec<usize>>,
}

pub fn sharing_profile(paths: &[Path], modules: usize, layers: usize) -> Result<SharingProfile> {
    let mut usage = vec![vec![0usize; modules]; layers];
    for (t, p) in paths.iter().enumerate() {
        if p.layers() != layers {
            return Err(Error::input(format!(
                "path {t} has {} layers, grid has {layers}",
                p.layers()
            )));
        }
        if p.max_module() >= modules {
            return Err(Error::input(format!(
                "path {t} selects module {} of a {modules}-wide grid",
                p.max_module()
            )));
        }
        for (l, m) in p.cells() {
            usage[l][m] += 1;
        }
    }
    let k = paths.len();
    let empty: BTreeMap<usize, usize> = (0..=k).map(|t| (t, 0)).collect();
    let mut histogram = empty.clone();
    let mut per_layer = vec![empty; layers];
    for (l, row) in usage.iter().enumerate() {
        for &u in row {
            *histogram.get_mut(&u).expect("usage <= k") += 1;
            *per_layer[l].get_mut(&u).expect("usage <= k") += 1;
        }
    }
    Ok(SharingProfile {
        tasks: k,
        layers,
        modules,
        histogram,
        per_layer,
        usage,
    })
}

/// Expected number of cells used by exactly `t` of `k` independent random
/// paths that each pick `n` of `m` modules per layer:
/// `L·M·C(k,t)·p^t·(1−p)^(k−t)` with `p = n/m`.
pub fn binomial_expected_count(layers: usize, m: usize, n: usize, k: usize, t: usize) -> f64 {
    if t > k {
        return 0.0;
    }
    let p = n as f64 / m as f64;
    let mut choose = 1.0;
    for i in 0..t {
        choose = choose * (k - i) as f64 / (i + 1) as f64;
    }
    (layers * m) as f64 * choose * p.powi(t as i32) * (1.0 - p).powi((k - t) as i32)
}
