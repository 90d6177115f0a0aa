use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer module selection of one task: `L` rows of `N` strictly
/// increasing module indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct Path {
    selection: Vec<Vec<usize>>,
}

impl Path {
    pub fn new(selection: Vec<Vec<usize>>) -> Result<Self> {
        let width = selection
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::input("path needs at least one layer"))?;
        if width == 0 {
            return Err(Error::input("path rows must select at least one module"));
        }
        for (l, row) in selection.iter().enumerate() {
            if row.len() != width {
                return Err(Error::input(format!(
                    "path layer {l} selects {} modules, expected {width}",
                    row.len()
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::input(format!(
                    "path layer {l} is not strictly increasing: {row:?}"
                )));
            }
        }
        Ok(Path { selection })
    }

    pub fn layers(&self) -> usize {
        self.selection.len()
    }

    /// Modules selected per layer (`N`).
    pub fn width(&self) -> usize {
        self.selection[0].len()
    }

    pub fn layer(&self, l: usize) -> &[usize] {
        &self.selection[l]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.selection
    }

    pub fn contains(&self, layer: usize, module: usize) -> bool {
        self.selection
            .get(layer)
            .is_some_and(|row| row.binary_search(&module).is_ok())
    }

    /// Largest module index referenced, for range checks against `M`.
    pub fn max_module(&self) -> usize {
        self.selection
            .iter()
            .filter_map(|r| r.last())
            .copied()
            .max()
            .unwrap_or(0)
    }

    /// `(layer, module)` cells on the path, layer-major.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.selection
            .iter()
            .enumerate()
            .flat_map(|(l, row)| row.iter().map(move |&m| (l, m)))
    }
}

impl TryFrom<Vec<Vec<usize>>> for Path {
    type Error = Error;
    fn try_from(v: Vec<Vec<usize>>) -> Result<Self> {
        Path::new(v)
    }
}

impl From<Path> for Vec<Vec<usize>> {
    fn from(p: Path) -> Self {
        p.selection
    }
}

/// Draws, independently for each of `layers` layers, a uniform `n`-subset of
/// the `m` modules.
pub fn assign_random_path<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    layers: usize,
    rng: &mut R,
) -> Result<Path> {
    if n == 0 || n > m {
        return Err(Error::input(format!("need 1 <= N <= M, got N={n}, M={m}")));
    }
    if layers == 0 {
        return Err(Error::input("need at least one layer"));
    }
    let selection = (0..layers)
        .map(|_| {
            let mut row = rand::seq::index::sample(rng, m, n).into_vec();
            row.sort_unstable();
            row
        })
        .collect();
    Path::new(selection)
}

/// Two hand-built paths for controlled sharing experiments. In every layer
/// of `shared_layers` both tasks use modules `0..n`; elsewhere task A uses
/// `0..n` and task B uses `n..2n`.
pub fn build_controlled_paths(
    layers: usize,
    m: usize,
    n: usize,
    shared_layers: &BTreeSet<usize>,
) -> Result<(Path, Path)> {
    if n == 0 || m != 2 * n {
        return Err(Error::input(format!(
            "controlled paths need M = 2N, got M={m}, N={n}"
        )));
    }
    if let Some(&bad) = shared_layers.iter().find(|&&l| l >= layers) {
        return Err(Error::input(format!(
            "shared layer {bad} out of range 0..{layers}"
        )));
    }
    let low: Vec<usize> = (0..n).collect();
    let high: Vec<usize> = (n..m).collect();
    let a = vec![low.clone(); layers];
    let b = (0..layers)
        .map(|l| {
            if shared_layers.contains(&l) {
                low.clone()
            } else {
                high.clone()
            }
        })
        .collect();
    Ok((Path::new(a)?, Path::new(b)?))
}

/// Parses setup labels such as `"no layer"`, `"layer 3"` or `"layer 123"`
/// into zero-based layer indices. Digits are one-based layer numbers.
pub fn parse_setup_label(label: &str) -> Result<BTreeSet<usize>> {
    let label = label.trim();
    if label.eq_ignore_ascii_case("no layer") {
        return Ok(BTreeSet::new());
    }
    let digits = label
        .strip_prefix("layer")
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .ok_or_else(|| Error::input(format!("unrecognized setup label {label:?}")))?;
    digits
        .chars()
        .map(|c| match c.to_digit(10) {
            Some(d) if d >= 1 => Ok(d as usize - 1),
            _ => Err(Error::input(format!("bad layer digit {c:?} in {label:?}"))),
        })
        .collect()
}
