use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Kernel {
    /// `K = X Xᵀ`.
    Linear,
    /// Gaussian kernel with `σ = frac · median pairwise distance` of the
    /// set, the median taken over all `n²` squared distances.
    Rbf { frac: f64 },
    /// Gaussian kernel with a fixed bandwidth.
    RbfAbsolute { sigma: f64 },
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Rbf { frac: 0.5 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn squared_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.set(i, j, s);
            d.set(j, i, s);
        }
    }
    d
}

fn rbf(d: Matrix, sigma_sq: f64) -> Matrix {
    Matrix::from_fn(d.rows(), d.cols(), |i, j| {
        (-d.get(i, j) / (2.0 * sigma_sq)).exp()
    })
}

/// Kernel matrix of the rows of `x`.
pub fn gram(x: &Matrix, kernel: Kernel) -> Result<Matrix> {
    if !x.is_finite() {
        return Err(Error::input("representation has non-finite entries"));
    }
    match kernel {
        Kernel::Linear => x.matmul_t(x),
        Kernel::Rbf { frac } => {
            if !(frac > 0.0) {
                return Err(Error::input(format!(
                    "rbf fraction must be positive, got {frac}"
                )));
            }
            let d = squared_distances(x);
            let med = median(d.as_slice().to_vec());
            if !(med > 0.0) {
                return Err(Error::Numeric(
                    "rbf bandwidth is zero: median pairwise distance vanishes".into(),
                ));
            }
            Ok(rbf(d, frac * frac * med))
        }
        Kernel::RbfAbsolute { sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::input(format!(
                    "rbf sigma must be positive, got {sigma}"
                )));
            }
            Ok(rbf(squared_distances(x), sigma * sigma))
        }
    }
}

fn check_symmetric(k: &Matrix, name: &str) -> Result<()> {
    let n = k.rows();
    if k.cols() != n {
        return Err(Error::input(format!("{name} is not square")));
    }
    let scale = k
        .as_slice()
        .iter()
        .fold(0.0f64, |a, b| a.max(b.abs()))
        .max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (k.get(i, j) - k.get(j, i)).abs() > 1e-10 * scale {
                return Err(Error::input(format!(
                    "{name} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Double-centers a square matrix: `H K H` with `H = I − 11ᵀ/n`.
fn double_center(k: &Matrix) -> Matrix {
    let n = k.rows();
    let row_means: Vec<f64> = (0..n)
        .map(|i| k.row(i).iter().sum::<f64>() / n as f64)
        .collect();
    let col_means = k.column_means();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    Matrix::from_fn(n, n, |i, j| {
        k.get(i, j) - row_means[i] - col_means[j] + grand
    })
}

/// Biased HSIC estimate `tr(K H L H) / (n − 1)²`.
pub fn hsic(k: &Matrix, l: &Matrix) -> Result<f64> {
    let n = k.rows();
    if l.shape() != k.shape() {
        return Err(Error::input(format!(
            "kernel shapes {:?} and {:?} differ",
            k.shape(),
            l.shape()
        )));
    }
    if n < 3 {
        return Err(Error::input(format!(
            "hsic needs at least 3 samples, got {n}"
        )));
    }
    check_symmetric(k, "K")?;
    check_symmetric(l, "L")?;
    let kc = double_center(k);
    // tr(HKH · L) for symmetric L
    let t: f64 = kc
        .as_slice()
        .iter()
        .zip(l.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(t / ((n - 1) * (n - 1)) as f64)
}

/// A double-centered kernel matrix with its self-HSIC, for computing many
/// CKA values against the same representation.
#[derive(Clone, Debug)]
pub(crate) struct CenteredGram {
    kc: Matrix,
    self_hsic: f64,
    /// Magnitude of the uncentered kernel, for the degeneracy test.
    scale: f64,
}

impl CenteredGram {
    pub(crate) fn new(x: &Matrix, kernel: Kernel) -> Result<Self> {
        let n = x.rows();
        if n < 3 {
            return Err(Error::input(format!(
                "cka needs at least 3 samples, got {n}"
            )));
        }
        let k = gram(x, kernel)?;
        let kc = double_center(&k);
        let norm = ((n - 1) * (n - 1)) as f64;
        let self_hsic = kc.frobenius_sq() / norm;
        let scale = k.frobenius_sq() / norm;
        Ok(CenteredGram {
            kc,
            self_hsic,
            scale,
        })
    }

    fn is_degenerate(&self) -> bool {
        !(self.self_hsic > 1e-24 * self.scale.max(f64::MIN_POSITIVE))
    }

    pub(crate) fn cka(&self, other: &CenteredGram) -> Result<f64> {
        if self.kc.rows() != other.kc.rows() {
            return Err(Error::input(format!(
                "cka on {} vs {} samples",
                self.kc.rows(),
                other.kc.rows()
            )));
        }
        if self.is_degenerate() || other.is_degenerate() {
            return Err(Error::Numeric(
                "cka undefined: a representation is constant across samples".into(),
            ));
        }
        let n = self.kc.rows();
        let cross: f64 = self
            .kc
            .as_slice()
            .iter()
            .zip(other.kc.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        Ok(cross / ((n - 1) * (n - 1)) as f64 / (self.self_hsic * other.self_hsic).sqrt())
    }
}

/// Centered kernel alignment `hsic(K, L) / √(hsic(K, K)·hsic(L, L))` of two
/// representations of the same samples. A representation that is constant
/// across samples has zero self-similarity and is an error.
pub fn cka(x: &Matrix, y: &Matrix, kernel: Kernel) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::input(format!(
            "cka on {} vs {} samples",
            x.rows(),
            y.rows()
        )));
    }
    CenteredGram::new(x, kernel)?.cka(&CenteredGram::new(y, kernel)?)
}
