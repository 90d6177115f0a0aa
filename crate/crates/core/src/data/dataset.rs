use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Per-feature affine map fitted on a task's training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(features: &Matrix) -> Self {
        let mean = features.column_means();
        let n = features.rows().max(1) as f64;
        let mut var = vec![0.0; features.cols()];
        for i in 0..features.rows() {
            for (v, (x, m)) in var.iter_mut().zip(features.row(i).iter().zip(&mean)) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        Matrix::from_fn(features.rows(), features.cols(), |i, j| {
            (features.get(i, j) - self.mean[j]) / self.std[j]
        })
    }
}

/// A labelled classification dataset with `classes` contiguous labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let name = name.into();
        if labels.len() != features.rows() {
            return Err(Error::input(format!(
                "{name}: {} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if classes < 2 {
            return Err(Error::input(format!("{name}: needs at least 2 classes")));
        }
        if labels.len() < classes {
            return Err(Error::input(format!(
                "{name}: {} samples cannot cover {classes} classes",
                labels.len()
            )));
        }
        let mut seen = vec![false; classes];
        for &y in &labels {
            if y >= classes {
                return Err(Error::input(format!(
                    "{name}: label {y} >= class count {classes}"
                )));
            }
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::input(format!(
                "{name}: class {missing} has no samples"
            )));
        }
        if !features.is_finite() {
            return Err(Error::input(format!("{name}: non-finite feature")));
        }
        Ok(Dataset {
            name,
            features,
            labels,
            classes,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Features and labels of the samples at `idx`.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        let (features, labels) = self.batch(idx);
        Dataset {
            name: self.name.clone(),
            features,
            labels,
            classes: self.classes,
            standardization: self.standardization.clone(),
        }
    }

    /// Class-balanced sample of exactly `n` rows: the first `n / c` (or one
    /// more, for the lowest classes) samples of each class, grouped by class.
    pub fn balanced_sample(&self, n: usize) -> Result<(Matrix, Vec<usize>)> {
        let c = self.classes;
        let counts = self.class_counts();
        let mut idx = Vec::with_capacity(n);
        for (class, &have) in counts.iter().enumerate() {
            let want = n / c + usize::from(class < n % c);
            if have < want {
                return Err(Error::input(format!(
                    "{}: class {class} has {have} samples, {want} needed for a balanced sample of {n}",
                    self.name
                )));
            }
            idx.extend(
                self.labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &y)| y == class)
                    .map(|(i, _)| i)
                    .take(want),
            );
        }
        Ok(self.batch(&idx))
    }
}

/// Standardizes both splits with statistics fitted on `train`; the fitted
/// map is stored on both returned datasets.
pub fn standardize(train: &Dataset, val: &Dataset) -> Result<(Dataset, Dataset)> {
    if train.dims() != val.dims() {
        return Err(Error::input("train and val widths differ"));
    }
    let s = Standardization::fit(&train.features);
    let apply = |ds: &Dataset| Dataset {
        name: ds.name.clone(),
        features: s.apply(&ds.features),
        labels: ds.labels.clone(),
        classes: ds.classes,
        standardization: Some(s.clone()),
    };
    Ok((apply(train), apply(val)))
}

/// Pads every dataset to the size of the largest by resampling its own
/// samples uniformly with replacement. Originals stay as a prefix.
pub fn oversample_to_equal<R: Rng + ?Sized>(
    datasets: &[Dataset],
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    if let Some(ds) = datasets.iter().find(|d| d.is_empty()) {
        return Err(Error::input(format!("{}: empty dataset", ds.name)));
    }
    let target = datasets.iter().map(Dataset::len).max().unwrap_or(0);
    Ok(datasets
        .iter()
        .map(|ds| {
            let n = ds.len();
            if n == target {
                return ds.clone();
            }
            let idx: Vec<usize> = (0..n)
                .chain((n..target).map(|_| rng.random_range(0..n)))
                .collect();
            ds.subset(&idx)
        })
        .collect())
}
