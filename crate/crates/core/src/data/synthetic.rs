use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Fraction of each class held out for validation.
const VAL_FRACTION: f64 = 0.2;

/// Gaussian-cluster classification task with unit-variance isotropic noise.
///
/// Class means are random directions rescaled so the closest pair sits
/// exactly `margin` noise standard deviations apart. Each class contributes
/// `n_per_class` samples, split 80/20 into train and validation per class.
pub fn gen_synthetic_task<R: Rng + ?Sized>(
    rng: &mut R,
    classes: usize,
    n_per_class: usize,
    dims: usize,
    margin: f64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 || dims < 2 {
        return Err(Error::input(format!(
            "synthetic task needs >= 2 classes and >= 2 dims, got {classes} and {dims}"
        )));
    }
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(Error::input(format!(
            "margin must be positive, got {margin}"
        )));
    }
    if n_per_class < 5 {
        return Err(Error::input(format!(
            "need at least 5 samples per class for an 80/20 split, got {n_per_class}"
        )));
    }

    let means = loop {
        let raw: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dims).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut closest = f64::INFINITY;
        for a in 0..classes {
            for b in a + 1..classes {
                let d2: f64 = raw[a]
                    .iter()
                    .zip(&raw[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                closest = closest.min(d2.sqrt());
            }
        }
        if closest > 1e-9 {
            let s = margin / closest;
            break raw
                .into_iter()
                .map(|m| m.into_iter().map(|v| v * s).collect::<Vec<f64>>())
                .collect::<Vec<_>>();
        }
    };

    let n_val = ((n_per_class as f64 * VAL_FRACTION).round() as usize).max(1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mean) in means.iter().enumerate() {
        for i in 0..n_per_class {
            let x: Vec<f64> = mean
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            if i < n_per_class - n_val {
                train.push((x, class));
            } else {
                val.push((x, class));
            }
        }
    }
    train.shuffle(rng);
    val.shuffle(rng);

    let name = format!("gauss-c{classes}-d{dims}-m{margin}");
    let build = |rows: Vec<(Vec<f64>, usize)>, split: &str| {
        let (xs, ys): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Dataset::new(
            format!("{name}/{split}"),
            Matrix::from_rows(&xs)?,
            ys,
            classes,
        )
    };
    Ok((build(train, "train")?, build(val, "val")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Nearest-class-mean rule fitted on `train`: the linear oracle for
    /// isotropic Gaussian classes.
    fn nearest_mean_accuracy(train: &Dataset, val: &Dataset) -> f64 {
        let c = train.classes();
        let d = train.dims();
        let mut means = vec![vec![0.0; d]; c];
        let counts = train.class_counts();
        for (i, &y) in train.labels().iter().enumerate() {
            for (m, x) in means[y].iter_mut().zip(train.features().row(i)) {
                *m += x / counts[y] as f64;
            }
        }
        let correct = val
            .labels()
            .iter()
            .enumerate()
            .filter(|&(i, &y)| {
                let x = val.features().row(i);
                let pred = (0..c)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                pred == y
            })
            .count();
        correct as f64 / val.len() as f64
    }

    #[test]
    fn wide_margin_is_linearly_separable() {
        let (train, val) = gen_synthetic_task(&mut rng::stream(1, 0), 2, 500, 8, 8.0).unwrap();
        assert!(nearest_mean_accuracy(&train, &val) >= 0.99);
    }

    #[test]
    fn vanishing_margin_is_at_chance() {
        let mut acc = 0.0;
        let runs = 10;
        for seed in 0..runs {
            let (train, val) =
                gen_synthetic_task(&mut rng::stream(seed, 0), 4, 250, 8, 0.01).unwrap();
            acc += nearest_mean_accuracy(&train, &val);
        }
        let acc = acc / runs as f64;
        assert!((acc - 0.25).abs() < 0.05, "mean accuracy {acc}");
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let a = gen_synthetic_task(&mut rng::stream(3, 0), 4, 50, 3, 2.0).unwrap();
        let b = gen_synthetic_task(&mut rng::stream(3, 0), 4, 50, 3, 2.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.class_counts(), vec![40; 4]);
        assert_eq!(a.1.class_counts(), vec![10; 4]);
    }

    #[test]
    fn class_means_respect_margin() {
        let (train, _) = gen_synthetic_task(&mut rng::stream(4, 0), 5, 2000, 4, 3.0).unwrap();
        let counts = train.class_counts();
        let mut means = vec![vec![0.0; 4]; 5];
        for (i, &y) in train.labels().iter().enumerate() {
            for (m, x) in means[y].iter_mut().zip(train.features().row(i)) {
                *m += x / counts[y] as f64;
            }
        }
        for a in 0..5 {
            for b in a + 1..5 {
                let d: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                // empirical means carry ~1/sqrt(1600) noise per coordinate
                assert!(d > 3.0 - 0.3, "classes {a},{b} at {d}");
            }
        }
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        let r = &mut rng::stream(0, 0);
        assert!(gen_synthetic_task(r, 1, 10, 2, 1.0).is_err());
        assert!(gen_synthetic_task(r, 2, 10, 1, 1.0).is_err());
        assert!(gen_synthetic_task(r, 2, 10, 2, 0.0).is_err());
        assert!(gen_synthetic_task(r, 2, 4, 2, 1.0).is_err());
    }
}
