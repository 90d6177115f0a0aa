use crate::error::{Error, Result};

/// `|a - g| / max(|a|, |g|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference gradient of `f` at `params` with step `h`.
pub fn central_difference(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite evaluation while probing parameter {i}"
            )));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Largest elementwise [`relative_error`] between `analytic_grad` and the
/// central-difference gradient of `f`.
pub fn finite_diff_check(
    f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic_grad: &[f64],
    h: f64,
) -> Result<f64> {
    if params.len() != analytic_grad.len() {
        return Err(Error::contract(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic_grad.len()
        )));
    }
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::input(format!("step {h} outside [1e-6, 1e-4]")));
    }
    let numeric = central_difference(f, params, h)?;
    Ok(analytic_grad
        .iter()
        .zip(&numeric)
        .map(|(&a, &g)| relative_error(a, g))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let err = finite_diff_check(|w| w[0] * w[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let f = |w: &[f64]| w[0].sin() * w[1] + w[1] * w[1];
        let p = [0.7f64, -1.3];
        let exact = [p[0].cos() * p[1], p[0].sin() + 2.0 * p[1]];
        assert!(finite_diff_check(f, &p, &exact, 1e-5).unwrap() < 1e-8);
        let bad = [exact[0] * 1.1, exact[1] * 1.1];
        assert!(finite_diff_check(f, &p, &bad, 1e-5).unwrap() > 0.05);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let r = finite_diff_check(|w| (w[0]).ln(), &[0.0], &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn step_outside_range_is_rejected() {
        assert!(finite_diff_check(|w| w[0], &[0.0], &[1.0], 1e-2).is_err());
    }
}
