//! Central finite-difference checks of analytic parameter gradients.

use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `p` with step `h`.
pub fn central_difference_gradient<F>(mut f: F, p: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut q = p.to_vec();
    let mut g = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let up = f(&q)?;
        q[i] = p[i] - h;
        let down = f(&q)?;
        q[i] = p[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective while perturbing parameter {i}")));
        }
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Compares the analytic gradient returned by `f` against central differences
/// and returns `max_i |g_i - fd_i| / max(1, |g_i|)`.
///
/// `f` maps parameters to `(value, gradient)`.
pub fn fd_check<F>(mut f: F, p: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(p)?;
    if !value.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite value or analytic gradient".into()));
    }
    if analytic.len() != p.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            p.len()
        )));
    }
    let fd = central_difference_gradient(|q| f(q).map(|(v, _)| v), p, step)?;
    Ok(analytic
        .iter()
        .zip(&fd)
        .map(|(a, d)| (a - d).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let err = fd_check(|p| Ok((3.0, vec![0.0; p.len()])), &[1.0, 2.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn quadratic_is_exact() {
        let f = |p: &[f64]| Ok((p[0] * p[0] + 3.0 * p[1], vec![2.0 * p[0], 3.0]));
        let err = fd_check(f, &[0.7, -1.0], 1e-5).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |p: &[f64]| Ok((p[0] * p[0], vec![p[0]]));
        let err = fd_check(f, &[2.0], 1e-5).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn nan_is_reported() {
        let f = |p: &[f64]| Ok((if p[0] > 1.0 { f64::NAN } else { p[0] }, vec![1.0]));
        assert!(matches!(fd_check(f, &[1.0], 1e-3), Err(Error::Numeric(_))));
    }
}
