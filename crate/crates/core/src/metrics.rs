//! Error metrics and the one-dimensional Wasserstein distance.

use crate::error::{Error, Result};

fn diff_norm(x0: &[f64], x1: &[f64]) -> Result<f64> {
    if x0.len() != x1.len() {
        return Err(Error::DimensionMismatch(format!(
            "compared tensors have {} and {} entries",
            x0.len(),
            x1.len()
        )));
    }
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `||x0 - x1||_F`.
pub fn abs_err(x0: &[f64], x1: &[f64]) -> Result<f64> {
    diff_norm(x0, x1)
}

/// `||x0 - x1||_F / ||x0||_F`.
pub fn rel_err(x0: &[f64], x1: &[f64]) -> Result<f64> {
    let reference = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(diff_norm(x0, x1)? / reference)
}

fn sorted(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("sample contains NaN".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Wasserstein-`p` distance between two empirical distributions,
/// `(int_0^1 |F_u^-1(q) - F_v^-1(q)|^p dq)^(1/p)`.
///
/// Both quantile functions are step functions, so the integral is summed
/// exactly over the merged breakpoints `i/len(u)` and `j/len(v)`.
pub fn wasserstein_1d(u: &[f64], v: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("Wasserstein order must be >= 1, got {p}")));
    }
    let (u, v) = (sorted(u)?, sorted(v)?);
    let (nu, nv) = (u.len(), v.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut last = 0.0;
    let mut total = 0.0;
    // Compare breakpoints as exact fractions (i+1)/nu vs (j+1)/nv.
    while i < nu && j < nv {
        let (a, b) = ((i + 1) * nv, (j + 1) * nu);
        let next = a.min(b) as f64 / (nu * nv) as f64;
        total += (u[i] - v[j]).abs().powf(p) * (next - last);
        last = next;
        if a <= b {
            i += 1;
        }
        if b <= a {
            j += 1;
        }
    }
    Ok(total.powf(1.0 / p))
}

/// Third central moment of a sample.
pub fn third_central_moment(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    Ok(x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n)
}

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(x: &[f64]) -> Result<f64> {
    let s = sorted(x)?;
    let m = s.len() / 2;
    Ok(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}
