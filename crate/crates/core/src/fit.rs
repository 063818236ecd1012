//! Least-squares line and log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(GeoError::InvalidParameter("x and y lengths differ".into()));
    }
    if x.len() < 2 {
        return Err(GeoError::InsufficientData(format!("{} samples for a line fit", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(GeoError::Degenerate("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LineFit { slope, intercept, rms_residual: rms })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    /// Natural log of the prefactor.
    pub intercept: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub samples: usize,
}

impl LogLogFit {
    pub fn prefactor(&self) -> f64 {
        self.intercept.exp()
    }
}

/// Fits `v ≈ C s^p` on `(ln s, ln v)` and compares `p` with `expected_slope`.
/// Requires at least four samples spanning two decades of `s`.
pub fn fit_loglog(s: &[f64], v: &[f64], expected_slope: f64, tolerance: f64) -> Result<LogLogFit> {
    if s.len() != v.len() {
        return Err(GeoError::InvalidParameter("sample lengths differ".into()));
    }
    if s.len() < 4 {
        return Err(GeoError::InsufficientData(format!("{} samples, need at least 4", s.len())));
    }
    if let Some(bad) = s.iter().chain(v).find(|&&a| !(a > 0.0) || !a.is_finite()) {
        return Err(GeoError::InvalidParameter(format!("non-positive value {bad} in log-log fit")));
    }
    let (lo, hi) = s.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(GeoError::InsufficientData(format!("abscissa spans {:.2} decades, need 2", (hi / lo).log10())));
    }
    let ls: Vec<f64> = s.iter().map(|a| a.ln()).collect();
    let lv: Vec<f64> = v.iter().map(|a| a.ln()).collect();
    let lf = linear_fit(&ls, &lv)?;
    Ok(LogLogFit {
        slope: lf.slope,
        intercept: lf.intercept,
        expected: expected_slope,
        tolerance,
        pass: (lf.slope - expected_slope).abs() <= tolerance,
        samples: s.len(),
    })
}
