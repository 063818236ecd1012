//! Power laws of rays near their exit point: x(τ), y(τ) − ȳ, ξ(τ), the shape
//! y − ȳ against x, and the scaling of exit times with apex height.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate_to_boundary, FlowOptions, PhasePoint, TailSample, Trajectory, TrajectoryStatus};
use crate::error::{GeoError, Result};
use crate::fit::{fit_loglog, LogLogFit};
use crate::metric::GasGiantMetric;

/// Fit window in time-to-exit τ.
pub const TAU_WINDOW: (f64, f64) = (1e-6, 1e-3);

/// c_α = (1 − α/2)^{2/(2−α)}, the prefactor of x ≈ c_α τ^{2/(2−α)}.
pub fn c_alpha(alpha: f64) -> f64 {
    (1.0 - alpha / 2.0).powf(2.0 / (2.0 - alpha))
}

/// The closed form α^{−1}((2−α)/2)^{(2+α)/(2−α)} quoted for the y-prefactor.
pub fn c_alpha_prime_quoted(alpha: f64) -> f64 {
    ((2.0 - alpha) / 2.0).powf((2.0 + alpha) / (2.0 - alpha)) / alpha
}

/// The y-prefactor implied by integrating ẏ = x^α h^{-1}η against x ≈ c_α τ^{2/(2−α)}:
/// c_α^α (2−α)/(2+α).
pub fn c_alpha_prime_derived(alpha: f64) -> f64 {
    c_alpha(alpha).powf(alpha) * (2.0 - alpha) / (2.0 + alpha)
}

/// Prefactor of ξ ≈ −C τ^{−α/(2−α)} implied by ẋ = x^α ξ: C = c_α^{−α/2}.
pub fn xi_prefactor_derived(alpha: f64) -> f64 {
    c_alpha(alpha).powf(-alpha / 2.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub alpha: f64,
    pub x_fit: LogLogFit,
    pub y_fit: LogLogFit,
    pub xi_fit: LogLogFit,
    pub c_alpha_fit: f64,
    pub c_alpha_expected: f64,
    /// Fitted |y − ȳ| prefactor divided by |v̄|.
    pub c_alpha_prime_fit: f64,
    pub c_alpha_prime_quoted: f64,
    pub c_alpha_prime_derived: f64,
    pub xi_prefactor_fit: f64,
    pub xi_prefactor_derived: f64,
    pub samples: usize,
}

fn window(traj: &Trajectory) -> Result<Vec<&TailSample>> {
    if traj.status != TrajectoryStatus::Exited {
        return Err(GeoError::InvalidParameter("trajectory has not exited".into()));
    }
    let pts: Vec<_> = traj.tail_fine.iter().filter(|s| s.tau >= TAU_WINDOW.0 && s.tau <= TAU_WINDOW.1).collect();
    if pts.len() < 4 {
        return Err(GeoError::InsufficientData(format!("{} samples in the fit window", pts.len())));
    }
    Ok(pts)
}

fn y_offsets(metric: &GasGiantMetric, traj: &Trajectory, pts: &[&TailSample]) -> Result<(Vec<f64>, f64)> {
    let exit = traj.exit.as_ref().unwrap();
    let h0 = metric.h_jet(0.0, &exit.y_bar).h;
    let vb = DVector::from_column_slice(&exit.v_bar);
    let vnorm = vb.dot(&(&h0 * &vb)).sqrt();
    if !(vnorm > 1e-12) {
        return Err(GeoError::Degenerate("exit direction is normal; no tangential drift to fit".into()));
    }
    let d = pts
        .iter()
        .map(|p| {
            let dy = DVector::from_column_slice(&p.dy);
            dy.dot(&(&h0 * &dy)).sqrt()
        })
        .collect();
    Ok((d, vnorm))
}

/// Log-log fits of x, |y − ȳ|_{h₀} and −ξ against τ over the window τ ∈ [1e-6, 1e-3].
pub fn expansion_fit(metric: &GasGiantMetric, traj: &Trajectory) -> Result<ExpansionFit> {
    let alpha = metric.alpha;
    let pts = window(traj)?;
    let tau: Vec<f64> = pts.iter().map(|s| s.tau).collect();
    let xs: Vec<f64> = pts.iter().map(|s| s.x).collect();
    let xis: Vec<f64> = pts.iter().map(|s| -s.xi).collect();
    let (dy, vnorm) = y_offsets(metric, traj, &pts)?;
    let x_fit = fit_loglog(&tau, &xs, 2.0 / (2.0 - alpha), 0.01)?;
    let y_fit = fit_loglog(&tau, &dy, (2.0 + alpha) / (2.0 - alpha), 0.01)?;
    let xi_fit = fit_loglog(&tau, &xis, -alpha / (2.0 - alpha), 0.01)?;
    Ok(ExpansionFit {
        alpha,
        c_alpha_fit: x_fit.prefactor(),
        c_alpha_expected: c_alpha(alpha),
        c_alpha_prime_fit: y_fit.prefactor() / vnorm,
        c_alpha_prime_quoted: c_alpha_prime_quoted(alpha),
        c_alpha_prime_derived: c_alpha_prime_derived(alpha),
        xi_prefactor_fit: xi_fit.prefactor(),
        xi_prefactor_derived: xi_prefactor_derived(alpha),
        x_fit,
        y_fit,
        xi_fit,
        samples: pts.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeFit {
    pub fit: LogLogFit,
    /// Prefactor c″ of y − ȳ ≈ c″ x^{(2+α)/2} v̄.
    pub c_alpha_second: f64,
}

/// Fits |y − ȳ|_{h₀} against x near the exit; the expected exponent is (2+α)/2.
pub fn geodesic_shape_exponent(metric: &GasGiantMetric, traj: &Trajectory) -> Result<ShapeFit> {
    let pts = window(traj)?;
    let xs: Vec<f64> = pts.iter().map(|s| s.x).collect();
    let (dy, vnorm) = y_offsets(metric, traj, &pts)?;
    let fit = fit_loglog(&xs, &dy, (2.0 + metric.alpha) / 2.0, 0.01)?;
    Ok(ShapeFit { c_alpha_second: fit.prefactor() / vnorm, fit })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitTimeScaling {
    pub x0: Vec<f64>,
    pub exit_times: Vec<f64>,
    pub fit: LogLogFit,
    pub prefactor: f64,
}

/// Exit times from apex starts on the ladder x₀ = 2^{-k}; the slope of log T against
/// log x₀ is expected to be 1 − α/2.
pub fn exit_time_scaling(metric: &GasGiantMetric, y0: &[f64], eta_dir: &[f64], ks: std::ops::RangeInclusive<i32>) -> Result<ExitTimeScaling> {
    let x0: Vec<f64> = ks.map(|k| 2f64.powi(-k)).collect();
    let times = x0
        .par_iter()
        .map(|&x| {
            let p = PhasePoint::apex(metric, x, y0, eta_dir)?;
            let tr = integrate_to_boundary(metric, &p, &FlowOptions::quiet())?;
            tr.exit_time().ok_or_else(|| GeoError::NoConvergence(format!("apex start at x0 = {x} did not exit ({:?})", tr.status)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let fit = fit_loglog(&x0, &times, 1.0 - metric.alpha / 2.0, 0.01)?;
    Ok(ExitTimeScaling { prefactor: fit.prefactor(), x0, exit_times: times, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apex_traj(alpha: f64, x0: f64) -> (GasGiantMetric, Trajectory) {
        let m = GasGiantMetric::model(alpha).unwrap();
        let p = PhasePoint::apex(&m, x0, &[0.0], &[1.0]).unwrap();
        let tr = integrate_to_boundary(&m, &p, &FlowOptions::default()).unwrap();
        (m, tr)
    }

    #[test]
    fn constants_at_alpha_one() {
        assert!((c_alpha(1.0) - 0.25).abs() < 1e-15);
        assert!((c_alpha_prime_quoted(1.0) - 0.125).abs() < 1e-15);
        assert!((c_alpha(0.5) - 0.75f64.powf(4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn model_tail_follows_the_cycloid_expansion() {
        // Cycloid: x = τ²/4, y − ȳ = p τ³/12, ξ = −2/τ.
        let (m, tr) = apex_traj(1.0, 0.5);
        let f = expansion_fit(&m, &tr).unwrap();
        assert!((f.x_fit.slope - 2.0).abs() < 1e-4);
        assert!((f.c_alpha_fit - 0.25).abs() < 1e-4);
        assert!((f.y_fit.slope - 3.0).abs() < 1e-4);
        assert!((f.c_alpha_prime_fit - 1.0 / 12.0).abs() < 1e-4);
        assert!((f.xi_prefactor_fit - 2.0).abs() < 1e-3);
    }

    #[test]
    fn exponents_for_half_alpha() {
        let (m, tr) = apex_traj(0.5, 0.3);
        let f = expansion_fit(&m, &tr).unwrap();
        assert!((f.x_fit.slope - 4.0 / 3.0).abs() < 0.01);
        assert!((f.c_alpha_fit / c_alpha(0.5) - 1.0).abs() < 0.01);
        assert!((f.c_alpha_prime_fit / c_alpha_prime_derived(0.5) - 1.0).abs() < 0.01);
    }

    #[test]
    fn shape_exponent_and_universal_prefactor() {
        let (m, a) = apex_traj(1.0, 0.5);
        let (_, b) = apex_traj(1.0, 0.1);
        let sa = geodesic_shape_exponent(&m, &a).unwrap();
        let sb = geodesic_shape_exponent(&m, &b).unwrap();
        assert!((sa.fit.slope - 1.5).abs() < 0.01);
        assert!((sa.c_alpha_second / sb.c_alpha_second - 1.0).abs() < 0.01);
        let (m, c) = apex_traj(0.5, 0.5);
        assert!((geodesic_shape_exponent(&m, &c).unwrap().fit.slope - 1.25).abs() < 0.01);
    }

    #[test]
    fn exit_time_slope_and_model_prefactor() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let s = exit_time_scaling(&m, &[0.0], &[1.0], 4..=16).unwrap();
        assert!((s.fit.slope - 0.5).abs() < 1e-6);
        assert!((s.prefactor / std::f64::consts::PI - 1.0).abs() < 1e-6);
    }
}
