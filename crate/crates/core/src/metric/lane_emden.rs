//! Polytrope profiles from the Lane–Emden equation θ'' + (N−1)θ'/r + θ^{n_poly} = 0.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fit::fit_loglog;
use crate::ode::{integrate, locate_event, Control, OdeOptions};
use crate::spline::CubicSpline;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytropeProfile {
    pub n_poly: f64,
    pub dimension: usize,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub dtheta: Vec<f64>,
    /// First zero R of θ.
    pub radius: f64,
    pub dtheta_at_radius: f64,
    /// Boundary order fitted from log c against log(R − r), with c = θ^{1/2}.
    pub alpha_fit: f64,
    #[serde(skip)]
    spline: Option<CubicSpline>,
    /// θ/(R − r) against depth R − r, used close to the surface where θ itself is tiny.
    #[serde(skip)]
    surface: Option<CubicSpline>,
}

/// Depth below which the surface representation is used, relative to R.
const SURFACE_DEPTH: f64 = 1e-2;

impl PolytropeProfile {
    /// Sound speed c(r) = θ(r)^{1/2}, up to a constant factor.
    pub fn sound_speed(&self, r: f64) -> f64 {
        self.theta_at(r).max(0.0).sqrt()
    }

    pub fn theta_at(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, self.radius);
        self.theta_at_depth(self.radius - r)
    }

    /// θ at depth R − r; avoids the cancellation of forming r close to the surface.
    pub fn theta_at_depth(&self, depth: f64) -> f64 {
        let depth = depth.clamp(0.0, self.radius);
        if depth < SURFACE_DEPTH * self.radius {
            if let Some(u) = &self.surface {
                return depth * u.eval(depth);
            }
        }
        match &self.spline {
            Some(s) => s.eval(self.radius - depth),
            None => f64::NAN,
        }
    }

    pub fn sound_speed_at_depth(&self, depth: f64) -> f64 {
        self.theta_at_depth(depth).max(0.0).sqrt()
    }
}

/// Search bound on the radius of the first zero.
pub const RADIUS_BOUND: f64 = 1e3;

fn series_start(n_poly: f64, dim: usize, r: f64) -> (f64, f64) {
    let nn = dim as f64;
    let th = 1.0 - r * r / (2.0 * nn) + n_poly * r.powi(4) / (8.0 * nn * (nn + 2.0));
    let dth = -r / nn + n_poly * r.powi(3) / (2.0 * nn * (nn + 2.0));
    (th, dth)
}

pub fn lane_emden(n_poly: f64, dimension: usize) -> Result<PolytropeProfile> {
    lane_emden_with_grid(n_poly, dimension, 2001)
}

pub fn lane_emden_with_grid(n_poly: f64, dimension: usize, grid: usize) -> Result<PolytropeProfile> {
    if !(n_poly > -1.0) {
        return Err(GeoError::InvalidParameter(format!("polytropic index {n_poly} must exceed -1")));
    }
    if dimension < 1 || grid < 3 {
        return Err(GeoError::InvalidParameter("dimension and grid must be positive".into()));
    }
    let nn = dimension as f64;
    // Odd continuation of θ^n keeps the right-hand side defined past the zero.
    let mut rhs = move |r: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -y[0].signum() * y[0].abs().powf(n_poly) - (nn - 1.0) * y[1] / r;
        true
    };
    let r0 = 1e-3;
    let (t0, d0) = series_start(n_poly, dimension, r0);
    let opts = OdeOptions::with_tol(1e-13, 1e-15);
    let out = integrate(&mut rhs, r0, &[t0, d0], RADIUS_BOUND, &[], &opts, |v| if v.y[0] <= 0.0 { Control::Stop } else { Control::Continue })?;
    if !out.stopped {
        return Err(GeoError::NoConvergence(format!("no zero of θ below r = {RADIUS_BOUND}")));
    }
    let (radius, yr) = locate_event(&mut rhs, out.t_prev, &out.y_prev, out.t, |_, y| y[0], 1e-15)?;
    let radius = radius - yr[0] / yr[1];

    let fit_d: Vec<f64> = (0..16).map(|k| radius * 1e-6 * 10f64.powf(3.0 * k as f64 / 15.0)).collect();
    let mut stops: Vec<f64> = (1..grid - 1).map(|i| radius * i as f64 / (grid - 1) as f64).filter(|&r| r > r0).collect();
    stops.extend(fit_d.iter().map(|d| radius - d));
    let n_fit_end = stops.len();
    let mut recorded: Vec<(usize, f64, f64)> = Vec::new();
    let out2 = integrate(&mut rhs, r0, &[t0, d0], radius, &stops, &opts, |v| {
        for &i in v.stops_hit {
            recorded.push((i, v.y[0], v.y[1]));
        }
        Control::Continue
    })?;
    let mut r = vec![0.0];
    let mut theta = vec![1.0];
    let mut dtheta = vec![0.0];
    let n_grid = n_fit_end - fit_d.len();
    let mut grid_vals: Vec<(f64, f64, f64)> = recorded.iter().filter(|e| e.0 < n_grid).map(|e| (stops[e.0], e.1, e.2)).collect();
    grid_vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (rr, th, dth) in grid_vals {
        r.push(rr);
        theta.push(th);
        dtheta.push(dth);
    }
    r.push(radius);
    theta.push(0.0);
    dtheta.push(out2.y[1]);
    // Inward march in depth from the surface keeps relative accuracy where θ is tiny.
    let slope = -out2.y[1];
    let surf_d: Vec<f64> = (0..=300).map(|k| radius * 1e-10 * (SURFACE_DEPTH * 1e10).powf(k as f64 / 300.0)).collect();
    let depth_rhs = move |d: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -y[0].signum() * y[0].abs().powf(n_poly) + (nn - 1.0) * y[1] / (radius - d);
        true
    };
    let mut surf = vec![(0.0, slope)];
    integrate(depth_rhs, 0.0, &[0.0, slope], *surf_d.last().unwrap(), &surf_d, &OdeOptions::with_tol(1e-13, 1e-300), |v| {
        if !v.stops_hit.is_empty() {
            surf.push((v.t, v.y[0] / v.t));
        }
        Control::Continue
    })?;
    let surface = CubicSpline::new(surf.iter().map(|p| p.0).collect(), surf.iter().map(|p| p.1).collect())?;
    let mut fit_pts: Vec<(f64, f64)> = recorded.iter().filter(|e| e.0 >= n_grid && e.0 < n_fit_end).map(|e| (radius - stops[e.0], e.1)).collect();
    fit_pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let ds: Vec<f64> = fit_pts.iter().map(|p| p.0).collect();
    let cs: Vec<f64> = fit_pts.iter().map(|p| p.1.max(1e-300).sqrt()).collect();
    let fit = fit_loglog(&ds, &cs, 0.5, 0.005)?;
    let spline = CubicSpline::new(r.clone(), theta.clone())?;
    Ok(PolytropeProfile {
        n_poly,
        dimension,
        r,
        theta,
        dtheta,
        radius,
        dtheta_at_radius: out2.y[1],
        alpha_fit: 2.0 * fit.slope,
        spline: Some(spline),
        surface: Some(surface),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_one_is_sinc() {
        let p = lane_emden(1.0, 3).unwrap();
        assert!((p.radius - std::f64::consts::PI).abs() < 1e-10);
        let err = p.r.iter().zip(&p.theta).map(|(&r, &t)| (t - if r == 0.0 { 1.0 } else { r.sin() / r }).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "sup error {err}");
        assert!(p.dtheta_at_radius < 0.0);
        for d in [1e-6f64, 1e-4, 1e-2, 0.1] {
            let exact = d.sin() / (std::f64::consts::PI - d);
            let rel = (p.theta_at(p.radius - d) - exact).abs() / exact;
            assert!(rel < 1e-7, "depth {d}: {rel}");
        }
    }

    #[test]
    fn index_zero_is_parabola() {
        let p = lane_emden(0.0, 3).unwrap();
        assert!((p.radius - 6f64.sqrt()).abs() < 1e-10);
        let err = p.r.iter().zip(&p.theta).map(|(&r, &t)| (t - (1.0 - r * r / 6.0)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "sup error {err}");
    }

    #[test]
    fn five_thirds_has_square_root_sound_speed() {
        let p = lane_emden(5.0 / 3.0, 3).unwrap();
        assert!((p.alpha_fit - 1.0).abs() < 0.01, "alpha {}", p.alpha_fit);
        assert!(p.theta[1..p.theta.len() - 1].iter().all(|&t| t > 0.0));
        assert!(p.dtheta_at_radius < 0.0);
    }

    #[test]
    fn bad_index_and_no_zero() {
        assert!(lane_emden(-1.5, 3).is_err());
        assert!(lane_emden(5.0, 3).is_err());
    }
}
