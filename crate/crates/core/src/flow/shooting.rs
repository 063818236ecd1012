//! Boundary-to-boundary rays by Newton shooting on apex data, the scattering
//! relation, boundary distances and the box-counting dimension of (∂M, d_g).
//!
//! A ray is parametrized by its apex (x₀, y₀, ξ = 0, w) with x₀ fixed by unit
//! speed, x₀^α |w|²_h = 1. The backward half is the forward flow of (y₀, −w).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use super::{integrate_to_boundary, FlowOptions, PhasePoint, Trajectory};
use crate::error::{GeoError, Result};
use crate::fit::{fit_loglog, LogLogFit};
use crate::metric::curvature::boundary_distance;
use crate::metric::GasGiantMetric;

/// Half chord of the flat-h ray with apex height x₀: x₀ B(1/2 + 1/α, 1/2)/α.
pub fn model_half_chord(alpha: f64, x0: f64) -> f64 {
    x0 * beta(0.5 + 1.0 / alpha, 0.5) / alpha
}

/// Length of the flat-h ray with apex height x₀: 2 x₀^{1−α/2} B(1/α − 1/2, 1/2)/α.
pub fn model_length(alpha: f64, x0: f64) -> f64 {
    2.0 * x0.powf(1.0 - alpha / 2.0) * beta(1.0 / alpha - 0.5, 0.5) / alpha
}

/// Apex height of the flat-h ray whose chord is `chord`.
pub fn model_apex_for_chord(alpha: f64, chord: f64) -> f64 {
    chord / (2.0 * model_half_chord(alpha, 1.0))
}

/// Apex height of the flat-h ray of length `length`.
pub fn model_apex_for_length(alpha: f64, length: f64) -> f64 {
    (length / model_length(alpha, 1.0)).powf(1.0 / (1.0 - alpha / 2.0))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShootingOptions {
    pub flow: FlowOptions,
    /// Absolute tolerance on the sup norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self { flow: FlowOptions::quiet(), tol: 1e-10, max_iter: 40 }
    }
}

/// Unit-speed apex point from unknowns z = (y₀, w).
pub fn apex_from_unknowns(metric: &GasGiantMetric, z: &[f64]) -> Result<PhasePoint> {
    let m = metric.dim_y();
    let y0 = &z[..m];
    let w = DVector::from_column_slice(&z[m..2 * m]);
    let mut x0 = f64::NAN;
    let mut guess = {
        let h = metric.h_jet(0.0, y0).h;
        let hinv = h.try_inverse().ok_or(GeoError::NotPositiveDefinite { x: 0.0, min_eig: 0.0 })?;
        w.dot(&(&hinv * &w)).powf(-1.0 / metric.alpha)
    };
    for _ in 0..100 {
        if !(guess > 0.0 && guess < metric.x_max) {
            return Err(GeoError::Domain(format!("apex height {guess} outside the collar")));
        }
        let hinv = metric.h_jet(guess, y0).h.try_inverse().ok_or(GeoError::NotPositiveDefinite { x: guess, min_eig: 0.0 })?;
        let next = w.dot(&(&hinv * &w)).powf(-1.0 / metric.alpha);
        if (next - guess).abs() <= 1e-15 * guess {
            x0 = next;
            break;
        }
        guess = next;
    }
    if !x0.is_finite() {
        return Err(GeoError::NoConvergence("apex height iteration did not settle".into()));
    }
    PhasePoint::new(x0, y0.to_vec(), 0.0, w.iter().copied().collect()).unit_speed(metric)
}

/// Exit records of both halves of the ray through an apex: (backward, forward).
fn halves(metric: &GasGiantMetric, apex: &PhasePoint, flow: &FlowOptions) -> Result<(Trajectory, Trajectory)> {
    let (b, f) = rayon::join(|| integrate_to_boundary(metric, &apex.reversed(), flow), || integrate_to_boundary(metric, apex, flow));
    let (b, f) = (b?, f?);
    for t in [&b, &f] {
        if t.exit.is_none() {
            return Err(GeoError::NoConvergence(format!("ray through apex x0 = {} did not exit ({:?})", apex.x, t.status)));
        }
    }
    Ok((b, f))
}

/// Damped Newton iteration with a forward-difference Jacobian.
fn newton<F>(f: F, z0: Vec<f64>, scale: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let n = z0.len();
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut z = z0;
    let mut r = f(&z)?;
    for it in 0..max_iter {
        if norm(&r) <= tol {
            return Ok((z, it));
        }
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let h = 1e-7 * scale[j].max(z[j].abs());
                let mut zp = z.clone();
                zp[j] += h;
                let rp = f(&zp)?;
                Ok(rp.iter().zip(&r).map(|(a, b)| (a - b) / h).collect())
            })
            .collect::<Result<_>>()?;
        let jac = DMatrix::from_fn(r.len(), n, |i, j| cols[j][i]);
        let rhs = -DVector::from_column_slice(&r);
        let dz = jac.lu().solve(&rhs).ok_or_else(|| GeoError::Degenerate("singular shooting Jacobian".into()))?;
        let r0 = norm(&r);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let zt: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, d)| a + lambda * d).collect();
            if let Ok(rt) = f(&zt) {
                if norm(&rt) < r0 || norm(&rt) <= tol {
                    z = zt;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            // Stagnation at the integration noise floor counts as converged when close.
            if r0 <= 1e3 * tol {
                return Ok((z, it));
            }
            return Err(GeoError::NoConvergence(format!("shooting stalled with residual {r0:.3e}")));
        }
    }
    if norm(&r) <= 1e3 * tol {
        return Ok((z, max_iter));
    }
    Err(GeoError::NoConvergence(format!("shooting did not converge; residual {:.3e}", norm(&r))))
}

fn h0_at(metric: &GasGiantMetric, y: &[f64]) -> DMatrix<f64> {
    metric.h_jet(0.0, y).h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatteringResult {
    pub y_bar: Vec<f64>,
    pub eta_bar: Vec<f64>,
    pub total_time: f64,
    pub apex: PhasePoint,
    pub iterations: usize,
}

/// Scattering relation E: the ray leaving the boundary at y₁ with tangential covector η₁
/// (so that its backward exit is (y₁, −η₁)) is followed to its other end.
pub fn scattering_relation(metric: &GasGiantMetric, y1: &[f64], eta1: &[f64], opts: &ShootingOptions) -> Result<ScatteringResult> {
    let m = metric.dim_y();
    if y1.len() != m || eta1.len() != m {
        return Err(GeoError::InvalidParameter(format!("boundary data needs {m} components")));
    }
    let h0 = h0_at(metric, y1);
    let h0inv = h0.clone().try_inverse().ok_or(GeoError::NotPositiveDefinite { x: 0.0, min_eig: 0.0 })?;
    let e = DVector::from_column_slice(eta1);
    let p = e.dot(&(&h0inv * &e)).sqrt();
    if !(p > 0.0) {
        return Err(GeoError::InvalidParameter("tangential covector must be nonzero".into()));
    }
    let x0 = p.powf(-2.0 / metric.alpha);
    if x0 >= 0.5 * metric.x_max {
        return Err(GeoError::InvalidParameter(format!("|η| = {p} reaches apex height {x0}, outside the collar window")));
    }
    let dir = &h0inv * &e / p;
    let half = model_half_chord(metric.alpha, x0);
    let mut z0: Vec<f64> = (0..m).map(|i| y1[i] + half * dir[i]).collect();
    z0.extend_from_slice(eta1);
    let mut scale = vec![half.max(1e-3); m];
    scale.extend(std::iter::repeat(p).take(m));
    let resid = |z: &[f64]| -> Result<Vec<f64>> {
        let apex = apex_from_unknowns(metric, z)?;
        let b = integrate_to_boundary(metric, &apex.reversed(), &opts.flow)?;
        let e = b.exit.ok_or_else(|| GeoError::NoConvergence("backward half did not exit".into()))?;
        let mut r: Vec<f64> = e.y_bar.iter().zip(y1).map(|(a, b)| a - b).collect();
        r.extend(e.eta_bar.iter().zip(eta1).map(|(a, b)| a + b));
        Ok(r)
    };
    let (z, iterations) = newton(resid, z0, &scale, opts.tol, opts.max_iter)?;
    let apex = apex_from_unknowns(metric, &z)?;
    let (b, f) = halves(metric, &apex, &opts.flow)?;
    let fe = f.exit.unwrap();
    Ok(ScatteringResult { y_bar: fe.y_bar, eta_bar: fe.eta_bar, total_time: fe.time + b.exit.unwrap().time, apex, iterations })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Connection {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// d_g(y₁, y₂), the g-length of the connecting ray.
    pub distance: f64,
    pub apex: PhasePoint,
    pub backward: Trajectory,
    pub forward: Trajectory,
    pub iterations: usize,
    /// Lengths of distinct connecting rays found from perturbed starts.
    pub alternatives: Vec<f64>,
}

fn connect_guess(metric: &GasGiantMetric, y1: &[f64], y2: &[f64], apex_scale: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = metric.dim_y();
    let mid: Vec<f64> = y1.iter().zip(y2).map(|(a, b)| 0.5 * (a + b)).collect();
    let h0 = h0_at(metric, &mid);
    let d = DVector::from_iterator(m, y2.iter().zip(y1).map(|(a, b)| a - b));
    let dist = d.dot(&(&h0 * &d)).sqrt();
    if !(dist > 0.0) {
        return Err(GeoError::InvalidParameter("boundary points coincide".into()));
    }
    let x0 = model_apex_for_chord(metric.alpha, dist) * apex_scale;
    let w = &h0 * &d * (x0.powf(-metric.alpha / 2.0) / dist);
    let mut z = mid;
    z.extend(w.iter());
    let mut scale = vec![dist; m];
    scale.extend(std::iter::repeat(x0.powf(-metric.alpha / 2.0)).take(m));
    Ok((z, scale))
}

fn solve_connection(metric: &GasGiantMetric, y1: &[f64], y2: &[f64], opts: &ShootingOptions, apex_scale: f64) -> Result<(Vec<f64>, usize)> {
    let (z0, scale) = connect_guess(metric, y1, y2, apex_scale)?;
    let resid = |z: &[f64]| -> Result<Vec<f64>> {
        let apex = apex_from_unknowns(metric, z)?;
        let (b, f) = halves(metric, &apex, &opts.flow)?;
        let mut r: Vec<f64> = b.exit.unwrap().y_bar.iter().zip(y1).map(|(a, b)| a - b).collect();
        r.extend(f.exit.unwrap().y_bar.iter().zip(y2).map(|(a, b)| a - b));
        Ok(r)
    };
    newton(resid, z0, &scale, opts.tol, opts.max_iter)
}

/// Connects two boundary points by a ray and returns d_g(y₁, y₂) as its length.
/// With `probe_uniqueness`, restarts from apex heights scaled by 1/3 and 3 and
/// reports any distinct solution found.
pub fn connect_boundary_points(metric: &GasGiantMetric, y1: &[f64], y2: &[f64], opts: &ShootingOptions, probe_uniqueness: bool) -> Result<Connection> {
    let m = metric.dim_y();
    if y1.len() != m || y2.len() != m {
        return Err(GeoError::InvalidParameter(format!("boundary points need {m} components")));
    }
    let (z, iterations) = solve_connection(metric, y1, y2, opts, 1.0)?;
    let apex = apex_from_unknowns(metric, &z)?;
    let flow = FlowOptions { record_samples: true, ..opts.flow };
    let (backward, forward) = halves(metric, &apex, &flow)?;
    let distance = backward.exit.as_ref().unwrap().time + forward.exit.as_ref().unwrap().time;
    let mut alternatives = Vec::new();
    if probe_uniqueness {
        for s in [1.0 / 3.0, 3.0] {
            if let Ok((za, _)) = solve_connection(metric, y1, y2, opts, s) {
                let a = apex_from_unknowns(metric, &za)?;
                let (b, f) = halves(metric, &a, &opts.flow)?;
                let len = b.exit.unwrap().time + f.exit.unwrap().time;
                if (len - distance).abs() > 1e-6 * distance && !alternatives.iter().any(|v: &f64| (v - len).abs() <= 1e-6 * len) {
                    alternatives.push(len);
                }
            }
        }
    }
    Ok(Connection { y1: y1.to_vec(), y2: y2.to_vec(), distance, apex, backward, forward, iterations, alternatives })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryDistanceFit {
    pub d_h0: Vec<f64>,
    pub d_g: Vec<f64>,
    pub apex_heights: Vec<f64>,
    /// Apex depth in boundary-distance units, s(x₀) = x₀^{1−α/2}/(1−α/2), over d_g.
    pub depth_ratios: Vec<f64>,
    pub fit: LogLogFit,
    pub alpha_recovered: f64,
}

/// d_g for boundary pairs centered at `y_center` along the first coordinate with
/// d_{h₀} = 2^{-k}; the log-log slope is expected to be 1 − α/2.
pub fn boundary_distance_exponent(metric: &GasGiantMetric, y_center: &[f64], ks: std::ops::RangeInclusive<i32>, opts: &ShootingOptions) -> Result<BoundaryDistanceFit> {
    let m = metric.dim_y();
    if y_center.len() != m {
        return Err(GeoError::InvalidParameter(format!("center needs {m} components")));
    }
    let h0 = h0_at(metric, y_center);
    let unit = 1.0 / h0[(0, 0)].sqrt();
    let d_h0: Vec<f64> = ks.map(|k| 2f64.powi(-k)).collect();
    let rows = d_h0
        .par_iter()
        .map(|&d| {
            let mut y1 = y_center.to_vec();
            let mut y2 = y_center.to_vec();
            y1[0] -= 0.5 * d * unit;
            y2[0] += 0.5 * d * unit;
            let c = connect_boundary_points(metric, &y1, &y2, opts, false)?;
            Ok((c.distance, c.apex.x))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let d_g: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let apex_heights: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let depth_ratios = rows.iter().map(|r| boundary_distance(metric.alpha, r.1) / r.0).collect();
    let fit = fit_loglog(&d_h0, &d_g, 1.0 - metric.alpha / 2.0, 0.01)?;
    Ok(BoundaryDistanceFit { alpha_recovered: 2.0 * (1.0 - fit.slope), d_h0, d_g, apex_heights, depth_ratios, fit })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HausdorffEstimate {
    pub deltas: Vec<f64>,
    /// Fractional covering numbers N(δ).
    pub counts: Vec<f64>,
    /// Fit of log δ against log N; the dimension is −1/slope.
    pub fit: LogLogFit,
    pub dimension: f64,
    pub expected: f64,
}

/// Scales δ so that covering counts run geometrically from `n_min` to `n_max` for the
/// flat model with the metric's α over the y-box.
pub fn default_deltas(metric: &GasGiantMetric, n_min: f64, n_max: f64, count: usize) -> Vec<f64> {
    let (a, b) = metric.y_box[0];
    (0..count)
        .map(|i| {
            let n = n_min * (n_max / n_min).powf(i as f64 / (count - 1) as f64);
            model_length(metric.alpha, model_apex_for_chord(metric.alpha, (b - a) / n))
        })
        .collect()
}

/// Greedy chain of d_g-steps of length δ across the y-box of a two-dimensional metric;
/// the count includes the fractional last step.
pub fn covering_count(metric: &GasGiantMetric, delta: f64, opts: &ShootingOptions) -> Result<f64> {
    let (a, b) = metric.y_box[0];
    let x0 = model_apex_for_length(metric.alpha, delta);
    let hw = x0.powf(-metric.alpha / 2.0);
    let half = model_half_chord(metric.alpha, x0);
    let mut z = vec![a + half, hw];
    let mut p = a;
    let mut count = 0.0;
    loop {
        let resid = |zz: &[f64]| -> Result<Vec<f64>> {
            let apex = apex_from_unknowns(metric, zz)?;
            let (bk, fw) = halves(metric, &apex, &opts.flow)?;
            let (eb, ef) = (bk.exit.unwrap(), fw.exit.unwrap());
            Ok(vec![eb.y_bar[0] - p, (eb.time + ef.time - delta) / delta * half])
        };
        let (zs, _) = newton(resid, z.clone(), &[half, hw], opts.tol, opts.max_iter)?;
        let apex = apex_from_unknowns(metric, &zs)?;
        let (_, fw) = halves(metric, &apex, &opts.flow)?;
        let q = fw.exit.unwrap().y_bar[0];
        if !(q > p) {
            return Err(GeoError::NoConvergence("covering step did not advance".into()));
        }
        if q >= b {
            count += (b - p) / (q - p);
            return Ok(count);
        }
        count += 1.0;
        z = vec![zs[0] + (q - p), zs[1]];
        p = q;
        if count > 1e6 {
            return Err(GeoError::TooManySteps(1_000_000));
        }
    }
}

/// Box-counting dimension of (∂M, d_g) for two-dimensional metrics; the expected value
/// is 2(n−1)/(2−α).
pub fn hausdorff_dimension_boundary(metric: &GasGiantMetric, deltas: &[f64], opts: &ShootingOptions) -> Result<HausdorffEstimate> {
    if metric.dim != 2 {
        return Err(GeoError::InvalidParameter("box counting is implemented for one-dimensional boundaries".into()));
    }
    let counts = deltas.par_iter().map(|&d| covering_count(metric, d, opts)).collect::<Result<Vec<f64>>>()?;
    let expected = 2.0 * (metric.dim as f64 - 1.0) / (2.0 - metric.alpha);
    let fit = fit_loglog(&counts, deltas, -1.0 / expected, 0.05 / expected)?;
    Ok(HausdorffEstimate { deltas: deltas.to_vec(), dimension: -1.0 / fit.slope, counts, fit, expected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn model_formulas_at_alpha_one() {
        assert!((2.0 * model_half_chord(1.0, 0.5) - PI / 2.0).abs() < 1e-12);
        assert!((model_length(1.0, 0.25) - PI).abs() < 1e-12);
    }

    #[test]
    fn scattering_chords_match_cycloids() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let o = ShootingOptions::default();
        for (p, chord) in [(1.0, PI), (2f64.sqrt(), PI / 2.0)] {
            let s = scattering_relation(&m, &[0.0], &[p], &o).unwrap();
            assert!((s.y_bar[0] - chord).abs() < 1e-8, "{} vs {chord}", s.y_bar[0]);
            assert!((s.eta_bar[0] - p).abs() < 1e-8);
            assert!((s.total_time - 2.0 * PI / p).abs() < 1e-8);
        }
    }

    #[test]
    fn scattering_is_reversible() {
        let m = GasGiantMetric::flat(0.7, 2, 10.0).unwrap();
        let o = ShootingOptions::default();
        let s = scattering_relation(&m, &[0.3], &[1.7], &o).unwrap();
        let back = scattering_relation(&m, &s.y_bar, &[-s.eta_bar[0]], &o).unwrap();
        assert!((back.y_bar[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn connection_lengths_match_closed_form() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let o = ShootingOptions::default();
        for dy in [1.0, PI] {
            let c = connect_boundary_points(&m, &[0.0], &[dy], &o, false).unwrap();
            let exact = 2.0 * (PI * dy).sqrt();
            assert!((c.distance / exact - 1.0).abs() < 1e-8, "{} vs {exact}", c.distance);
        }
    }

    #[test]
    fn shrinking_pairs_shrink_distance_and_depth() {
        let m = GasGiantMetric::flat(0.5, 2, 10.0).unwrap();
        let o = ShootingOptions::default();
        let mut last = (f64::INFINITY, f64::INFINITY);
        for k in 0..6 {
            let c = connect_boundary_points(&m, &[0.2], &[0.2 + 2f64.powi(-k)], &o, false).unwrap();
            assert!(c.distance < last.0 && c.apex.x < last.1);
            last = (c.distance, c.apex.x);
        }
    }

    #[test]
    fn coincident_points_rejected() {
        let m = GasGiantMetric::model(1.0).unwrap();
        assert!(connect_boundary_points(&m, &[0.1], &[0.1], &ShootingOptions::default(), false).is_err());
    }

    #[test]
    fn distance_exponent_model() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let f = boundary_distance_exponent(&m, &[0.0], 0..=8, &ShootingOptions::default()).unwrap();
        assert!((f.fit.slope - 0.5).abs() < 1e-6);
        assert!((f.fit.prefactor() - 2.0 * PI.sqrt()).abs() < 1e-5);
        let (lo, hi) = f.depth_ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(lo > 0.0 && hi / lo < 1.0 + 1e-6);
    }

    #[test]
    fn hausdorff_model_alpha_one() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let o = ShootingOptions::default();
        let est = hausdorff_dimension_boundary(&m, &default_deltas(&m, 3.0, 400.0, 7), &o).unwrap();
        assert!((est.dimension - 2.0).abs() < 0.02, "{}", est.dimension);
    }
}
