//! Singular values of the X-ray transform restricted to a tensor B-spline basis.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_integrals, RaySpec, XrayOptions};
use crate::error::{GeoError, Result};
use crate::metric::GasGiantMetric;
use crate::spline::BSplineBasis1D;

/// nx × ny tensor cubic B-splines supported inside [x₀, x₁] × [y₀, y₁].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl BasisSpec {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axes(&self) -> (BSplineBasis1D, BSplineBasis1D) {
        (BSplineBasis1D { a: self.x.0, b: self.x.1, count: self.nx }, BSplineBasis1D { a: self.y.0, b: self.y.1, count: self.ny })
    }

    /// Basis function j = jx·ny + jy at (x, y).
    pub fn eval(&self, j: usize, x: f64, y: f64) -> f64 {
        let (bx, by) = self.axes();
        bx.eval(j / self.ny, x) * by.eval(j % self.ny, y)
    }

    /// Writes all basis values at (x, y) into `out`, touching only the nonzero ones.
    fn eval_into(&self, x: f64, y: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if x <= self.x.0 || x >= self.x.1 || y <= self.y.0 || y >= self.y.1 {
            return;
        }
        let (bx, by) = self.axes();
        let span = |b: &BSplineBasis1D, t: f64| {
            let c = ((t - b.a) / b.spacing()).floor() as isize;
            (c - 3).max(0) as usize..=(c.max(0) as usize).min(b.count - 1)
        };
        for jx in span(&bx, x) {
            let vx = bx.eval(jx, x);
            if vx == 0.0 {
                continue;
            }
            for jy in span(&by, y) {
                out[jx * self.ny + jy] = vx * by.eval(jy, y);
            }
        }
    }
}

/// `count` rays through uniform points of the basis box with uniform directions.
pub fn random_catalog(basis: &BasisSpec, count: usize, seed: u64) -> Vec<RaySpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| RaySpec::Through {
            x: rng.gen_range(basis.x.0..basis.x.1),
            y: vec![rng.gen_range(basis.y.0..basis.y.1)],
            theta: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect()
}

/// A_{rj} = ∫ φ_j along ray r. Rays leaving through the collar top are accepted since the
/// basis vanishes there.
pub fn ray_matrix(metric: &GasGiantMetric, basis: &BasisSpec, rays: &[RaySpec], opts: &XrayOptions) -> Result<DMatrix<f64>> {
    if metric.dim != 2 {
        return Err(GeoError::InvalidParameter("the injectivity probe uses a one-dimensional boundary".into()));
    }
    if basis.is_empty() || !(basis.x.0 > 0.0 && basis.x.1 < metric.x_max) {
        return Err(GeoError::InvalidParameter("basis must be nonempty and supported inside the collar".into()));
    }
    let o = XrayOptions { allow_escape: true, ..*opts };
    let n = basis.len();
    let f = |x: f64, y: &[f64], out: &mut [f64]| basis.eval_into(x, y[0], out);
    let rows = rays
        .par_iter()
        .map(|r| {
            let p = r.phase_point(metric)?;
            let a = forward_integrals(metric, &p, n, f, &o)?;
            let b = forward_integrals(metric, &p.reversed(), n, f, &o)?;
            Ok(a.iter().zip(&b).map(|(u, v)| u + v).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(rows.len(), n, |r, j| rows[r][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub rows: usize,
    pub cols: usize,
    pub duplicates_removed: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub condition: f64,
    /// Number of singular values above 1e-12 σ_max.
    pub numerical_rank: usize,
    pub floor: f64,
    pub pass: bool,
}

/// Singular values of the ray matrix. Identical rays are counted once.
pub fn discrete_injectivity_probe(metric: &GasGiantMetric, basis: &BasisSpec, rays: &[RaySpec], floor: f64, opts: &XrayOptions) -> Result<InjectivityReport> {
    let mut unique: Vec<RaySpec> = Vec::with_capacity(rays.len());
    for r in rays {
        if !unique.contains(r) {
            unique.push(r.clone());
        }
    }
    let a = ray_matrix(metric, basis, &unique, opts)?;
    let sv = a.singular_values();
    let sigma_max = sv.max();
    let sigma_min = if unique.len() < basis.len() { 0.0 } else { sv.min() };
    Ok(InjectivityReport {
        rows: unique.len(),
        cols: basis.len(),
        duplicates_removed: rays.len() - unique.len(),
        sigma_min,
        sigma_max,
        condition: if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY },
        numerical_rank: sv.iter().filter(|&&s| s > 1e-12 * sigma_max).count(),
        floor,
        pass: sigma_min > floor,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResamplingStability {
    pub seeds: Vec<u64>,
    pub sigma_min: Vec<f64>,
    /// max |σ_min / median − 1| over the seeds.
    pub max_deviation: f64,
    pub stable: bool,
}

/// σ_min across catalogs drawn from the given seeds; stable when every value lies within
/// ±`band` of the median.
pub fn resampling_stability(metric: &GasGiantMetric, basis: &BasisSpec, count: usize, seeds: &[u64], band: f64, opts: &XrayOptions) -> Result<ResamplingStability> {
    let sigma_min = seeds
        .iter()
        .map(|&s| Ok(discrete_injectivity_probe(metric, basis, &random_catalog(basis, count, s), 0.0, opts)?.sigma_min))
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = sigma_min.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let max_deviation = sigma_min.iter().map(|s| (s / median - 1.0).abs()).fold(0.0, f64::max);
    Ok(ResamplingStability { seeds: seeds.to_vec(), sigma_min, max_deviation, stable: median > 0.0 && max_deviation <= band })
}
