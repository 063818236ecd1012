//! Pestov identity terms on a sampled cosphere bundle of a two-dimensional truncated collar.
//!
//! With g = A²dx² + B²dy², A = x^{-α/2}, B = x^{-α/2}√h, the unit vector at frame angle θ is
//! cos θ e₁ + sin θ e₂ (e₁ = ∂_x/A, e₂ = ∂_y/B), and
//!   X  = (c/A)∂_x + (s/B)∂_y − (s B_x/(AB))∂_θ,
//!   X⊥ = (s/A)∂_x − (c/B)∂_y + (c B_x/(AB))∂_θ,
//!   V  = ∂_θ.
//! Integrating by parts with [X,V] = X⊥, [V,X⊥] = X, [X,X⊥] = −KV gives
//!   ‖VXu‖² = ‖XVu‖² − (KVu,Vu) + ‖Xu‖² + ∫_{∂SM} (Vu·Xu·⟨X⊥,ν⟩ − Vu·X⊥u·⟨X,ν⟩) dσ.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{uf_integral, ScalarField, XrayOptions};
use crate::error::{GeoError, Result};
use crate::flow::PhasePoint;
use crate::metric::curvature::{sectional_curvature, PlanePair};
use crate::metric::GasGiantMetric;
use crate::quad::gregory_weights;

/// Tensor grid over [x₀, x₁] × [y₀, y₁] × [0, 2π), endpoints included in x and y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleGrid {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub ntheta: usize,
}

impl BundleGrid {
    pub fn cube(x: (f64, f64), y: (f64, f64), n: usize) -> Self {
        Self { x, y, nx: n, ny: n, ntheta: n }
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 6 || self.ny < 6 || self.ntheta < 6 {
            return Err(GeoError::InvalidParameter("bundle grid needs at least 6 nodes per axis".into()));
        }
        if !(self.x.0 > 0.0 && self.x.1 > self.x.0 && self.y.1 > self.y.0) {
            return Err(GeoError::InvalidParameter("bundle grid spacings must be positive on x > 0".into()));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        (self.x.1 - self.x.0) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y.1 - self.y.0) / (self.ny - 1) as f64
    }

    pub fn htheta(&self) -> f64 {
        2.0 * PI / self.ntheta as f64
    }

    pub fn xi(&self, i: usize) -> f64 {
        self.x.0 + i as f64 * self.hx()
    }

    pub fn yj(&self, j: usize) -> f64 {
        self.y.0 + j as f64 * self.hy()
    }

    pub fn thetak(&self, k: usize) -> f64 {
        k as f64 * self.htheta()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.ntheta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny + j) * self.ntheta + k
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereBundleField {
    pub grid: BundleGrid,
    /// Values at (x_i, y_j, θ_k), index (i·ny + j)·nθ + k.
    pub values: Vec<f64>,
}

impl SphereBundleField {
    pub fn sample<F>(grid: BundleGrid, u: F) -> Result<Self>
    where
        F: Fn(f64, f64, f64) -> f64 + Sync,
    {
        grid.validate()?;
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|n| {
                let k = n % grid.ntheta;
                let j = (n / grid.ntheta) % grid.ny;
                let i = n / (grid.ntheta * grid.ny);
                u(grid.xi(i), grid.yj(j), grid.thetak(k))
            })
            .collect();
        if let Some(n) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeoError::NonFinite { t: n as f64 });
        }
        Ok(Self { grid, values })
    }
}

/// Fourth-order first derivative at node i of n samples, one-sided near the ends.
fn d1(f: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    let v = match i {
        0 => -25.0 * f(0) + 48.0 * f(1) - 36.0 * f(2) + 16.0 * f(3) - 3.0 * f(4),
        1 => -3.0 * f(0) - 10.0 * f(1) + 18.0 * f(2) - 6.0 * f(3) + f(4),
        _ if i == n - 1 => 25.0 * f(n - 1) - 48.0 * f(n - 2) + 36.0 * f(n - 3) - 16.0 * f(n - 4) + 3.0 * f(n - 5),
        _ if i == n - 2 => 3.0 * f(n - 1) + 10.0 * f(n - 2) - 18.0 * f(n - 3) + 6.0 * f(n - 4) - f(n - 5),
        _ => f(i - 2) - 8.0 * f(i - 1) + 8.0 * f(i + 1) - f(i + 2),
    };
    v / (12.0 * h)
}

fn d1_periodic(f: impl Fn(usize) -> f64, k: usize, n: usize, h: f64) -> f64 {
    let at = |o: isize| f((k as isize + o).rem_euclid(n as isize) as usize);
    (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h)
}

/// A, B and B_x at (x, y).
fn frame_coefficients(metric: &GasGiantMetric, x: f64, y: f64) -> (f64, f64, f64) {
    let jet = metric.h_jet(x, &[y]);
    let (h, hx) = (jet.h[(0, 0)], jet.dx[(0, 0)]);
    let a = x.powf(-metric.alpha / 2.0);
    let sh = h.sqrt();
    (a, a * sh, -metric.alpha / 2.0 * a / x * sh + a * hx / (2.0 * sh))
}

/// Unit covector at (x, y) whose velocity makes frame angle θ with ∂_x.
pub fn frame_point(metric: &GasGiantMetric, x: f64, y: f64, theta: f64) -> Result<PhasePoint> {
    let h = metric.h_jet(x, &[y]).h[(0, 0)];
    PhasePoint::new(x, vec![y], theta.cos(), vec![theta.sin() * h.sqrt()]).unit_speed(metric)
}

/// Frame angle of a phase point of a two-dimensional metric.
pub fn frame_angle(metric: &GasGiantMetric, p: &PhasePoint) -> f64 {
    let h = metric.h_jet(p.x, &p.y).h[(0, 0)];
    (p.eta[0] / h.sqrt()).atan2(p.xi).rem_euclid(2.0 * PI)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceTerms {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl FaceTerms {
    pub fn total(&self) -> f64 {
        self.x_lo + self.x_hi + self.y_lo + self.y_hi
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PestovTerms {
    /// ‖VXu‖².
    pub lhs: f64,
    /// ‖XVu‖².
    pub t_xv: f64,
    /// (K Vu, Vu).
    pub t_curv: f64,
    /// (dim M − 1)‖Xu‖².
    pub t_n: f64,
    pub t_boundary: f64,
    pub faces: FaceTerms,
    /// (lhs − rhs) / max |term|.
    pub residual: f64,
    /// Same residual with coefficient dim M in front of ‖Xu‖².
    pub residual_coefficient_n: f64,
}

fn relative(lhs: f64, rhs: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs) / scale
    }
}

pub fn pestov_terms(metric: &GasGiantMetric, field: &SphereBundleField) -> Result<PestovTerms> {
    if metric.dim != 2 {
        return Err(GeoError::InvalidParameter("Pestov terms are implemented on two-dimensional metrics".into()));
    }
    let g = field.grid;
    g.validate()?;
    if field.values.len() != g.len() {
        return Err(GeoError::InvalidParameter("field size does not match its grid".into()));
    }
    let (nx, ny, nt) = (g.nx, g.ny, g.ntheta);
    let (hx, hy, ht) = (g.hx(), g.hy(), g.htheta());
    let u = &field.values;
    let coef: Vec<(f64, f64, f64)> = (0..nx * ny).into_par_iter().map(|n| frame_coefficients(metric, g.xi(n / ny), g.yj(n % ny))).collect();
    let curv = (0..nx * ny)
        .into_par_iter()
        .map(|n| sectional_curvature(metric, g.xi(n / ny), &[g.yj(n % ny)], PlanePair::RadialTangential(0)))
        .collect::<Result<Vec<f64>>>()?;
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..nt).map(|k| (g.thetak(k).cos(), g.thetak(k).sin())).unzip();

    let ut: Vec<f64> = (0..g.len()).into_par_iter().map(|n| d1_periodic(|k| u[n - n % nt + k], n % nt, nt, ht)).collect();
    let grad = |arr: &[f64], i: usize, j: usize, k: usize| -> (f64, f64) {
        (d1(|a| arr[g.idx(a, j, k)], i, nx, hx), d1(|b| arr[g.idx(i, b, k)], j, ny, hy))
    };
    let xu: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|n| {
            let (k, j, i) = (n % nt, (n / nt) % ny, n / (nt * ny));
            let (a, b, bx) = coef[i * ny + j];
            let (ux, uy) = grad(u, i, j, k);
            cos[k] / a * ux + sin[k] / b * uy - sin[k] * bx / (a * b) * ut[n]
        })
        .collect();

    let wx = gregory_weights(nx, hx);
    let wy = gregory_weights(ny, hy);
    let sums = (0..nx * ny)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / ny, c % ny);
            let (a, b, bx) = coef[c];
            let w = wx[i] * wy[j] * ht * a * b;
            let mut s = [0.0; 4];
            for k in 0..nt {
                let n = g.idx(i, j, k);
                let vxu = d1_periodic(|q| xu[n - k + q], k, nt, ht);
                let (utx, uty) = grad(&ut, i, j, k);
                let xvu = cos[k] / a * utx + sin[k] / b * uty - sin[k] * bx / (a * b) * d1_periodic(|q| ut[n - k + q], k, nt, ht);
                s[0] += w * vxu * vxu;
                s[1] += w * xvu * xvu;
                s[2] += w * curv[c] * ut[n] * ut[n];
                s[3] += w * xu[n] * xu[n];
            }
            s
        })
        .reduce(|| [0.0; 4], |p, q| [p[0] + q[0], p[1] + q[1], p[2] + q[2], p[3] + q[3]]);

    // Boundary integrand Vu·Xu·⟨X⊥,ν⟩ − Vu·X⊥u·⟨X,ν⟩ at node (i, j, k) for outward normal ν.
    let flux = |i: usize, j: usize, k: usize, nu_x: f64, nu_y: f64| -> f64 {
        let n = g.idx(i, j, k);
        let (a, b, bx) = coef[i * ny + j];
        let (ux, uy) = grad(u, i, j, k);
        let xperp_u = sin[k] / a * ux - cos[k] / b * uy + cos[k] * bx / (a * b) * ut[n];
        let x_nu = cos[k] * nu_x + sin[k] * nu_y;
        let xperp_nu = sin[k] * nu_x - cos[k] * nu_y;
        ut[n] * xu[n] * xperp_nu - ut[n] * xperp_u * x_nu
    };
    let x_face = |i: usize, nu: f64| -> f64 { (0..ny).map(|j| wy[j] * ht * coef[i * ny + j].1 * (0..nt).map(|k| flux(i, j, k, nu, 0.0)).sum::<f64>()).sum() };
    let y_face = |j: usize, nu: f64| -> f64 { (0..nx).map(|i| wx[i] * ht * coef[i * ny + j].0 * (0..nt).map(|k| flux(i, j, k, 0.0, nu)).sum::<f64>()).sum() };
    let faces = FaceTerms { x_lo: x_face(0, -1.0), x_hi: x_face(nx - 1, 1.0), y_lo: y_face(0, -1.0), y_hi: y_face(ny - 1, 1.0) };

    let [lhs, t_xv, t_curv, xu2] = sums;
    let t_n = xu2;
    let t_boundary = faces.total();
    let scale = [lhs, t_xv, t_curv.abs(), t_n, t_boundary.abs()].into_iter().fold(0.0, f64::max);
    Ok(PestovTerms {
        lhs,
        t_xv,
        t_curv,
        t_n,
        t_boundary,
        faces,
        residual: relative(lhs, t_xv - t_curv + t_n + t_boundary, scale),
        residual_coefficient_n: relative(lhs, t_xv - t_curv + 2.0 * xu2 + t_boundary, scale),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PestovRefinement {
    pub sizes: Vec<usize>,
    pub residuals: Vec<f64>,
    /// log₂ of successive residual ratios, per halving of the spacing.
    pub orders: Vec<f64>,
}

/// Residuals of a smooth field on a sequence of cubic grids.
pub fn pestov_refinement<F>(metric: &GasGiantMetric, x: (f64, f64), y: (f64, f64), sizes: &[usize], u: F) -> Result<PestovRefinement>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    let residuals = sizes
        .iter()
        .map(|&n| Ok(pestov_terms(metric, &SphereBundleField::sample(BundleGrid::cube(x, y, n), &u)?)?.residual.abs()))
        .collect::<Result<Vec<f64>>>()?;
    if residuals.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(GeoError::InsufficientData(format!("Pestov residual not decreasing under refinement: {residuals:?}")));
    }
    let orders = sizes.windows(2).zip(residuals.windows(2)).map(|(s, r)| (r[0] / r[1]).ln() / ((s[1] - 1) as f64 / (s[0] - 1) as f64).ln()).collect();
    Ok(PestovRefinement { sizes: sizes.to_vec(), residuals, orders })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundaryTermOptions {
    pub y: (f64, f64),
    pub ny: usize,
    pub ntheta: usize,
    pub xray: XrayOptions,
}

impl Default for BoundaryTermOptions {
    fn default() -> Self {
        Self { y: (-3.0, 3.0), ny: 49, ntheta: 384, xray: XrayOptions { allow_escape: true, ..XrayOptions::default() } }
    }
}

/// B_ε(u^f): the boundary term of u^f on the face {x = ε} of the truncation {x ≥ ε},
/// restricted to y in the given window.
///
/// On an x-face the integrand Vu·(⟨X⊥,ν⟩X − ⟨X,ν⟩X⊥)u only involves derivatives along the
/// face, and reduces to (−∂_θu ∂_yu + (B_x/A)(∂_θu)²) dy dθ.
pub fn boundary_term_uf(metric: &GasGiantMetric, field: &ScalarField, eps: f64, opts: &BoundaryTermOptions) -> Result<f64> {
    if metric.dim != 2 {
        return Err(GeoError::InvalidParameter("Pestov terms are implemented on two-dimensional metrics".into()));
    }
    if opts.ny < 6 || opts.ntheta < 6 || !(eps > 0.0 && opts.y.1 > opts.y.0) {
        return Err(GeoError::InvalidParameter("face grid needs ε > 0 and at least 6 nodes in y and θ".into()));
    }
    let grid = BundleGrid { x: (eps, 2.0 * eps), y: opts.y, nx: 1, ny: opts.ny, ntheta: opts.ntheta };
    let (ny, nt) = (grid.ny, grid.ntheta);
    let u = (0..ny * nt)
        .into_par_iter()
        .map(|n| uf_integral(metric, field, &frame_point(metric, eps, grid.yj(n / nt), grid.thetak(n % nt))?, &opts.xray))
        .collect::<Result<Vec<f64>>>()?;
    let (hy, ht) = (grid.hy(), grid.htheta());
    let wy = gregory_weights(ny, hy);
    let mut total = 0.0;
    for j in 0..ny {
        let (a, _, bx) = frame_coefficients(metric, eps, grid.yj(j));
        let mut s = 0.0;
        for k in 0..nt {
            let uy = d1(|q| u[q * nt + k], j, ny, hy);
            let ut = d1_periodic(|q| u[j * nt + q], k, nt, ht);
            s += -ut * uy + bx / a * ut * ut;
        }
        total += wy[j] * ht * s;
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryTrend {
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    pub decreasing: bool,
}

pub fn boundary_term_trend(metric: &GasGiantMetric, field: &ScalarField, eps: &[f64], opts: &BoundaryTermOptions) -> Result<BoundaryTrend> {
    let values = eps.iter().map(|&e| boundary_term_uf(metric, field, e, opts)).collect::<Result<Vec<f64>>>()?;
    let decreasing = values.windows(2).all(|w| w[1].abs() < w[0].abs());
    Ok(BoundaryTrend { eps: eps.to_vec(), values, decreasing })
}
