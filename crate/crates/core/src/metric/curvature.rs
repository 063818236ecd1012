//! Riemann tensor, sectional curvatures in the adapted frame, and the curvature-distance law.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{metric_jet, GasGiantMetric, Geometry};
use crate::error::{GeoError, Result};

/// R^a_{bcd} stored as `data[((a n + b) n + c) n + d]`, with
/// R(X, Y)Z = R^a_{bcd} Z^b X^c Y^d.
#[derive(Debug, Clone)]
pub struct Riemann {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Riemann {
    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let n = self.n;
        self.data[((a * n + b) * n + c) * n + d]
    }

    /// Largest violation of R^a_{bcd} + R^a_{cdb} + R^a_{dbc} = 0, relative to max |R|.
    pub fn bianchi_defect(&self) -> f64 {
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let s = self.get(a, b, c, d) + self.get(a, c, d, b) + self.get(a, d, b, c);
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst / scale
    }
}

pub fn riemann<G: Geometry + ?Sized>(geom: &G, p: &[f64]) -> Result<Riemann> {
    let n = geom.dim();
    let gam = geom.christoffel(p)?;
    let dgam = geom.christoffel_derivatives(p)?;
    let mut data = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut v = dgam[c].get(a, d, b) - dgam[d].get(a, c, b);
                    for e in 0..n {
                        v += gam.get(a, c, e) * gam.get(e, d, b) - gam.get(a, d, e) * gam.get(e, c, b);
                    }
                    data[((a * n + b) * n + c) * n + d] = v;
                }
            }
        }
    }
    Ok(Riemann { n, data })
}

/// Sectional curvature of span{X, Y} at `p`.
pub fn sectional_curvature_of<G: Geometry + ?Sized>(geom: &G, p: &[f64], xv: &[f64], yv: &[f64]) -> Result<f64> {
    let n = geom.dim();
    let g = geom.metric_tensor(p)?;
    let r = riemann(geom, p)?;
    let ip = |u: &[f64], v: &[f64]| -> f64 { (0..n).map(|i| (0..n).map(|j| g[(i, j)] * u[i] * v[j]).sum::<f64>()).sum() };
    let area = ip(xv, xv) * ip(yv, yv) - ip(xv, yv).powi(2);
    if !(area > 1e-14 * ip(xv, xv) * ip(yv, yv)) {
        return Err(GeoError::Degenerate("plane vectors are linearly dependent".into()));
    }
    let mut num = 0.0;
    for e in 0..n {
        let mut ry = 0.0;
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    ry += r.get(e, b, c, d) * yv[b] * xv[c] * yv[d];
                }
            }
        }
        for a in 0..n {
            num += g[(a, e)] * ry * xv[a];
        }
    }
    Ok(num / area)
}

/// Choice of 2-plane from the adapted orthonormal frame e₀ = x^{α/2}∂_x, e_β = x^{α/2} f_β
/// where f_β is h-orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanePair {
    RadialTangential(usize),
    TangentialTangential(usize, usize),
}

/// Adapted orthonormal frame at (x, y): column 0 is radial, the rest tangential.
pub fn adapted_frame(metric: &GasGiantMetric, x: f64, y: &[f64]) -> Result<DMatrix<f64>> {
    let n = metric.dim;
    let h = metric.h_jet(x, y).h;
    let chol = h.clone().cholesky().ok_or(GeoError::NotPositiveDefinite { x, min_eig: 0.0 })?;
    // Columns of L^{-T} are h-orthonormal.
    let linv_t = chol.l().try_inverse().ok_or(GeoError::Degenerate("singular Cholesky factor".into()))?.transpose();
    let s = x.powf(metric.alpha / 2.0);
    let mut frame = DMatrix::zeros(n, n);
    frame[(0, 0)] = s;
    for b in 0..n - 1 {
        for i in 0..n - 1 {
            frame[(i + 1, b + 1)] = s * linv_t[(i, b)];
        }
    }
    Ok(frame)
}

pub fn sectional_curvature(metric: &GasGiantMetric, x: f64, y: &[f64], plane: PlanePair) -> Result<f64> {
    metric_jet(metric, x, y)?;
    let n = metric.dim;
    let frame = adapted_frame(metric, x, y)?;
    let (i, j) = match plane {
        PlanePair::RadialTangential(b) => (0, b + 1),
        PlanePair::TangentialTangential(b, c) => (b + 1, c + 1),
    };
    if i == j || i >= n || j >= n {
        return Err(GeoError::Degenerate(format!("plane {plane:?} is not a 2-plane of the adapted frame in dimension {n}")));
    }
    let mut p = vec![x];
    p.extend_from_slice(y);
    let xv: Vec<f64> = frame.column(i).iter().copied().collect();
    let yv: Vec<f64> = frame.column(j).iter().copied().collect();
    sectional_curvature_of(metric, &p, &xv, &yv)
}

/// Limits of dist² · K for radial and tangential planes: (−2α/(2−α)², −α²/(2−α)²).
pub fn curvature_distance_law(alpha: f64) -> (f64, f64) {
    let d = (2.0 - alpha).powi(2);
    (-2.0 * alpha / d, -alpha * alpha / d)
}

/// Boundary distance along a normal ray, s = x^{1−α/2}/(1−α/2).
pub fn boundary_distance(alpha: f64, x: f64) -> f64 {
    x.powf(1.0 - alpha / 2.0) / (1.0 - alpha / 2.0)
}

pub fn x_from_boundary_distance(alpha: f64, s: f64) -> f64 {
    ((1.0 - alpha / 2.0) * s).powf(2.0 / (2.0 - alpha))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureLawSample {
    pub s: f64,
    pub x: f64,
    pub radial: f64,
    pub tangential: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureLawFit {
    pub expected: (f64, f64),
    pub radial_constant: f64,
    pub tangential_constant: Option<f64>,
    pub samples: Vec<CurvatureLawSample>,
}

/// Samples s²·K(s) along the normal ray through `y` and reports the values at the
/// smallest distance as the fitted constants.
pub fn fit_curvature_distance_law(metric: &GasGiantMetric, y: &[f64], s_values: &[f64]) -> Result<CurvatureLawFit> {
    if s_values.is_empty() {
        return Err(GeoError::InsufficientData("no distances to sample".into()));
    }
    let a = metric.alpha;
    let mut samples = Vec::new();
    for &s in s_values {
        let x = x_from_boundary_distance(a, s);
        let radial = s * s * sectional_curvature(metric, x, y, PlanePair::RadialTangential(0))?;
        let tangential = if metric.dim >= 3 { Some(s * s * sectional_curvature(metric, x, y, PlanePair::TangentialTangential(0, 1))?) } else { None };
        samples.push(CurvatureLawSample { s, x, radial, tangential });
    }
    let best = samples.iter().min_by(|p, q| p.s.partial_cmp(&q.s).unwrap()).unwrap();
    Ok(CurvatureLawFit { expected: curvature_distance_law(a), radial_constant: best.radial, tangential_constant: best.tangential, samples })
}

/// Round unit 2-sphere in (polar, azimuth) coordinates, a classical reference geometry.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundSphere;

impl Geometry for RoundSphere {
    fn dim(&self) -> usize {
        2
    }
    fn metric_tensor(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let s = p[0].sin();
        Ok(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, s * s]))
    }
    fn christoffel(&self, p: &[f64]) -> Result<super::Christoffel> {
        let (s, c) = p[0].sin_cos();
        if s.abs() < 1e-12 {
            return Err(GeoError::Domain("coordinate pole".into()));
        }
        let mut g = super::Christoffel::zeros(2);
        g.set(0, 1, 1, -s * c);
        g.set(1, 0, 1, c / s);
        g.set(1, 1, 0, c / s);
        Ok(g)
    }
    fn christoffel_derivatives(&self, p: &[f64]) -> Result<Vec<super::Christoffel>> {
        let (s, c) = p[0].sin_cos();
        let mut d0 = super::Christoffel::zeros(2);
        d0.set(0, 1, 1, -(c * c - s * s));
        d0.set(1, 0, 1, -1.0 / (s * s));
        d0.set(1, 1, 0, -1.0 / (s * s));
        Ok(vec![d0, super::Christoffel::zeros(2)])
    }
    fn jacobi_weight(&self, _p: &[f64]) -> f64 {
        1.0
    }
    fn jacobi_weight_rate(&self, _p: &[f64], _v: &[f64]) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::metric::Warped;

    #[test]
    fn sphere_has_unit_curvature() {
        let k = sectional_curvature_of(&RoundSphere, &[1.0, 0.3], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_gauss_curvature_is_minus_one_over_two_x() {
        let m = GasGiantMetric::model(1.0).unwrap();
        for &x in &[1e-4, 0.01, 0.5, 3.0] {
            let k = sectional_curvature(&m, x, &[0.0], PlanePair::RadialTangential(0)).unwrap();
            assert!((k + 0.5 / x).abs() <= 1e-9 * (0.5 / x), "x {x}: {k}");
        }
        let k = sectional_curvature(&m, 0.5, &[0.0], PlanePair::RadialTangential(0)).unwrap();
        assert!((k + 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_h_curvatures_are_exact_power_laws() {
        for &a in &[0.5, 1.0, 1.5] {
            let m = GasGiantMetric::flat(a, 3, 1.0).unwrap();
            let x = 1e-4;
            let kr = sectional_curvature(&m, x, &[0.0, 0.0], PlanePair::RadialTangential(1)).unwrap();
            let kt = sectional_curvature(&m, x, &[0.0, 0.0], PlanePair::TangentialTangential(0, 1)).unwrap();
            let sc = x.powf(2.0 - a);
            assert!((sc * kr + a / 2.0).abs() < 1e-9, "alpha {a}: {}", sc * kr);
            assert!((sc * kt + a * a / 4.0).abs() < 1e-9, "alpha {a}: {}", sc * kt);
        }
    }

    #[test]
    fn warped_family_curvature_limits() {
        let fam = Arc::new(Warped { dim_y: 2, a: 0.4, b: 0.3, c: 0.2, k: 2.0 });
        let m = GasGiantMetric::new(1.0, 3, 1.0, fam).unwrap();
        let x = 1e-4;
        let sc: f64 = x;
        let kr = sectional_curvature(&m, x, &[0.1, 0.2], PlanePair::RadialTangential(0)).unwrap();
        let kt = sectional_curvature(&m, x, &[0.1, 0.2], PlanePair::TangentialTangential(0, 1)).unwrap();
        assert!((sc * kr + 0.5).abs() < 0.005 * 0.5, "{}", sc * kr);
        assert!((sc * kt + 0.25).abs() < 0.01 * 0.25, "{}", sc * kt);
        let r = riemann(&m, &[x, 0.1, 0.2]).unwrap();
        assert!(r.bianchi_defect() < 1e-9);
    }

    #[test]
    fn degenerate_plane_rejected() {
        let m = GasGiantMetric::flat(1.0, 2, 1.0).unwrap();
        assert!(sectional_curvature(&m, 0.3, &[0.0], PlanePair::TangentialTangential(0, 1)).is_err());
        assert!(sectional_curvature(&m, 0.3, &[0.0], PlanePair::RadialTangential(3)).is_err());
    }

    #[test]
    fn distance_law_constants() {
        assert_eq!(curvature_distance_law(1.0), (-2.0, -1.0));
        let (r, t) = curvature_distance_law(1e-12);
        assert!(r.abs() < 1e-11 && t.abs() < 1e-11);
        let m = GasGiantMetric::model(1.0).unwrap();
        let f = fit_curvature_distance_law(&m, &[0.0], &[1e-2]).unwrap();
        assert!((f.radial_constant + 2.0).abs() < 1e-6);
    }
}
