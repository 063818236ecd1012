//! Gas-giant metrics g = x^{-α}(dx² + h(x, y)) in adapted collar coordinates.

pub mod curvature;
pub mod families;
pub mod lane_emden;
pub mod normal_form;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fit::fit_loglog;
use crate::quad::{composite_gauss, integrate_adaptive};
pub use families::{BoundaryFamily, CrossSection, Flat, HJet, Product, Profile, Tabulated, Warped};

/// Smallest admissible eigenvalue of h.
pub const SPD_FLOOR: f64 = 1e-10;

/// Christoffel symbols Γ^a_{bc}, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n * n] }
    }
    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.n + b) * self.n + c]
    }
    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[(a * self.n + b) * self.n + c] = v;
    }
    #[inline]
    pub fn add(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[(a * self.n + b) * self.n + c] += v;
    }
    /// Γ^a(u, v) = Γ^a_{bc} u^b v^c.
    pub fn contract(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|a| (0..n).map(|b| (0..n).map(|c| self.get(a, b, c) * u[b] * v[c]).sum::<f64>()).sum()).collect()
    }
}

/// Anything with a Levi-Civita connection on a coordinate chart, used by the
/// curvature and Jacobi machinery. Points are coordinate vectors.
pub trait Geometry: Sync {
    fn dim(&self) -> usize;
    fn metric_tensor(&self, p: &[f64]) -> Result<DMatrix<f64>>;
    fn christoffel(&self, p: &[f64]) -> Result<Christoffel>;
    /// `result[e]` holds ∂_e Γ.
    fn christoffel_derivatives(&self, p: &[f64]) -> Result<Vec<Christoffel>>;
    /// Weight w(p) in the rescaling W₂ = J̇ / w of the Jacobi system.
    fn jacobi_weight(&self, p: &[f64]) -> f64;
    /// d/dt ln w along a curve with velocity `v`.
    fn jacobi_weight_rate(&self, p: &[f64], v: &[f64]) -> f64;
}

/// Serializable description of a boundary family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    Flat {
        #[serde(default = "one")]
        scale: f64,
    },
    Warped {
        a: f64,
        b: f64,
        c: f64,
        k: f64,
    },
    GaussianBump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    RadialConformal {
        sound_speed: normal_form::SoundSpeedSpec,
        collar: f64,
    },
    Tabulated {
        x: Vec<f64>,
        y: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

/// Serializable metric description `{alpha, dim, x_max, family, y_box}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSpec {
    pub alpha: f64,
    pub dim: usize,
    pub x_max: f64,
    pub family: FamilySpec,
    #[serde(default)]
    pub y_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone)]
pub struct GasGiantMetric {
    pub alpha: f64,
    pub dim: usize,
    pub x_max: f64,
    pub family: Arc<dyn BoundaryFamily>,
    /// Coordinate box in y used for volumes and boundary sampling.
    pub y_box: Vec<(f64, f64)>,
}

impl GasGiantMetric {
    pub fn new(alpha: f64, dim: usize, x_max: f64, family: Arc<dyn BoundaryFamily>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(GeoError::InvalidParameter(format!("alpha = {alpha} must lie strictly inside (0, 2)")));
        }
        if dim < 2 {
            return Err(GeoError::InvalidParameter(format!("dimension {dim} < 2")));
        }
        if family.dim_y() != dim - 1 {
            return Err(GeoError::InvalidParameter(format!("family has boundary dimension {} but dim - 1 = {}", family.dim_y(), dim - 1)));
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(GeoError::InvalidParameter(format!("x_max = {x_max} must be positive")));
        }
        let m = Self { alpha, dim, x_max, family, y_box: vec![(0.0, 1.0); dim - 1] };
        m.validate_spd()?;
        Ok(m)
    }

    /// Flat boundary family h = identity.
    pub fn flat(alpha: f64, dim: usize, x_max: f64) -> Result<Self> {
        Self::new(alpha, dim, x_max, Arc::new(Flat { dim_y: dim.max(2) - 1, scale: 1.0 }))
    }

    /// The two-dimensional half-plane model x^{-α}(dx² + dy²) on a tall collar.
    pub fn model(alpha: f64) -> Result<Self> {
        Self::flat(alpha, 2, 1e3)
    }

    pub fn with_y_box(mut self, y_box: Vec<(f64, f64)>) -> Result<Self> {
        if y_box.len() != self.dim - 1 || y_box.iter().any(|(a, b)| !(b > a)) {
            return Err(GeoError::InvalidParameter("y_box must list one increasing interval per boundary coordinate".into()));
        }
        self.y_box = y_box;
        self.validate_spd()?;
        Ok(self)
    }

    pub fn from_spec(spec: &MetricSpec) -> Result<Self> {
        let dy = spec.dim.max(2) - 1;
        let family: Arc<dyn BoundaryFamily> = match &spec.family {
            FamilySpec::Flat { scale } => Arc::new(Flat { dim_y: dy, scale: *scale }),
            FamilySpec::Warped { a, b, c, k } => Arc::new(Warped { dim_y: dy, a: *a, b: *b, c: *c, k: *k }),
            FamilySpec::GaussianBump { amplitude, center, width } => Arc::new(Product {
                dim_y: dy,
                profile: Profile::Gaussian { amplitude: *amplitude, center: *center, width: *width },
                cross: CrossSection::Euclidean,
            }),
            FamilySpec::RadialConformal { sound_speed, collar } => {
                let nf = normal_form::normal_form_radial(&normal_form::ConformalMetricSpec {
                    sound_speed: sound_speed.clone(),
                    collar: *collar,
                    dim: spec.dim,
                    alpha: Some(spec.alpha),
                })?;
                return match &spec.y_box {
                    Some(b) => nf.metric.with_y_box(b.iter().map(|v| (v[0], v[1])).collect()),
                    None => Ok(nf.metric),
                };
            }
            FamilySpec::Tabulated { x, y, values } => {
                if spec.dim != 2 {
                    return Err(GeoError::InvalidParameter("tabulated families are two-dimensional".into()));
                }
                Arc::new(Tabulated::new(x.clone(), y.clone(), values.clone())?)
            }
        };
        let m = Self::new(spec.alpha, spec.dim, spec.x_max, family)?;
        match &spec.y_box {
            Some(b) => m.with_y_box(b.iter().map(|v| (v[0], v[1])).collect()),
            None => Ok(m),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: MetricSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn dim_y(&self) -> usize {
        self.dim - 1
    }

    /// Checks positivity of h on a sample grid of the collar.
    pub fn validate_spd(&self) -> Result<()> {
        let m = self.dim_y();
        let xs: Vec<f64> = (0..=8).map(|i| self.x_max * i as f64 / 8.0).collect();
        let per = 5usize;
        let total = per.pow(m as u32);
        for &x in &xs {
            for idx in 0..total {
                let mut rem = idx;
                let y: Vec<f64> = (0..m)
                    .map(|k| {
                        let j = rem % per;
                        rem /= per;
                        let (a, b) = self.y_box[k];
                        a + (b - a) * j as f64 / (per - 1) as f64
                    })
                    .collect();
                self.check_spd(x, &self.family.jet(x, &y).h)?;
            }
        }
        Ok(())
    }

    fn check_spd(&self, x: f64, h: &DMatrix<f64>) -> Result<()> {
        let min_eig = if h.nrows() == 1 { h[(0, 0)] } else { h.clone().symmetric_eigenvalues().min() };
        if !(min_eig >= SPD_FLOOR) {
            return Err(GeoError::NotPositiveDefinite { x, min_eig });
        }
        Ok(())
    }

    pub fn h_jet(&self, x: f64, y: &[f64]) -> HJet {
        self.family.jet(x, y)
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if !(x > 0.0) {
            return Err(GeoError::Domain(format!("metric undefined at x = {x} (boundary or outside)")));
        }
        if x > self.x_max * (1.0 + 1e-12) {
            return Err(GeoError::Domain(format!("x = {x} beyond collar extent {}", self.x_max)));
        }
        Ok(())
    }

    /// Christoffel symbols of the compactified metric dx² + h.
    fn christoffel_bar(&self, x: f64, y: &[f64]) -> Result<(Christoffel, HJet, DMatrix<f64>)> {
        let n = self.dim;
        let jet = self.family.jet(x, y);
        let hinv = jet.h.clone().try_inverse().ok_or(GeoError::NotPositiveDefinite { x, min_eig: 0.0 })?;
        let mut gam = Christoffel::zeros(n);
        if self.family.is_constant() {
            return Ok((gam, jet, hinv));
        }
        // ∂_e ḡ_{bc} nonzero only for tangential b, c.
        let dg = |e: usize, b: usize, c: usize| -> f64 {
            if b == 0 || c == 0 {
                return 0.0;
            }
            if e == 0 {
                jet.dx[(b - 1, c - 1)]
            } else {
                jet.dy[e - 1][(b - 1, c - 1)]
            }
        };
        let ginv = |a: usize, d: usize| -> f64 {
            match (a, d) {
                (0, 0) => 1.0,
                (0, _) | (_, 0) => 0.0,
                _ => hinv[(a - 1, d - 1)],
            }
        };
        for a in 0..n {
            for b in 0..n {
                for c in b..n {
                    let mut s = 0.0;
                    for d in 0..n {
                        let gi = ginv(a, d);
                        if gi != 0.0 {
                            s += gi * (dg(b, d, c) + dg(c, d, b) - dg(d, b, c));
                        }
                    }
                    gam.set(a, b, c, 0.5 * s);
                    gam.set(a, c, b, 0.5 * s);
                }
            }
        }
        Ok((gam, jet, hinv))
    }

    fn christoffel_at(&self, p: &[f64]) -> Result<Christoffel> {
        let x = p[0];
        let (mut gam, jet, _) = self.christoffel_bar(x, &p[1..])?;
        let n = self.dim;
        // Conformal factor e^{2φ} with φ = -(α/2) ln x.
        let phi0 = -0.5 * self.alpha / x;
        for a in 0..n {
            gam.add(a, a, 0, phi0);
            gam.add(a, 0, a, phi0);
        }
        gam.add(0, 0, 0, -phi0);
        for b in 1..n {
            for c in 1..n {
                gam.add(0, b, c, -jet.h[(b - 1, c - 1)] * phi0);
            }
        }
        Ok(gam)
    }

    fn christoffel_derivatives_at(&self, p: &[f64]) -> Result<Vec<Christoffel>> {
        let n = self.dim;
        let x = p[0];
        let y = &p[1..];
        let jet = self.family.jet(x, y);
        let mut out = vec![Christoffel::zeros(n); n];
        if !self.family.is_constant() {
            for (e, slot) in out.iter_mut().enumerate() {
                let step = 1e-6 * (1.0 + p[e].abs());
                let mut pp = p.to_vec();
                let mut pm = p.to_vec();
                pp[e] += step;
                pm[e] -= step;
                if e == 0 && pm[0] <= 0.0 {
                    // One-sided second-order difference next to the boundary.
                    let mut p2 = p.to_vec();
                    p2[0] += 2.0 * step;
                    let g0 = self.christoffel_bar(x, y)?.0;
                    let g1 = self.christoffel_bar(pp[0], y)?.0;
                    let g2 = self.christoffel_bar(p2[0], y)?.0;
                    for i in 0..slot.data.len() {
                        slot.data[i] = (-3.0 * g0.data[i] + 4.0 * g1.data[i] - g2.data[i]) / (2.0 * step);
                    }
                    continue;
                }
                let gp = self.christoffel_bar(pp[0], &pp[1..])?.0;
                let gm = self.christoffel_bar(pm[0], &pm[1..])?.0;
                for i in 0..slot.data.len() {
                    slot.data[i] = (gp.data[i] - gm.data[i]) / (2.0 * step);
                }
            }
        }
        let phi0 = -0.5 * self.alpha / x;
        let dphi0 = 0.5 * self.alpha / (x * x);
        // ∂_0 of the conformal correction.
        for a in 0..n {
            out[0].add(a, a, 0, dphi0);
            out[0].add(a, 0, a, dphi0);
        }
        out[0].add(0, 0, 0, -dphi0);
        for b in 1..n {
            for c in 1..n {
                out[0].add(0, b, c, -jet.h[(b - 1, c - 1)] * dphi0 - jet.dx[(b - 1, c - 1)] * phi0);
                for e in 1..n {
                    out[e].add(0, b, c, -jet.dy[e - 1][(b - 1, c - 1)] * phi0);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of h with its x- and y-derivatives: (h^{-1}, ∂_x h^{-1}, ∂_{y_k} h^{-1}).
    pub fn cometric(&self, x: f64, y: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let jet = self.family.jet(x, y);
        let hinv = jet.h.try_inverse()?;
        let dx = -(&hinv * &jet.dx * &hinv);
        let dy = jet.dy.iter().map(|d| -(&hinv * d * &hinv)).collect();
        Some((hinv, dx, dy))
    }
}

impl Geometry for GasGiantMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn metric_tensor(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        Ok(metric_jet(self, p[0], &p[1..])?.g)
    }
    fn christoffel(&self, p: &[f64]) -> Result<Christoffel> {
        if !(p[0] > 0.0) {
            return Err(GeoError::Domain(format!("x = {} not interior", p[0])));
        }
        self.christoffel_at(p)
    }
    fn christoffel_derivatives(&self, p: &[f64]) -> Result<Vec<Christoffel>> {
        if !(p[0] > 0.0) {
            return Err(GeoError::Domain(format!("x = {} not interior", p[0])));
        }
        self.christoffel_derivatives_at(p)
    }
    fn jacobi_weight(&self, p: &[f64]) -> f64 {
        p[0].powf(self.alpha)
    }
    fn jacobi_weight_rate(&self, p: &[f64], v: &[f64]) -> f64 {
        self.alpha * v[0] / p[0]
    }
}

/// Metric, inverse metric and Christoffel symbols at one point.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub x: f64,
    pub y: Vec<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub christoffel: Christoffel,
}

pub fn metric_jet(metric: &GasGiantMetric, x: f64, y: &[f64]) -> Result<MetricJet> {
    metric.check_point(x)?;
    if y.len() != metric.dim_y() {
        return Err(GeoError::InvalidParameter(format!("y has {} components, expected {}", y.len(), metric.dim_y())));
    }
    let n = metric.dim;
    let jet = metric.family.jet(x, y);
    metric.check_spd(x, &jet.h)?;
    let conf = x.powf(-metric.alpha);
    let mut g = DMatrix::zeros(n, n);
    g[(0, 0)] = conf;
    g.view_mut((1, 1), (n - 1, n - 1)).copy_from(&(&jet.h * conf));
    let hinv = jet.h.clone().try_inverse().ok_or(GeoError::NotPositiveDefinite { x, min_eig: 0.0 })?;
    let mut g_inv = DMatrix::zeros(n, n);
    g_inv[(0, 0)] = 1.0 / conf;
    g_inv.view_mut((1, 1), (n - 1, n - 1)).copy_from(&(hinv / conf));
    let mut p = vec![x];
    p.extend_from_slice(y);
    let christoffel = metric.christoffel_at(&p)?;
    Ok(MetricJet { x, y: y.to_vec(), g, g_inv, christoffel })
}

/// Exponent of x in the Riemannian density, dV_g = x^{-nα/2} dx dV_h.
pub fn volume_density_exponent(alpha: f64, n: usize) -> f64 {
    -(n as f64) * alpha / 2.0
}

fn cross_section_area(metric: &GasGiantMetric, x: f64) -> f64 {
    let m = metric.dim_y();
    let rules: Vec<(Vec<f64>, Vec<f64>)> = metric.y_box.iter().map(|&(a, b)| composite_gauss(a, b, 4, 8)).collect();
    let per = rules[0].0.len();
    let total = per.pow(m as u32);
    let mut s = 0.0;
    let mut y = vec![0.0; m];
    for idx in 0..total {
        let mut rem = idx;
        let mut w = 1.0;
        for k in 0..m {
            let j = rem % per;
            rem /= per;
            y[k] = rules[k].0[j];
            w *= rules[k].1[j];
        }
        s += w * metric.family.jet(x, &y).h.determinant().sqrt();
    }
    s
}

/// Riemannian volume of {eps ≤ x ≤ x_max} over the metric's y-box.
pub fn volume_sublevel(metric: &GasGiantMetric, eps: f64) -> Result<f64> {
    volume_slab(metric, eps, metric.x_max)
}

/// Riemannian volume of {a ≤ x ≤ b}; `a = 0` is allowed when the density is integrable.
pub fn volume_slab(metric: &GasGiantMetric, a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b > a && b <= metric.x_max * (1.0 + 1e-12)) {
        return Err(GeoError::InvalidParameter(format!("volume slab [{a}, {b}] outside (0, x_max]")));
    }
    let p = volume_density_exponent(metric.alpha, metric.dim);
    if a == 0.0 {
        if p <= -1.0 {
            return Err(GeoError::Domain("volume of the full collar is infinite for α ≥ 2/n".into()));
        }
        // x = t^2 removes the algebraic endpoint singularity.
        return integrate_adaptive(|t| 2.0 * t * (t * t).powf(p) * cross_section_area(metric, t * t), 0.0, b.sqrt(), 0.0, 1e-12);
    }
    integrate_adaptive(
        |s| {
            let x = s.exp();
            x.powf(1.0 + p) * cross_section_area(metric, x)
        },
        a.ln(),
        b.ln(),
        0.0,
        1e-12,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeRegime {
    /// Vol({x ≥ ε}) ~ ε^{1 - nα/2} with a negative exponent.
    PowerGrowth,
    /// Vol({x ≥ ε}) ~ -log ε.
    Logarithmic,
    /// Total volume finite.
    Finite,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeGrowth {
    /// Slope of the shell volumes Vol({ε_{k+1} ≤ x ≤ ε_k}) against ε_k.
    pub exponent: f64,
    pub expected: f64,
    pub regime: VolumeRegime,
    pub eps: Vec<f64>,
    pub volumes: Vec<f64>,
    /// Vol({x ≥ ε}) / (-ln ε) along the ladder.
    pub log_ratio: Vec<f64>,
}

/// Growth rate of Vol({x ≥ ε}) on the ladder ε = 2^{-k}, k in `ks`.
pub fn volume_growth(metric: &GasGiantMetric, ks: std::ops::RangeInclusive<i32>, log_band: f64) -> Result<VolumeGrowth> {
    let eps: Vec<f64> = ks.map(|k| 2f64.powi(-k)).filter(|e| *e < metric.x_max).collect();
    if eps.len() < 5 {
        return Err(GeoError::InsufficientData("volume ladder needs at least 5 rungs below x_max".into()));
    }
    let volumes = eps.iter().map(|&e| volume_sublevel(metric, e)).collect::<Result<Vec<_>>>()?;
    let shells: Vec<f64> = eps.windows(2).map(|w| volume_slab(metric, w[1], w[0])).collect::<Result<Vec<_>>>()?;
    let fit = fit_loglog(&eps[..eps.len() - 1], &shells, 1.0 + volume_density_exponent(metric.alpha, metric.dim), log_band)?;
    let regime = if fit.slope.abs() <= log_band {
        VolumeRegime::Logarithmic
    } else if fit.slope < 0.0 {
        VolumeRegime::PowerGrowth
    } else {
        VolumeRegime::Finite
    };
    let log_ratio = eps.iter().zip(&volumes).map(|(e, v)| v / (-e.ln())).collect();
    Ok(VolumeGrowth { exponent: fit.slope, expected: fit.expected, regime, eps, volumes, log_ratio })
}

/// Shape operator of the level set {x = eps} for the normalised inward field -x∂_x
/// (the field x^{α/2}∂_x rescaled by x^{1-α/2}), i.e. S = ∇(-x∂_x) restricted to
/// tangential directions. Equals (α/2) I - (x/2) h^{-1} ∂_x h.
pub fn second_fundamental_form(metric: &GasGiantMetric, eps: f64, y: &[f64]) -> Result<DMatrix<f64>> {
    let jet = metric_jet(metric, eps, y)?;
    let m = metric.dim_y();
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        for k in 0..m {
            s[(k, i)] = -eps * jet.christoffel.get(k + 1, i + 1, 0);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_christoffel(metric: &GasGiantMetric, p: &[f64], step: f64) -> Christoffel {
        let n = metric.dim;
        let g = |q: &[f64]| metric_jet(metric, q[0], &q[1..]).unwrap().g;
        let mut dg = Vec::new();
        for e in 0..n {
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[e] += step;
            pm[e] -= step;
            dg.push((g(&pp) - g(&pm)) / (2.0 * step));
        }
        let ginv = g(p).try_inverse().unwrap();
        let mut out = Christoffel::zeros(n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let s: f64 = (0..n).map(|d| ginv[(a, d)] * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)])).sum();
                    out.set(a, b, c, 0.5 * s);
                }
            }
        }
        out
    }

    #[test]
    fn model_christoffel_values() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let j = metric_jet(&m, 0.25, &[0.0]).unwrap();
        assert!((j.g[(0, 0)] - 4.0).abs() < 1e-14 && (j.g[(1, 1)] - 4.0).abs() < 1e-14);
        assert!((j.christoffel.get(0, 0, 0) + 2.0).abs() < 1e-14);
        assert!((j.christoffel.get(0, 1, 1) - 2.0).abs() < 1e-14);
        assert!((j.christoffel.get(1, 1, 0) + 2.0).abs() < 1e-14);
        let fd = fd_christoffel(&m, &[0.25, 0.0], 1e-5);
        for (a, b) in fd.data.iter().zip(&j.christoffel.data) {
            assert!((a - b).abs() < 1e-8);
        }
        let j = metric_jet(&m, 0.5, &[0.0]).unwrap();
        assert!((j.christoffel.get(1, 0, 1) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn christoffel_matches_finite_differences_for_identity_h() {
        for &alpha in &[0.3, 1.0, 1.7] {
            let m = GasGiantMetric::flat(alpha, 3, 2.0).unwrap();
            let p = [0.7, 0.1, -0.2];
            let j = metric_jet(&m, p[0], &p[1..]).unwrap();
            let fd = fd_christoffel(&m, &p, 1e-5);
            let err = fd.data.iter().zip(&j.christoffel.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "alpha {alpha}: {err}");
        }
    }

    #[test]
    fn inverse_and_symmetry_hold_for_warped_family() {
        let fam = Arc::new(Warped { dim_y: 2, a: 0.4, b: 0.3, c: 0.2, k: 2.0 });
        let m = GasGiantMetric::new(0.8, 3, 1.0, fam).unwrap();
        let p = [0.3, 0.4, -0.6];
        let j = metric_jet(&m, p[0], &p[1..]).unwrap();
        let id = &j.g * &j.g_inv;
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-12);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    assert_eq!(j.christoffel.get(a, b, c), j.christoffel.get(a, c, b));
                }
            }
        }
        let fd = fd_christoffel(&m, &p, 1e-5);
        for (a, b) in fd.data.iter().zip(&j.christoffel.data) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn christoffel_derivatives_match_differences() {
        let fam = Arc::new(Warped { dim_y: 1, a: 0.4, b: 0.3, c: 0.0, k: 2.0 });
        let m = GasGiantMetric::new(1.2, 2, 1.0, fam).unwrap();
        let p = [0.3, 0.4];
        let d = m.christoffel_derivatives(&p).unwrap();
        for e in 0..2 {
            let s = 1e-5;
            let mut pp = p;
            let mut pm = p;
            pp[e] += s;
            pm[e] -= s;
            let gp = m.christoffel(&pp).unwrap();
            let gm = m.christoffel(&pm).unwrap();
            for i in 0..8 {
                let fd = (gp.data[i] - gm.data[i]) / (2.0 * s);
                assert!((fd - d[e].data[i]).abs() < 1e-6 * (1.0 + fd.abs()), "e {e} i {i}: {fd} vs {}", d[e].data[i]);
            }
        }
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(GasGiantMetric::flat(0.0, 2, 1.0).is_err());
        assert!(GasGiantMetric::flat(2.0, 2, 1.0).is_err());
        let m = GasGiantMetric::model(1.0).unwrap();
        assert!(metric_jet(&m, 0.0, &[0.0]).is_err());
        assert!(metric_jet(&m, -1.0, &[0.0]).is_err());
        let bad = Arc::new(Warped { dim_y: 1, a: 0.0, b: -1.5, c: 0.0, k: 1.0 });
        assert!(matches!(GasGiantMetric::new(1.0, 2, 1.0, bad), Err(GeoError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn json_spec_round_trip() {
        let m = GasGiantMetric::from_json(r#"{"alpha": 1.0, "dim": 3, "x_max": 1.0, "family": {"kind": "flat"}}"#).unwrap();
        assert_eq!(m.dim, 3);
        let m = GasGiantMetric::from_json(r#"{"alpha": 0.5, "dim": 2, "x_max": 1.0, "family": {"kind": "gaussian_bump", "amplitude": 1.0, "center": 0.5, "width": 0.1}, "y_box": [[-1.0, 1.0]]}"#).unwrap();
        assert_eq!(m.y_box, vec![(-1.0, 1.0)]);
        assert!(GasGiantMetric::from_json(r#"{"alpha": 2.5, "dim": 2, "x_max": 1.0, "family": {"kind": "flat"}}"#).is_err());
    }

    #[test]
    fn volume_of_model_slab_is_exact() {
        let m = GasGiantMetric::flat(1.0, 2, 1.0).unwrap();
        let v = volume_sublevel(&m, 1e-3).unwrap();
        assert!((v - (1e-3f64).ln().abs()).abs() < 1e-10);
        let m = GasGiantMetric::flat(0.5, 2, 1.0).unwrap();
        let full = volume_slab(&m, 0.0, 1.0).unwrap();
        assert!((full - 2.0).abs() < 1e-9);
    }

    #[test]
    fn volume_growth_regimes() {
        let m = GasGiantMetric::flat(1.0, 3, 1.0).unwrap();
        let g = volume_growth(&m, 4..=20, 0.02).unwrap();
        assert!((g.exponent + 0.5).abs() < 0.02 && g.regime == VolumeRegime::PowerGrowth);
        let m = GasGiantMetric::flat(1.0, 2, 1.0).unwrap();
        let g = volume_growth(&m, 4..=20, 0.02).unwrap();
        assert_eq!(g.regime, VolumeRegime::Logarithmic);
        let r = &g.log_ratio;
        assert!((r[r.len() - 1] - 1.0).abs() < 1e-9);
        let m = GasGiantMetric::flat(0.5, 2, 1.0).unwrap();
        let g = volume_growth(&m, 4..=20, 0.02).unwrap();
        assert_eq!(g.regime, VolumeRegime::Finite);
        assert!((g.exponent - 0.5).abs() < 0.02);
    }

    #[test]
    fn second_fundamental_form_flat_is_half_alpha() {
        for &alpha in &[0.5, 1.0, 1.5] {
            let m = GasGiantMetric::flat(alpha, 3, 1.0).unwrap();
            for &eps in &[1e-4, 0.1, 0.7] {
                let s = second_fundamental_form(&m, eps, &[0.1, 0.2]).unwrap();
                assert!((s - DMatrix::identity(2, 2) * (alpha / 2.0)).amax() < 1e-14);
            }
        }
        let fam = Arc::new(Warped { dim_y: 1, a: 0.4, b: 0.3, c: 0.0, k: 2.0 });
        let m = GasGiantMetric::new(0.5, 2, 1.0, fam).unwrap();
        let s = second_fundamental_form(&m, 1e-4, &[0.3]).unwrap();
        assert!((s[(0, 0)] - 0.25).abs() < 1e-3);
    }
}
