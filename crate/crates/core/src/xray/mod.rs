//! Geodesic X-ray transform, the integral function u^f, its transport equation and
//! boundary determination from short geodesics.

pub mod injectivity;
pub mod pestov;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fit::fit_loglog;
use crate::flow::shooting::{connect_boundary_points, ShootingOptions};
use crate::flow::{flow_for_time, integrate_with, FlowOptions, PhasePoint, Trajectory, TrajectoryStatus};
use crate::metric::GasGiantMetric;

/// Order to which a field vanishes at x = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OrderRepr", into = "OrderRepr")]
pub enum VanishingOrder {
    Finite(u32),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OrderRepr {
    Finite(u32),
    Named(String),
}

impl TryFrom<OrderRepr> for VanishingOrder {
    type Error = String;
    fn try_from(r: OrderRepr) -> std::result::Result<Self, String> {
        match r {
            OrderRepr::Finite(k) => Ok(VanishingOrder::Finite(k)),
            OrderRepr::Named(s) if s == "infinite" => Ok(VanishingOrder::Infinite),
            OrderRepr::Named(s) => Err(format!("unknown vanishing order {s:?}")),
        }
    }
}

impl From<VanishingOrder> for OrderRepr {
    fn from(v: VanishingOrder) -> Self {
        match v {
            VanishingOrder::Finite(k) => OrderRepr::Finite(k),
            VanishingOrder::Infinite => OrderRepr::Named("infinite".into()),
        }
    }
}

impl VanishingOrder {
    /// Exponent used when checking the order numerically.
    fn test_power(self) -> f64 {
        match self {
            VanishingOrder::Finite(k) => k as f64,
            VanishingOrder::Infinite => 8.0,
        }
    }

    pub fn at_least(self, k: u32) -> bool {
        match self {
            VanishingOrder::Finite(j) => j >= k,
            VanishingOrder::Infinite => true,
        }
    }
}

fn bump(r: f64) -> f64 {
    if r < 1.0 {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum FieldKind {
    Zero,
    Constant {
        value: f64,
    },
    /// amplitude · ψ(|(x, y) − center| / radius) with ψ(r) = exp(1 − 1/(1 − r²)) on r < 1.
    Bump {
        center: Vec<f64>,
        radius: f64,
        amplitude: f64,
    },
    /// x^power · Σ_j c_j (y₀ − shift)^j.
    Poly {
        power: u32,
        coefficients: Vec<f64>,
        #[serde(default)]
        shift: f64,
    },
    /// x^power · amplitude · ψ(|y − center| / radius), times ψ(x / x_cutoff) when a cutoff is given.
    PowerBump {
        power: u32,
        center: Vec<f64>,
        radius: f64,
        amplitude: f64,
        #[serde(default)]
        x_cutoff: Option<f64>,
    },
    /// Bilinear interpolation of values[i][j] at (x[i], y[j]); zero outside the table.
    Tabulated {
        x: Vec<f64>,
        y: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarField {
    #[serde(flatten)]
    pub kind: FieldKind,
    pub vanishing_order: VanishingOrder,
}

impl ScalarField {
    pub fn new(kind: FieldKind, vanishing_order: VanishingOrder) -> Self {
        Self { kind, vanishing_order }
    }

    pub fn zero() -> Self {
        Self::new(FieldKind::Zero, VanishingOrder::Infinite)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(FieldKind::Constant { value }, VanishingOrder::Finite(0))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn eval(&self, x: f64, y: &[f64]) -> f64 {
        match &self.kind {
            FieldKind::Zero => 0.0,
            FieldKind::Constant { value } => *value,
            FieldKind::Bump { center, radius, amplitude } => {
                let r2 = (x - center[0]).powi(2) + y.iter().zip(&center[1..]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                amplitude * bump(r2.sqrt() / radius)
            }
            FieldKind::Poly { power, coefficients, shift } => {
                let t = y[0] - shift;
                x.powi(*power as i32) * coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            FieldKind::PowerBump { power, center, radius, amplitude, x_cutoff } => {
                let r2: f64 = y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                let cut = x_cutoff.map_or(1.0, |c| bump(x / c));
                x.powi(*power as i32) * amplitude * bump(r2.sqrt() / radius) * cut
            }
            FieldKind::Tabulated { x: xs, y: ys, values } => {
                let locate = |g: &[f64], t: f64| -> Option<(usize, f64)> {
                    if g.len() < 2 || t < g[0] || t > g[g.len() - 1] {
                        return None;
                    }
                    let i = g.partition_point(|v| *v <= t).clamp(1, g.len() - 1) - 1;
                    Some((i, (t - g[i]) / (g[i + 1] - g[i])))
                };
                match (locate(xs, x), locate(ys, y[0])) {
                    (Some((i, a)), Some((j, b))) => {
                        (1.0 - a) * (1.0 - b) * values[i][j] + a * (1.0 - b) * values[i + 1][j] + (1.0 - a) * b * values[i][j + 1] + a * b * values[i + 1][j + 1]
                    }
                    _ => 0.0,
                }
            }
        }
    }

    /// Checks |f(x, y)| ≤ C x^k on x ∈ [1e-6, 1e-2] over a sample of y in the metric's box,
    /// returning the observed constant C.
    pub fn verify_vanishing_order(&self, metric: &GasGiantMetric) -> Result<f64> {
        let k = self.vanishing_order.test_power();
        let m = metric.dim_y();
        let ys: Vec<Vec<f64>> = (0..=8)
            .map(|i| metric.y_box.iter().take(m).map(|(a, b)| a + (b - a) * i as f64 / 8.0).collect())
            .collect();
        let ratio = |x: f64| ys.iter().map(|y| self.eval(x, y).abs() / x.powf(k)).fold(0.0, f64::max);
        let xs: Vec<f64> = (0..=40).map(|i| 1e-6 * 1e4f64.powf(i as f64 / 40.0)).collect();
        let top = xs.iter().filter(|&&x| x >= 1e-3).map(|&x| ratio(x)).fold(0.0, f64::max);
        let all = xs.iter().map(|&x| ratio(x)).fold(0.0, f64::max);
        if !all.is_finite() || all > 2.0 * top + 1e-300 {
            return Err(GeoError::InvalidParameter(format!("field does not vanish to the declared order near x = 0 (ratio {all:e} vs {top:e})")));
        }
        Ok(all)
    }
}

/// A maximal geodesic, named by one of its points and a direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RaySpec {
    /// Through (x, y) at angle θ from the inward normal −∂_x, turning towards +y₀.
    Through { x: f64, y: Vec<f64>, theta: f64 },
    Covector { x: f64, y: Vec<f64>, xi: f64, eta: Vec<f64> },
}

impl RaySpec {
    pub fn phase_point(&self, metric: &GasGiantMetric) -> Result<PhasePoint> {
        match self {
            RaySpec::Through { x, y, theta } => {
                let h = metric.h_jet(*x, y).h;
                let mut eta = vec![0.0; y.len()];
                if let Some(e) = eta.first_mut() {
                    *e = theta.sin() * h[(0, 0)].sqrt();
                }
                PhasePoint::new(*x, y.clone(), -theta.cos(), eta).unit_speed(metric)
            }
            RaySpec::Covector { x, y, xi, eta } => PhasePoint::new(*x, y.clone(), *xi, eta.clone()).unit_speed(metric),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct XrayOptions {
    pub flow: FlowOptions,
    /// Accept rays leaving through the collar top x = x_max (fields must vanish there).
    pub allow_escape: bool,
}

impl Default for XrayOptions {
    fn default() -> Self {
        Self { flow: FlowOptions { rtol: 1e-12, atol: 1e-15, ..FlowOptions::quiet() }, allow_escape: false }
    }
}

fn check_outcome(tr: &Trajectory, opts: &XrayOptions) -> Result<()> {
    match tr.status {
        TrajectoryStatus::Exited => Ok(()),
        TrajectoryStatus::Escaped if opts.allow_escape => Ok(()),
        TrajectoryStatus::Escaped => Err(GeoError::Domain("ray leaves the top of the collar".into())),
        s => Err(GeoError::NoConvergence(format!("ray is trapped ({s:?})"))),
    }
}

/// Forward integrals of several functions along the orbit of `p` up to its exit.
pub fn forward_integrals<F>(metric: &GasGiantMetric, p: &PhasePoint, k: usize, f: F, opts: &XrayOptions) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    let tr = integrate_with(metric, p, &opts.flow, Some((k, &f)))?;
    check_outcome(&tr, opts)?;
    Ok(tr.integrals)
}

/// u^f(z, ζ) = ∫₀^τ f(φ_t(z, ζ)) dt.
pub fn uf_integral(metric: &GasGiantMetric, field: &ScalarField, p: &PhasePoint, opts: &XrayOptions) -> Result<f64> {
    if matches!(field.kind, FieldKind::Zero) {
        check_outcome(&integrate_with(metric, p, &opts.flow, None)?, opts)?;
        return Ok(0.0);
    }
    Ok(forward_integrals(metric, p, 1, |x, y, o| o[0] = field.eval(x, y), opts)?[0])
}

/// ∫ f along the maximal geodesic through the ray's point.
pub fn xray_transform(metric: &GasGiantMetric, field: &ScalarField, ray: &RaySpec, opts: &XrayOptions) -> Result<f64> {
    let p = ray.phase_point(metric)?;
    let (a, b) = rayon::join(|| uf_integral(metric, field, &p, opts), || uf_integral(metric, field, &p.reversed(), opts));
    Ok(a? + b?)
}

/// Nodes (x, y₀, θ) of a cosphere-bundle sample in two dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleNodes {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportResidual {
    pub h: f64,
    pub sup: f64,
    pub nodes: usize,
}

/// sup |X u^f + f| over the nodes, with X applied by flow differencing
/// (u^f(φ_h) − u^f(φ_{−h})) / 2h.
pub fn transport_residual(metric: &GasGiantMetric, field: &ScalarField, nodes: &BundleNodes, h: f64, opts: &XrayOptions) -> Result<TransportResidual> {
    if !field.vanishing_order.at_least(4) {
        return Err(GeoError::InvalidParameter("transport residual needs a field vanishing to order at least 4".into()));
    }
    if metric.dim != 2 {
        return Err(GeoError::InvalidParameter("bundle nodes are two-dimensional".into()));
    }
    let pts: Vec<(f64, f64, f64)> = nodes.x.iter().flat_map(|&x| nodes.y.iter().flat_map(move |&y| nodes.theta.iter().map(move |&t| (x, y, t)))).collect();
    let res = pts
        .par_iter()
        .map(|&(x, y, t)| {
            let p = RaySpec::Through { x, y: vec![y], theta: t }.phase_point(metric)?;
            let (pp, _) = flow_for_time(metric, &p, h, &opts.flow, None)?;
            let (pm, _) = flow_for_time(metric, &p, -h, &opts.flow, None)?;
            let up = uf_integral(metric, field, &pp, opts)?;
            let um = uf_integral(metric, field, &pm, opts)?;
            Ok(((up - um) / (2.0 * h) + field.eval(x, &[y])).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TransportResidual { h, sup: res.iter().copied().fold(0.0, f64::max), nodes: res.len() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportConvergence {
    pub coarse: TransportResidual,
    pub fine: TransportResidual,
    pub ratio: f64,
}

/// Residuals at h and h/2; their ratio is 4 for centred differencing.
pub fn transport_convergence(metric: &GasGiantMetric, field: &ScalarField, nodes: &BundleNodes, h: f64, opts: &XrayOptions) -> Result<TransportConvergence> {
    let coarse = transport_residual(metric, field, nodes, h, opts)?;
    let fine = transport_residual(metric, field, nodes, h / 2.0, opts)?;
    if !(fine.sup < coarse.sup) {
        return Err(GeoError::InsufficientData(format!("residual not decreasing under refinement ({:e} -> {:e})", coarse.sup, fine.sup)));
    }
    Ok(TransportConvergence { ratio: coarse.sup / fine.sup, coarse, fine })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryProbe {
    pub y_bar: f64,
    pub offsets: Vec<f64>,
    /// (1/τ) ∫ f over the geodesic from ȳ to ȳ + offset.
    pub averages: Vec<f64>,
    pub lengths: Vec<f64>,
    pub apex_heights: Vec<f64>,
    /// Richardson limit 2A(d/2) − A(d) from the two shortest geodesics.
    pub limit: f64,
    pub boundary_value: f64,
    /// Exponent of |average| against apex height, when the averages are nonzero.
    pub depth_exponent: Option<f64>,
}

/// Averages of f over the geodesics joining ȳ to ȳ + 2^{-k}, for a two-dimensional metric.
pub fn boundary_determination_probe(metric: &GasGiantMetric, field: &ScalarField, y_bar: f64, ks: std::ops::RangeInclusive<i32>, opts: &XrayOptions) -> Result<BoundaryProbe> {
    if metric.dim != 2 {
        return Err(GeoError::InvalidParameter("boundary probe is implemented for one-dimensional boundaries".into()));
    }
    let so = ShootingOptions { flow: opts.flow, ..ShootingOptions::default() };
    let offsets: Vec<f64> = ks.map(|k| 2f64.powi(-k)).collect();
    if offsets.len() < 2 {
        return Err(GeoError::InsufficientData("need at least two offsets".into()));
    }
    let rows = offsets
        .par_iter()
        .map(|&d| {
            let c = connect_boundary_points(metric, &[y_bar], &[y_bar + d], &so, false)?;
            let (a, b) = rayon::join(|| uf_integral(metric, field, &c.apex, opts), || uf_integral(metric, field, &c.apex.reversed(), opts));
            Ok(((a? + b?) / c.distance, c.distance, c.apex.x))
        })
        .collect::<Result<Vec<_>>>()?;
    let averages: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let n = averages.len();
    let limit = 2.0 * averages[n - 1] - averages[n - 2];
    let apex_heights: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let depth_exponent = if averages.iter().all(|a| a.abs() > 0.0) && n >= 4 {
        let abs: Vec<f64> = averages.iter().map(|a| a.abs()).collect();
        fit_loglog(&apex_heights, &abs, 1.0, 0.05).ok().map(|f| f.slope)
    } else {
        None
    };
    Ok(BoundaryProbe {
        y_bar,
        offsets,
        averages,
        lengths: rows.iter().map(|r| r.1).collect(),
        apex_heights,
        limit,
        boundary_value: field.eval(0.0, &[y_bar]),
        depth_exponent,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::quad::integrate_adaptive;

    fn model() -> GasGiantMetric {
        GasGiantMetric::model(1.0).unwrap()
    }

    fn x4_bump() -> ScalarField {
        ScalarField::new(FieldKind::PowerBump { power: 4, center: vec![0.0], radius: 1.0, amplitude: 1.0, x_cutoff: None }, VanishingOrder::Finite(4))
    }

    #[test]
    fn zero_field_integrates_to_zero() {
        let m = model();
        for t in [0.3, 1.0, 2.5] {
            let r = RaySpec::Through { x: 0.5, y: vec![0.0], theta: t };
            assert_eq!(xray_transform(&m, &ScalarField::zero(), &r, &XrayOptions::default()).unwrap(), 0.0);
        }
    }

    #[test]
    fn unit_field_gives_cycloid_length() {
        let m = model();
        let r = RaySpec::Covector { x: 1.0, y: vec![0.0], xi: 0.0, eta: vec![1.0] };
        let v = xray_transform(&m, &ScalarField::constant(1.0), &r, &XrayOptions::default()).unwrap();
        assert!((v - 2.0 * PI).abs() < 1e-8, "{v}");
    }

    #[test]
    fn odd_field_cancels_over_symmetric_chord() {
        let m = model();
        let f = ScalarField::new(FieldKind::Poly { power: 0, coefficients: vec![0.0, 1.0, 0.0, 0.5], shift: 0.3 }, VanishingOrder::Finite(0));
        let r = RaySpec::Covector { x: 0.7, y: vec![0.3], xi: 0.0, eta: vec![1.0] };
        assert!(xray_transform(&m, &f, &r, &XrayOptions::default()).unwrap().abs() < 1e-8);
    }

    #[test]
    fn uf_matches_cycloid_quadrature_for_x_squared() {
        let m = model();
        let x0: f64 = 0.8;
        let f = ScalarField::new(FieldKind::Poly { power: 2, coefficients: vec![1.0], shift: 0.0 }, VanishingOrder::Finite(2));
        let p = PhasePoint::apex(&m, x0, &[0.0], &[1.0]).unwrap();
        let u = uf_integral(&m, &f, &p, &XrayOptions::default()).unwrap();
        // Apex-to-exit half: x = x₀(1 + cos φ)/2 with dt = √x₀ dφ.
        let oracle = integrate_adaptive(|phi| (x0 * (1.0 + phi.cos()) / 2.0).powi(2) * x0.sqrt(), 0.0, PI, 1e-14, 1e-12).unwrap();
        assert!((u - oracle).abs() < 1e-9, "{u} {oracle}");
    }

    #[test]
    fn uf_is_additive_along_the_flow() {
        let m = GasGiantMetric::new(0.8, 2, 5.0, std::sync::Arc::new(crate::metric::Warped { dim_y: 1, a: 0.2, b: 0.1, c: 0.0, k: 1.0 })).unwrap();
        let f = x4_bump();
        let o = XrayOptions::default();
        let p = RaySpec::Through { x: 0.6, y: vec![0.1], theta: 2.0 }.phase_point(&m).unwrap();
        let g = |x: f64, y: &[f64], out: &mut [f64]| out[0] = f.eval(x, y);
        for s in [0.1, 0.7] {
            let (q, i) = flow_for_time(&m, &p, s, &o.flow, Some((1, &g))).unwrap();
            let lhs = uf_integral(&m, &f, &p, &o).unwrap();
            let rhs = i[0] + uf_integral(&m, &f, &q, &o).unwrap();
            assert!((lhs - rhs).abs() < 1e-8, "{lhs} {rhs}");
        }
    }

    #[test]
    fn transport_equation_holds_to_second_order() {
        let m = model();
        let f = x4_bump();
        let nodes = BundleNodes { x: vec![0.3, 0.9], y: vec![-0.2, 0.4], theta: vec![0.5, 2.0, 4.0] };
        let o = XrayOptions::default();
        let r = transport_residual(&m, &f, &nodes, 1e-4, &o).unwrap();
        assert!(r.sup < 1e-6, "{}", r.sup);
        let c = transport_convergence(&m, &f, &nodes, 0.02, &o).unwrap();
        assert!(c.ratio > 3.5 && c.ratio < 4.5, "{}", c.ratio);
        assert_eq!(transport_residual(&m, &ScalarField::zero(), &nodes, 1e-3, &o).unwrap().sup, 0.0);
        assert!(transport_residual(&m, &ScalarField::constant(1.0), &nodes, 1e-3, &o).is_err());
    }

    #[test]
    fn boundary_probe_recovers_boundary_values() {
        let m = model();
        let o = XrayOptions::default();
        let c = boundary_determination_probe(&m, &ScalarField::constant(2.5), 0.1, 3..=6, &o).unwrap();
        assert!(c.averages.iter().all(|a| (a - 2.5).abs() < 1e-9));
        let f = ScalarField::new(FieldKind::Poly { power: 0, coefficients: vec![1.0, 0.5, -0.3], shift: 0.0 }, VanishingOrder::Finite(0));
        let p = boundary_determination_probe(&m, &f, 0.2, 6..=12, &o).unwrap();
        assert!((p.limit - p.boundary_value).abs() < 1e-4, "{} {}", p.limit, p.boundary_value);
        let g = ScalarField::new(FieldKind::Poly { power: 1, coefficients: vec![1.0], shift: 0.0 }, VanishingOrder::Finite(1));
        let q = boundary_determination_probe(&m, &g, 0.0, 3..=11, &o).unwrap();
        assert!(q.averages.windows(2).all(|w| w[1] < w[0]));
        assert!((q.depth_exponent.unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn vanishing_order_is_checked() {
        let m = model();
        assert!(x4_bump().verify_vanishing_order(&m).is_ok());
        let wrong = ScalarField::new(FieldKind::Poly { power: 2, coefficients: vec![1.0], shift: 0.0 }, VanishingOrder::Finite(4));
        assert!(wrong.verify_vanishing_order(&m).is_err());
        let inner = ScalarField::new(FieldKind::Bump { center: vec![0.5, 0.0], radius: 0.2, amplitude: 1.0 }, VanishingOrder::Infinite);
        assert!(inner.verify_vanishing_order(&m).is_ok());
    }

    #[test]
    fn field_json_round_trip() {
        let f = ScalarField::from_json(r#"{"kind": "bump", "vanishing_order": "infinite", "params": {"center": [0.5, 0.0], "radius": 0.2, "amplitude": 1.0}}"#).unwrap();
        assert_eq!(f.vanishing_order, VanishingOrder::Infinite);
        let back = serde_json::to_string(&f).unwrap();
        assert!((ScalarField::from_json(&back).unwrap().eval(0.5, &[0.0]) - 1.0).abs() < 1e-15);
        let p = ScalarField::from_json(r#"{"kind": "poly", "vanishing_order": 4, "params": {"power": 4, "coefficients": [1.0]}}"#).unwrap();
        assert_eq!(p.eval(0.5, &[3.0]), 0.0625);
    }
}
