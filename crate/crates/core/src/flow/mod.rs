//! Cogeodesic flow of H = ½x^α(ξ² + h^{ij}η_iη_j) through the degenerate collar.
//!
//! Away from the boundary the Hamiltonian system is integrated in arc length t.
//! Once a ray heads outward with x below the switch height it is continued in
//! σ = u^{(2−α)/(2+α)}, u = x^{1+α/2}/(1+α/2); in σ the exit tail is smooth and
//! dt/dσ stays bounded, so the march lands exactly on x = 0.

pub mod asymptotics;
pub mod distance;
pub mod shooting;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::metric::curvature::boundary_distance;
use crate::metric::GasGiantMetric;
use crate::ode::{integrate, locate_event, Control, OdeOptions};

/// Integrand f(x, y, out) evaluated along rays; writes one value per component.
pub type Integrand<'a> = &'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub y: Vec<f64>,
    pub xi: f64,
    pub eta: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: f64, y: Vec<f64>, xi: f64, eta: Vec<f64>) -> Self {
        Self { x, y, xi, eta }
    }

    pub fn hamiltonian(&self, metric: &GasGiantMetric) -> Result<f64> {
        check_shape(metric, self)?;
        let hinv = inverse_h(metric, self.x, &self.y)?;
        let eta = DVector::from_column_slice(&self.eta);
        Ok(0.5 * self.x.powf(metric.alpha) * (self.xi * self.xi + eta.dot(&(&hinv * &eta))))
    }

    /// Rescales the covector so that H = ½.
    pub fn unit_speed(mut self, metric: &GasGiantMetric) -> Result<Self> {
        let h = self.hamiltonian(metric)?;
        if !(h > 0.0) {
            return Err(GeoError::Degenerate("zero covector has no direction".into()));
        }
        let s = (0.5 / h).sqrt();
        self.xi *= s;
        self.eta.iter_mut().for_each(|v| *v *= s);
        Ok(self)
    }

    /// Unit-speed apex state (ξ = 0) at height `x0` with tangential covector along `dir`.
    pub fn apex(metric: &GasGiantMetric, x0: f64, y0: &[f64], dir: &[f64]) -> Result<Self> {
        Self::new(x0, y0.to_vec(), 0.0, dir.to_vec()).unit_speed(metric)
    }

    /// Same base point with the covector negated (time reversal).
    pub fn reversed(&self) -> Self {
        Self { x: self.x, y: self.y.clone(), xi: -self.xi, eta: self.eta.iter().map(|v| -v).collect() }
    }

    fn pack(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(2 + 2 * self.y.len());
        s.push(self.x);
        s.extend_from_slice(&self.y);
        s.push(self.xi);
        s.extend_from_slice(&self.eta);
        s
    }

    fn unpack(s: &[f64], m: usize) -> Self {
        Self { x: s[0], y: s[1..1 + m].to_vec(), xi: s[1 + m], eta: s[2 + m..2 + 2 * m].to_vec() }
    }
}

fn check_shape(metric: &GasGiantMetric, p: &PhasePoint) -> Result<()> {
    let m = metric.dim_y();
    if p.y.len() != m || p.eta.len() != m {
        return Err(GeoError::InvalidParameter(format!("phase point needs {m} tangential components")));
    }
    if !(p.x > 0.0) {
        return Err(GeoError::Domain(format!("phase point at x = {} is not interior", p.x)));
    }
    Ok(())
}

fn inverse_h(metric: &GasGiantMetric, x: f64, y: &[f64]) -> Result<DMatrix<f64>> {
    metric.h_jet(x, y).h.try_inverse().ok_or(GeoError::NotPositiveDefinite { x, min_eig: 0.0 })
}

/// Hamiltonian vector field written into `out` with layout (x, y, ξ, η).
fn phase_rhs(metric: &GasGiantMetric, s: &[f64], out: &mut [f64]) -> bool {
    let m = metric.dim_y();
    let x = s[0];
    if !(x > 0.0) {
        return false;
    }
    let y = &s[1..1 + m];
    let xi = s[1 + m];
    let eta = DVector::from_column_slice(&s[2 + m..2 + 2 * m]);
    let Some((hinv, dx_hinv, dy_hinv)) = metric.cometric(x, y) else {
        return false;
    };
    let xa = x.powf(metric.alpha);
    let v = &hinv * &eta;
    let e2 = eta.dot(&v);
    out[0] = xa * xi;
    for i in 0..m {
        out[1 + i] = xa * v[i];
    }
    let ham = 0.5 * xa * (xi * xi + e2);
    out[1 + m] = -metric.alpha * ham / x - 0.5 * xa * eta.dot(&(&dx_hinv * &eta));
    for i in 0..m {
        out[2 + m + i] = -0.5 * xa * eta.dot(&(&dy_hinv[i] * &eta));
    }
    out.iter().all(|v| v.is_finite())
}

/// Right-hand side of the cogeodesic equations at `p`, returned as a tangent vector
/// in phase-point layout.
pub fn hamiltonian_rhs(metric: &GasGiantMetric, p: &PhasePoint) -> Result<PhasePoint> {
    check_shape(metric, p)?;
    let s = p.pack();
    let mut out = vec![0.0; s.len()];
    if !phase_rhs(metric, &s, &mut out) {
        return Err(GeoError::NonFinite { t: 0.0 });
    }
    Ok(PhasePoint::unpack(&out, metric.dim_y()))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Height below which outgoing rays switch to the tail parametrization;
    /// `None` uses min(1e-2, x_max/10).
    pub x_switch: Option<f64>,
    /// Arc-length budget before a ray is declared trapped; `None` uses 50 diameters.
    pub arc_budget: Option<f64>,
    pub record_samples: bool,
    /// Geometric output stops in the tail, per decade of σ.
    pub tail_stops_per_decade: usize,
    pub tail_decades: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, x_switch: None, arc_budget: None, record_samples: true, tail_stops_per_decade: 10, tail_decades: 12 }
    }
}

impl FlowOptions {
    pub fn quiet() -> Self {
        Self { record_samples: false, ..Self::default() }
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions::with_tol(self.rtol, self.atol)
    }
}

/// Rough diameter of the collar: two normal legs plus the y-box at the top of the collar.
pub fn diameter_estimate(metric: &GasGiantMetric) -> f64 {
    let top = metric.x_max.powf(-metric.alpha / 2.0);
    let y0: Vec<f64> = metric.y_box.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let hmax = metric.h_jet(metric.x_max, &y0).h.symmetric_eigenvalues().max().max(0.0).sqrt();
    let width: f64 = metric.y_box.iter().map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    2.0 * boundary_distance(metric.alpha, metric.x_max) + width * hmax * top
}

fn x_switch(metric: &GasGiantMetric, opts: &FlowOptions) -> f64 {
    opts.x_switch.unwrap_or((1e-2f64).min(metric.x_max / 10.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub point: PhasePoint,
}

/// Near-exit sample with τ = T − t and the offset y − ȳ carried at full relative precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailSample {
    pub tau: f64,
    pub x: f64,
    pub dy: Vec<f64>,
    pub xi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitRecord {
    /// Exit time T.
    pub time: f64,
    pub y_bar: Vec<f64>,
    pub eta_bar: Vec<f64>,
    /// h₀-dual vector of η̄.
    pub v_bar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Exited,
    /// Left the top of the collar (x ≥ x_max).
    Escaped,
    Alive,
    TrappedSuspect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: PhasePoint,
    pub samples: Vec<FlowSample>,
    pub exit: Option<ExitRecord>,
    /// Crossing of the collar top x = x_max, for escaped rays.
    pub escape: Option<FlowSample>,
    pub status: TrajectoryStatus,
    /// Values of the integrands accumulated along the ray.
    pub integrals: Vec<f64>,
    /// Local maxima of x (ξ crossing zero from above), located by bisection.
    pub apexes: Vec<FlowSample>,
    /// Largest |H − ½| seen in the arc-length phase.
    pub energy_drift: f64,
    /// Time at which the tail parametrization took over, if it did.
    pub switch_time: Option<f64>,
    /// Near-exit samples integrated outward from the exit point.
    pub tail_fine: Vec<TailSample>,
    pub steps: usize,
}

impl Trajectory {
    pub fn exit_time(&self) -> Option<f64> {
        self.exit.as_ref().map(|e| e.time)
    }

    /// Samples with time-to-exit τ = T − t, excluding the exit point itself.
    pub fn tail(&self) -> Vec<(f64, &PhasePoint)> {
        match &self.exit {
            Some(e) => self.samples.iter().filter(|s| e.time - s.t > 0.0).map(|s| (e.time - s.t, &s.point)).collect(),
            None => Vec::new(),
        }
    }
}

/// Integrates the unit-speed ray from `start` until it exits through x = 0.
pub fn integrate_to_boundary(metric: &GasGiantMetric, start: &PhasePoint, opts: &FlowOptions) -> Result<Trajectory> {
    integrate_with(metric, start, opts, None)
}

/// Integrates the ray and accumulates ∫ f(γ(t)) dt for the given integrand with `k` components.
pub fn integrate_with(metric: &GasGiantMetric, start: &PhasePoint, opts: &FlowOptions, integrand: Option<(usize, Integrand)>) -> Result<Trajectory> {
    check_shape(metric, start)?;
    let h0 = start.hamiltonian(metric)?;
    if (h0 - 0.5).abs() > 1e-10 {
        return Err(GeoError::InvalidParameter(format!("start is not unit speed: H = {h0}")));
    }
    let m = metric.dim_y();
    let alpha = metric.alpha;
    let k = integrand.map(|i| i.0).unwrap_or(0);
    let ps = 2 + 2 * m;
    let budget = opts.arc_budget.unwrap_or_else(|| 50.0 * diameter_estimate(metric));
    let xs = x_switch(metric, opts);
    let mut state = start.pack();
    state.extend(std::iter::repeat(0.0).take(k));

    let mut rhs = |_t: f64, s: &[f64], out: &mut [f64]| {
        if !phase_rhs(metric, &s[..ps], &mut out[..ps]) {
            return false;
        }
        if let Some((_, f)) = integrand {
            f(s[0], &s[1..1 + m], &mut out[ps..]);
        }
        true
    };

    let mut samples = Vec::new();
    if opts.record_samples {
        samples.push(FlowSample { t: 0.0, point: start.clone() });
    }
    let mut apex_brackets: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    let mut energy_drift = (h0 - 0.5).abs();
    let mut status = TrajectoryStatus::Alive;
    let ready = |s: &[f64]| {
        let x = s[0];
        let xi = s[1 + m];
        xi < 0.0 && x <= xs && x.powf(alpha) * xi * xi >= 0.25
    };
    let mut steps = 0;
    let mut escape_bracket = None;
    let (t_s, mut st) = if ready(&state) {
        (0.0, state.clone())
    } else {
        let out = integrate(&mut rhs, 0.0, &state, budget, &[], &opts.ode(), |v| {
            let p = PhasePoint::unpack(&v.y[..ps], m);
            if let Ok(h) = p.hamiltonian(metric) {
                energy_drift = energy_drift.max((h - 0.5).abs());
            }
            if v.y_prev[1 + m] > 0.0 && v.y[1 + m] <= 0.0 {
                apex_brackets.push((v.t_prev, v.y_prev.to_vec(), v.t));
            }
            if opts.record_samples {
                samples.push(FlowSample { t: v.t, point: p });
            }
            if v.y[0] >= metric.x_max {
                status = TrajectoryStatus::Escaped;
                escape_bracket = Some((v.t_prev, v.y_prev.to_vec(), v.t));
                return Control::Stop;
            }
            if ready(v.y) {
                return Control::Stop;
            }
            Control::Continue
        })?;
        steps += out.steps;
        if !out.stopped {
            status = TrajectoryStatus::TrappedSuspect;
        }
        (out.t, out.y)
    };
    let mut apexes = Vec::new();
    for (t0, y0, t1) in apex_brackets {
        let (ta, ya) = locate_event(&mut rhs, t0, &y0, t1, |_, s| s[1 + m], 1e-12)?;
        apexes.push(FlowSample { t: ta, point: PhasePoint::unpack(&ya[..ps], m) });
    }
    let mut escape = None;
    if let Some((t0, y0, t1)) = escape_bracket {
        let (te, ye) = locate_event(&mut rhs, t0, &y0, t1, |_, s| s[0] - metric.x_max, 1e-13)?;
        escape = Some(FlowSample { t: te, point: PhasePoint::unpack(&ye[..ps], m) });
        st = ye;
    }
    if status != TrajectoryStatus::Alive {
        let integrals = st[ps..].to_vec();
        return Ok(Trajectory { start: start.clone(), samples, exit: None, escape, status, integrals, apexes, energy_drift, switch_time: None, tail_fine: Vec::new(), steps });
    }

    // Tail in σ: state (y, η, t, I).
    let a = 1.0 + alpha / 2.0;
    let beta = (2.0 - alpha) / (2.0 + alpha);
    let dt_dsigma = a.powf(-alpha / a) / beta;
    let x_of = |sig: f64| a.powf(1.0 / a) * sig.powf(2.0 / (2.0 - alpha));
    let du_dsigma = |sig: f64| sig.powf(2.0 * alpha / (2.0 - alpha)) / beta;
    let x_sw = st[0];
    let sigma_s = (x_sw.powf(a) / a).powf(beta);
    let mut tail = Vec::with_capacity(2 * m + 1 + k);
    tail.extend_from_slice(&st[1..1 + m]);
    tail.extend_from_slice(&st[2 + m..2 + 2 * m]);
    tail.push(t_s);
    tail.extend_from_slice(&st[ps..]);
    let kappa = |x: f64, hinv: &DMatrix<f64>, eta: &DVector<f64>| {
        let k2 = 1.0 - x.powf(alpha) * eta.dot(&(hinv * eta));
        if k2 > 0.0 {
            Some(k2.sqrt())
        } else {
            None
        }
    };
    let tail_rhs = |sig: f64, s: &[f64], out: &mut [f64]| {
        let sig = sig.max(0.0);
        let x = x_of(sig);
        let y = &s[..m];
        let eta = DVector::from_column_slice(&s[m..2 * m]);
        let Some((hinv, _, dy_hinv)) = metric.cometric(x, y) else {
            return false;
        };
        let Some(kk) = kappa(x, &hinv, &eta) else {
            return false;
        };
        let du = du_dsigma(sig);
        let v = &hinv * &eta;
        for i in 0..m {
            out[i] = -v[i] / kk * du;
            out[m + i] = 0.5 * eta.dot(&(&dy_hinv[i] * &eta)) / kk * du;
        }
        let dt = -dt_dsigma / kk;
        out[2 * m] = dt;
        if let Some((_, f)) = integrand {
            f(x, y, &mut out[2 * m + 1..]);
            for o in out[2 * m + 1..].iter_mut() {
                *o *= dt;
            }
        }
        out.iter().all(|v| v.is_finite())
    };
    let per = opts.tail_stops_per_decade.max(1) as f64;
    let stops: Vec<f64> = (1..=opts.tail_decades * opts.tail_stops_per_decade).map(|j| sigma_s * 10f64.powf(-(j as f64) / per)).collect();
    let mut tail_samples = Vec::new();
    let out = integrate(tail_rhs, sigma_s, &tail, 0.0, &stops, &opts.ode(), |v| {
        if opts.record_samples && v.t > 0.0 {
            let x = x_of(v.t);
            let y = v.y[..m].to_vec();
            let eta_v = v.y[m..2 * m].to_vec();
            if let Ok(hinv) = inverse_h(metric, x, &y) {
                let e = DVector::from_column_slice(&eta_v);
                if let Some(kk) = kappa(x, &hinv, &e) {
                    let xi = -x.powf(-alpha / 2.0) * kk;
                    tail_samples.push(FlowSample { t: v.y[2 * m], point: PhasePoint { x, y, xi, eta: eta_v } });
                }
            }
        }
        Control::Continue
    })?;
    steps += out.steps;
    samples.extend(tail_samples);
    st = out.y;
    let y_bar = st[..m].to_vec();
    let eta_bar = st[m..2 * m].to_vec();

    // Second pass outward from the exit point, carrying y − ȳ and τ directly so that
    // both keep full relative precision as σ → 0.
    let mut tail_fine = Vec::new();
    if opts.record_samples {
        let full = 2 * m + 1 + k;
        let fine_rhs = |sig: f64, s: &[f64], out: &mut [f64]| {
            let mut z = vec![0.0; full];
            for i in 0..m {
                z[i] = y_bar[i] + s[i];
                z[m + i] = s[m + i];
            }
            let mut dz = vec![0.0; full];
            if !tail_rhs(sig, &z, &mut dz) {
                return false;
            }
            out[..2 * m].copy_from_slice(&dz[..2 * m]);
            out[2 * m] = -dz[2 * m];
            true
        };
        let mut init = vec![0.0; m];
        init.extend_from_slice(&eta_bar);
        init.push(0.0);
        let mut fine_stops = stops.clone();
        fine_stops.reverse();
        let mut rec = Vec::new();
        integrate(fine_rhs, 0.0, &init, sigma_s, &fine_stops, &opts.ode(), |v| {
            if !v.stops_hit.is_empty() {
                let x = x_of(v.t);
                let y: Vec<f64> = (0..m).map(|i| y_bar[i] + v.y[i]).collect();
                if let Ok(hinv) = inverse_h(metric, x, &y) {
                    let e = DVector::from_column_slice(&v.y[m..2 * m]);
                    if let Some(kk) = kappa(x, &hinv, &e) {
                        rec.push(TailSample { tau: v.y[2 * m], x, dy: v.y[..m].to_vec(), xi: -x.powf(-alpha / 2.0) * kk });
                    }
                }
            }
            Control::Continue
        })?;
        tail_fine = rec;
    }
    let h0inv = inverse_h(metric, 0.0, &y_bar)?;
    let v_bar = (&h0inv * DVector::from_column_slice(&eta_bar)).iter().copied().collect();
    let exit = ExitRecord { time: st[2 * m], y_bar, eta_bar, v_bar };
    Ok(Trajectory {
        start: start.clone(),
        samples,
        exit: Some(exit),
        escape: None,
        status: TrajectoryStatus::Exited,
        integrals: st[2 * m + 1..].to_vec(),
        apexes,
        energy_drift,
        switch_time: Some(t_s),
        tail_fine,
        steps,
    })
}

/// Flows `start` for arc length `s` (either sign) in the interior, returning the
/// end state and the integrals of the integrand over the segment.
pub fn flow_for_time(metric: &GasGiantMetric, start: &PhasePoint, s: f64, opts: &FlowOptions, integrand: Option<(usize, Integrand)>) -> Result<(PhasePoint, Vec<f64>)> {
    check_shape(metric, start)?;
    let m = metric.dim_y();
    let ps = 2 + 2 * m;
    let k = integrand.map(|i| i.0).unwrap_or(0);
    let mut state = start.pack();
    state.extend(std::iter::repeat(0.0).take(k));
    let rhs = |_t: f64, st: &[f64], out: &mut [f64]| {
        if !phase_rhs(metric, &st[..ps], &mut out[..ps]) {
            return false;
        }
        if let Some((_, f)) = integrand {
            f(st[0], &st[1..1 + m], &mut out[ps..]);
        }
        true
    };
    let out = integrate(rhs, 0.0, &state, s, &[], &opts.ode(), |_| Control::Continue)?;
    Ok((PhasePoint::unpack(&out.y[..ps], m), out.y[ps..].to_vec()))
}

/// Both halves of the maximal geodesic through `p`: the backward half is the forward
/// flow of the reversed covector.
pub fn full_geodesic(metric: &GasGiantMetric, p: &PhasePoint, opts: &FlowOptions, integrand: Option<(usize, Integrand)>) -> Result<(Trajectory, Trajectory)> {
    let fwd = integrate_with(metric, p, opts, integrand)?;
    let bwd = integrate_with(metric, &p.reversed(), opts, integrand)?;
    Ok((bwd, fwd))
}
