//! Jacobi fields along geodesics in the rescaled first-order form
//! Ẇ₁ = w W₂, Ẇ₂ = −F W₂ − G W₁ with W₁ = J and W₂ = J̇ / w, where w = x^α for
//! gas-giant metrics. Conjugate point scans and a sampled simplicity certificate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::flow::{integrate_to_boundary, FlowOptions, PhasePoint};
use crate::metric::{Geometry, GasGiantMetric};
use crate::ode::{integrate, locate_event, Control, OdeOptions};

/// One Jacobi field with its base point and geodesic velocity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiState {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiTangent {
    pub dw1: Vec<f64>,
    pub dw2: Vec<f64>,
}

/// Coefficients of the rescaled system at one point of a geodesic.
#[derive(Debug, Clone)]
pub struct JacobiMatrices {
    pub weight: f64,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl JacobiMatrices {
    /// Frobenius norm of A = [[0, w I], [−G, −F]], an upper bound for its operator 2-norm.
    pub fn a_norm(&self) -> f64 {
        let n = self.f.nrows() as f64;
        (n * self.weight * self.weight + self.f.norm_squared() + self.g.norm_squared()).sqrt()
    }
}

/// F = 2Γ(γ̇, ·) + (d/dt ln w) I and G = ∂_eΓ(γ̇, γ̇) / w.
pub fn jacobi_matrices<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64]) -> Result<JacobiMatrices> {
    let n = geom.dim();
    let gam = geom.christoffel(p)?;
    let dgam = geom.christoffel_derivatives(p)?;
    let w = geom.jacobi_weight(p);
    let rate = geom.jacobi_weight_rate(p, v);
    let mut f = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        for c in 0..n {
            f[(a, c)] = 2.0 * (0..n).map(|b| gam.get(a, b, c) * v[b]).sum::<f64>();
        }
        f[(a, a)] += rate;
        for e in 0..n {
            g[(a, e)] = dgam[e].contract(v, v)[a] / w;
        }
    }
    Ok(JacobiMatrices { weight: w, f, g })
}

pub fn jacobi_rhs<G: Geometry + ?Sized>(geom: &G, state: &JacobiState) -> Result<JacobiTangent> {
    let m = jacobi_matrices(geom, &state.position, &state.velocity)?;
    let w1 = DVector::from_column_slice(&state.w1);
    let w2 = DVector::from_column_slice(&state.w2);
    let dw2 = -(&m.f * &w2) - (&m.g * &w1);
    Ok(JacobiTangent { dw1: (w2 * m.weight).iter().copied().collect(), dw2: dw2.iter().copied().collect() })
}

/// Position and coordinate velocity γ̇ = g^{-1}ζ of a phase point.
pub fn velocity_from_phase(metric: &GasGiantMetric, p: &PhasePoint) -> Result<(Vec<f64>, Vec<f64>)> {
    let hinv = metric.h_jet(p.x, &p.y).h.try_inverse().ok_or(GeoError::NotPositiveDefinite { x: p.x, min_eig: 0.0 })?;
    let xa = p.x.powf(metric.alpha);
    let mut pos = vec![p.x];
    pos.extend_from_slice(&p.y);
    let mut vel = vec![xa * p.xi];
    vel.extend((hinv * DVector::from_column_slice(&p.eta) * xa).iter());
    Ok((pos, vel))
}

/// Covariant derivative D_t J = J̇ + Γ(γ̇, J).
pub fn covariant_derivative<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64], j: &[f64], jdot: &[f64]) -> Result<Vec<f64>> {
    let g = geom.christoffel(p)?.contract(v, j);
    Ok(jdot.iter().zip(g).map(|(a, b)| a + b).collect())
}

fn inner(g: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    DVector::from_column_slice(a).dot(&(g * DVector::from_column_slice(b)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiOptions {
    pub t_max: f64,
    /// Stop once the first coordinate drops below this value.
    pub x_stop: Option<f64>,
    /// Stop once the first coordinate exceeds this value.
    pub x_ceiling: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    /// Project the fields onto the normal bundle of γ every 100 steps.
    pub reproject: bool,
    /// Record every accepted step (otherwise only `sample_times`).
    pub record: bool,
    pub sample_times: Vec<f64>,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        Self { t_max: 10.0, x_stop: None, x_ceiling: None, rtol: 1e-11, atol: 1e-14, reproject: false, record: true, sample_times: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiSample {
    pub t: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// (W₁, W₂) per field.
    pub fields: Vec<(Vec<f64>, Vec<f64>)>,
    /// ∫‖A‖ dt from the start.
    pub a_integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobiEnd {
    TimeLimit,
    ReachedXStop,
    LeftCollar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiRun {
    pub samples: Vec<JacobiSample>,
    pub end: JacobiEnd,
    pub end_time: f64,
}

struct System<'a, G: Geometry + ?Sized> {
    geom: &'a G,
    n: usize,
    k: usize,
}

impl<G: Geometry + ?Sized> System<'_, G> {
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> bool {
        let n = self.n;
        let (p, v) = (&y[..n], &y[n..2 * n]);
        let Ok(gam) = self.geom.christoffel(p) else { return false };
        let Ok(m) = jacobi_matrices(self.geom, p, v) else { return false };
        dy[..n].copy_from_slice(v);
        let acc = gam.contract(v, v);
        for a in 0..n {
            dy[n + a] = -acc[a];
        }
        for f in 0..self.k {
            let o = 2 * n + 2 * n * f;
            let w1 = DVector::from_column_slice(&y[o..o + n]);
            let w2 = DVector::from_column_slice(&y[o + n..o + 2 * n]);
            let d2 = -(&m.f * &w2) - (&m.g * &w1);
            for a in 0..n {
                dy[o + a] = m.weight * w2[a];
                dy[o + n + a] = d2[a];
            }
        }
        dy[2 * n + 2 * n * self.k] = m.a_norm();
        dy.iter().all(|d| d.is_finite())
    }

    fn sample(&self, t: f64, y: &[f64]) -> JacobiSample {
        let n = self.n;
        let fields = (0..self.k)
            .map(|f| {
                let o = 2 * n + 2 * n * f;
                (y[o..o + n].to_vec(), y[o + n..o + 2 * n].to_vec())
            })
            .collect();
        JacobiSample { t, position: y[..n].to_vec(), velocity: y[n..2 * n].to_vec(), fields, a_integral: y[2 * n + 2 * n * self.k] }
    }

    /// Removes the tangential parts of J and D_t J.
    fn project(&self, y: &mut [f64]) -> Result<()> {
        let n = self.n;
        let p = y[..n].to_vec();
        let v = y[n..2 * n].to_vec();
        let g = self.geom.metric_tensor(&p)?;
        let vv = inner(&g, &v, &v);
        let w = self.geom.jacobi_weight(&p);
        let gam = self.geom.christoffel(&p)?;
        for f in 0..self.k {
            let o = 2 * n + 2 * n * f;
            let j: Vec<f64> = y[o..o + n].to_vec();
            let jdot: Vec<f64> = y[o + n..o + 2 * n].iter().map(|a| a * w).collect();
            let dj: Vec<f64> = jdot.iter().zip(gam.contract(&v, &j)).map(|(a, b)| a + b).collect();
            let cj = inner(&g, &j, &v) / vv;
            let cd = inner(&g, &dj, &v) / vv;
            let jn: Vec<f64> = (0..n).map(|a| j[a] - cj * v[a]).collect();
            let djn: Vec<f64> = (0..n).map(|a| dj[a] - cd * v[a]).collect();
            let gj = gam.contract(&v, &jn);
            for a in 0..n {
                y[o + a] = jn[a];
                y[o + n + a] = (djn[a] - gj[a]) / w;
            }
        }
        Ok(())
    }
}

fn initial_state<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64], fields: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
    let n = geom.dim();
    if p.len() != n || v.len() != n || fields.iter().any(|(a, b)| a.len() != n || b.len() != n) {
        return Err(GeoError::InvalidParameter(format!("Jacobi data must have {n} components")));
    }
    let w = geom.jacobi_weight(p);
    if !(w > 0.0) {
        return Err(GeoError::Domain("base point is not interior".into()));
    }
    geom.christoffel(p)?;
    let mut y = p.to_vec();
    y.extend_from_slice(v);
    for (j, jdot) in fields {
        y.extend_from_slice(j);
        y.extend(jdot.iter().map(|a| a / w));
    }
    y.push(0.0);
    Ok(y)
}

/// Integrates the geodesic (in velocity form) together with Jacobi fields given by
/// their initial values (J, J̇).
pub fn integrate_jacobi<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64], fields: &[(Vec<f64>, Vec<f64>)], opts: &JacobiOptions) -> Result<JacobiRun> {
    let sys = System { geom, n: geom.dim(), k: fields.len() };
    let mut y = initial_state(geom, p, v, fields)?;
    if opts.reproject {
        sys.project(&mut y)?;
    }
    let ode = OdeOptions::with_tol(opts.rtol, opts.atol);
    let mut t = 0.0;
    let mut samples = vec![sys.sample(0.0, &y)];
    let mut end = JacobiEnd::TimeLimit;
    let stops: Vec<f64> = opts.sample_times.iter().copied().filter(|&s| s > 0.0 && s <= opts.t_max).collect();
    loop {
        let mut count = 0usize;
        let mut hit_end = None;
        let out = integrate(|_, s, d| sys.rhs(s, d), t, &y, opts.t_max, &stops, &ode, |view| {
            count += 1;
            if opts.record || !view.stops_hit.is_empty() {
                samples.push(sys.sample(view.t, view.y));
            }
            let x = view.y[0];
            if opts.x_stop.is_some_and(|xs| x < xs) {
                hit_end = Some(JacobiEnd::ReachedXStop);
                return Control::Stop;
            }
            if opts.x_ceiling.is_some_and(|xc| x > xc) {
                hit_end = Some(JacobiEnd::LeftCollar);
                return Control::Stop;
            }
            if opts.reproject && count >= 100 {
                return Control::Stop;
            }
            Control::Continue
        })?;
        t = out.t;
        y = out.y;
        if let Some(e) = hit_end {
            end = e;
            break;
        }
        if !out.stopped || t >= opts.t_max {
            break;
        }
        sys.project(&mut y)?;
    }
    Ok(JacobiRun { samples, end, end_time: t })
}

/// Second-order coordinate form J̈ = −2Γ(γ̇, J̇) − ∂Γ(J)(γ̇, γ̇), returning (J, J̇) at `times`.
pub fn integrate_jacobi_direct<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64], j0: &[f64], jdot0: &[f64], times: &[f64], rtol: f64, atol: f64) -> Result<Vec<(f64, Vec<f64>, Vec<f64>)>> {
    let n = geom.dim();
    let mut y = p.to_vec();
    y.extend_from_slice(v);
    y.extend_from_slice(j0);
    y.extend_from_slice(jdot0);
    let rhs = |_t: f64, s: &[f64], d: &mut [f64]| {
        let (pp, vv, j, jd) = (&s[..n], &s[n..2 * n], &s[2 * n..3 * n], &s[3 * n..]);
        let (Ok(gam), Ok(dg)) = (geom.christoffel(pp), geom.christoffel_derivatives(pp)) else { return false };
        d[..n].copy_from_slice(vv);
        d[2 * n..3 * n].copy_from_slice(jd);
        let acc = gam.contract(vv, vv);
        let cross = gam.contract(vv, jd);
        for a in 0..n {
            d[n + a] = -acc[a];
            d[3 * n + a] = -2.0 * cross[a];
        }
        for (e, de) in dg.iter().enumerate() {
            let c = de.contract(vv, vv);
            for a in 0..n {
                d[3 * n + a] -= j[e] * c[a];
            }
        }
        d.iter().all(|x| x.is_finite())
    };
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let mut out = Vec::new();
    integrate(rhs, 0.0, &y, t_end, times, &OdeOptions::with_tol(rtol, atol), |view| {
        if !view.stops_hit.is_empty() {
            out.push((view.t, view.y[2 * n..3 * n].to_vec(), view.y[3 * n..].to_vec()));
        }
        Control::Continue
    })?;
    Ok(out)
}

/// g-orthonormal basis of the g-orthocomplement of `v` at `p`.
pub fn normal_basis<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = geom.dim();
    let g = geom.metric_tensor(p)?;
    let vv = inner(&g, v, v);
    if !(vv > 0.0) {
        return Err(GeoError::Degenerate("zero geodesic velocity".into()));
    }
    let mut basis: Vec<Vec<f64>> = vec![v.iter().map(|a| a / vv.sqrt()).collect()];
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        for b in &basis {
            let c = inner(&g, &e, b);
            for a in 0..n {
                e[a] -= c * b[a];
            }
        }
        let norm = inner(&g, &e, &e).sqrt();
        if norm > 1e-8 * g.norm().sqrt() {
            basis.push(e.iter().map(|a| a / norm).collect());
        }
        if basis.len() == n {
            break;
        }
    }
    basis.remove(0);
    Ok(basis)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateScan {
    pub times: Vec<f64>,
    /// The determinant of (γ̇, J₁, …, J_{n−1}) vanished identically.
    pub degenerate: bool,
    pub end_time: f64,
    pub end: JacobiEnd,
    /// Largest ratio |W(t)| / |W(0)| over the fields.
    pub growth: f64,
    /// Grönwall constant exp(∫‖A‖ dt) over the scanned segment.
    pub gronwall: f64,
}

fn frame_det(n: usize, v: &[f64], fields: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        m[(a, 0)] = v[a];
        for (f, (j, _)) in fields.iter().enumerate() {
            m[(a, f + 1)] = j[a];
        }
    }
    m.determinant()
}

/// Conjugate times to the start point along γ: sign changes of det(γ̇, J₁, …, J_{n−1})
/// for the normal fields with J(0) = 0 and D_tJ(0) an orthonormal basis of γ̇^⊥.
pub fn conjugate_point_scan<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64], opts: &JacobiOptions) -> Result<ConjugateScan> {
    let n = geom.dim();
    let fields: Vec<(Vec<f64>, Vec<f64>)> = normal_basis(geom, p, v)?.into_iter().map(|e| (vec![0.0; n], e)).collect();
    conjugate_point_scan_with(geom, p, v, &fields, opts)
}

/// As [`conjugate_point_scan`] with caller-supplied initial data (J, J̇) for n − 1 fields.
pub fn conjugate_point_scan_with<G: Geometry + ?Sized>(geom: &G, p: &[f64], v: &[f64], fields: &[(Vec<f64>, Vec<f64>)], opts: &JacobiOptions) -> Result<ConjugateScan> {
    let n = geom.dim();
    if fields.len() != n - 1 {
        return Err(GeoError::InvalidParameter(format!("need {} Jacobi fields, got {}", n - 1, fields.len())));
    }
    let mut o = opts.clone();
    o.record = true;
    let run = integrate_jacobi(geom, p, v, fields, &o)?;
    let sys = System { geom, n, k: fields.len() };
    let dets: Vec<f64> = run.samples.iter().map(|s| frame_det(n, &s.velocity, &s.fields)).collect();
    let scale = run.samples.iter().map(|s| s.fields.iter().map(|(j, _)| j.iter().map(|a| a.abs()).fold(0.0, f64::max)).fold(0.0, f64::max)).fold(0.0, f64::max);
    let w0: Vec<f64> = run.samples[0].fields.iter().map(|(a, b)| a.iter().chain(b).map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut growth = 0.0f64;
    for s in &run.samples {
        for (f, (a, b)) in s.fields.iter().enumerate() {
            if w0[f] > 0.0 {
                growth = growth.max(a.iter().chain(b).map(|x| x * x).sum::<f64>().sqrt() / w0[f]);
            }
        }
    }
    let gronwall = run.samples.last().map(|s| s.a_integral.exp()).unwrap_or(1.0);
    let dmax = dets.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    if !(dmax > 0.0) || scale == 0.0 {
        return Ok(ConjugateScan { times: Vec::new(), degenerate: true, end_time: run.end_time, end: run.end, growth, gronwall });
    }
    // Ignore the vanishing determinant at the start point itself.
    let floor = 1e-12 * dmax;
    let mut times = Vec::new();
    let mut last: Option<usize> = None;
    for i in 0..dets.len() {
        if dets[i].abs() <= floor {
            continue;
        }
        if let Some(l) = last {
            if dets[l].signum() != dets[i].signum() {
                let mut state = sys_state(&run.samples[l], n);
                state.push(run.samples[l].a_integral);
                let mut rhs = |_t: f64, s: &[f64], d: &mut [f64]| sys.rhs(s, d);
                let (tc, _) = locate_event(&mut rhs, run.samples[l].t, &state, run.samples[i].t, |_, s| frame_det(n, &s[n..2 * n], &unpack_fields(s, n)), 1e-12)?;
                times.push(tc);
            }
        }
        last = Some(i);
    }
    Ok(ConjugateScan { times, degenerate: false, end_time: run.end_time, end: run.end, growth, gronwall })
}

fn sys_state(s: &JacobiSample, _n: usize) -> Vec<f64> {
    let mut y = s.position.clone();
    y.extend_from_slice(&s.velocity);
    for (a, b) in &s.fields {
        y.extend_from_slice(a);
        y.extend_from_slice(b);
    }
    y
}

fn unpack_fields(y: &[f64], n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let k = (y.len() - 1 - 2 * n) / (2 * n);
    (0..k).map(|f| (y[2 * n + 2 * n * f..3 * n + 2 * n * f].to_vec(), Vec::new())).collect()
}

/// Symplectic pairing ⟨J₁, D_tJ₂⟩_g − ⟨J₂, D_tJ₁⟩_g of the first two fields in a sample.
pub fn symplectic_pairing<G: Geometry + ?Sized>(geom: &G, s: &JacobiSample) -> Result<f64> {
    if s.fields.len() < 2 {
        return Err(GeoError::InvalidParameter("pairing needs two fields".into()));
    }
    let g = geom.metric_tensor(&s.position)?;
    let w = geom.jacobi_weight(&s.position);
    let d = |f: usize| -> Result<Vec<f64>> {
        let jdot: Vec<f64> = s.fields[f].1.iter().map(|a| a * w).collect();
        covariant_derivative(geom, &s.position, &s.velocity, &s.fields[f].0, &jdot)
    };
    let (d1, d2) = (d(0)?, d(1)?);
    Ok(inner(&g, &s.fields[0].0, &d2) - inner(&g, &s.fields[1].0, &d1))
}

/// Sampled growth data (x, |J|_e, x |D_tJ|_e) of one field along a run.
pub fn growth_profile<G: Geometry + ?Sized>(geom: &G, run: &JacobiRun, field: usize) -> Result<Vec<(f64, f64, f64)>> {
    run.samples
        .iter()
        .map(|s| {
            let w = geom.jacobi_weight(&s.position);
            let (j, w2) = &s.fields[field];
            let jdot: Vec<f64> = w2.iter().map(|a| a * w).collect();
            let dj = covariant_derivative(geom, &s.position, &s.velocity, j, &jdot)?;
            let norm = |u: &[f64]| u.iter().map(|a| a * a).sum::<f64>().sqrt();
            Ok((s.position[0], norm(j), s.position[0] * norm(&dj)))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimplicityWitness {
    pub x: f64,
    pub theta: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitBound {
    pub x: f64,
    pub theta: f64,
    pub gronwall: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimplicityReport {
    pub orbits: usize,
    pub max_arc_length: f64,
    pub trapped: usize,
    pub conjugate_points: usize,
    /// Largest entry-data gap among orbit pairs whose exit data agree.
    pub injectivity_residual: f64,
    pub orbit_bounds: Vec<OrbitBound>,
    pub gronwall_holds: bool,
    pub pass: bool,
    pub witness: Option<SimplicityWitness>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimplicityOptions {
    pub flow: FlowOptions,
    /// Jacobi scans stop at this height.
    pub x_stop: f64,
    /// Exit data closer than this count as equal.
    pub match_tol: f64,
}

impl Default for SimplicityOptions {
    fn default() -> Self {
        Self { flow: FlowOptions::quiet(), x_stop: 1e-6, match_tol: 1e-7 }
    }
}

struct OrbitResult {
    x: f64,
    theta: f64,
    arc: f64,
    trapped: bool,
    conj: usize,
    entry: Vec<f64>,
    exit: Vec<f64>,
    bound: OrbitBound,
}

fn orbit(metric: &GasGiantMetric, x: f64, theta: f64, opts: &SimplicityOptions) -> Result<OrbitResult> {
    let m = metric.dim_y();
    let y: Vec<f64> = metric.y_box.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let h = metric.h_jet(x, &y).h;
    let mut eta = vec![0.0; m];
    eta[0] = theta.sin() * h[(0, 0)].sqrt();
    let p = PhasePoint::new(x, y, -theta.cos(), eta).unit_speed(metric)?;
    let fwd = integrate_to_boundary(metric, &p, &opts.flow)?;
    let bwd = integrate_to_boundary(metric, &p.reversed(), &opts.flow)?;
    let outflow = |t: &crate::flow::Trajectory| -> Option<(f64, Vec<f64>)> {
        match (&t.exit, &t.escape) {
            (Some(e), _) => Some((e.time, [0.0].iter().chain(&e.y_bar).chain(&e.eta_bar).copied().collect())),
            (None, Some(s)) => Some((s.t, [1.0].iter().chain(&s.point.y).chain(&s.point.eta).chain([&s.point.xi]).copied().collect())),
            _ => None,
        }
    };
    let (f_out, b_out) = (outflow(&fwd), outflow(&bwd));
    let trapped = f_out.is_none() || b_out.is_none();
    let arc = match (&f_out, &b_out) {
        (Some(a), Some(b)) => a.0 + b.0,
        _ => f64::INFINITY,
    };
    let (pos, vel) = velocity_from_phase(metric, &p)?;
    let (conj, gronwall, growth) = match &f_out {
        Some((t_max, _)) => {
            let jo = JacobiOptions { t_max: *t_max, x_stop: Some(opts.x_stop), x_ceiling: Some(metric.x_max), reproject: true, record: true, ..JacobiOptions::default() };
            let scan = conjugate_point_scan(metric, &pos, &vel, &jo)?;
            (scan.times.len(), scan.gronwall, scan.growth)
        }
        // Trapped orbits already fail the certificate; their Jacobi scan is skipped.
        None => (0, f64::INFINITY, 0.0),
    };
    Ok(OrbitResult {
        x,
        theta,
        arc,
        trapped,
        conj,
        entry: b_out.map(|o| o.1).unwrap_or_default(),
        exit: f_out.map(|o| o.1).unwrap_or_default(),
        bound: OrbitBound { x, theta, gronwall, growth },
    })
}

/// Sweeps a `density × density` grid of interior starts (height, direction angle) at the
/// centre of the y-box, checking non-trapping (leaving through x = 0 or the collar top), absence of conjugate points, injectivity
/// of the boundary data and the Grönwall bound for the rescaled Jacobi system.
pub fn simplicity_certificate(metric: &GasGiantMetric, density: usize, opts: &SimplicityOptions) -> Result<SimplicityReport> {
    if density < 2 {
        return Err(GeoError::InvalidParameter("sample density must be at least 2".into()));
    }
    let starts: Vec<(f64, f64)> = (0..density)
        .flat_map(|i| {
            let x = metric.x_max * (i as f64 + 0.5) / density as f64;
            (0..density).map(move |j| (x, 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / density as f64))
        })
        .collect();
    let results = starts.par_iter().map(|&(x, th)| orbit(metric, x, th, opts)).collect::<Result<Vec<_>>>()?;
    let trapped = results.iter().filter(|r| r.trapped).count();
    let conjugate_points: usize = results.iter().map(|r| r.conj).sum();
    let max_arc_length = results.iter().map(|r| r.arc).fold(0.0, f64::max);
    let exited: Vec<&OrbitResult> = results.iter().filter(|r| !r.trapped).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let injectivity_residual = (0..exited.len())
        .into_par_iter()
        .map(|i| {
            let mut worst = 0.0f64;
            for j in i + 1..exited.len() {
                if dist(&exited[i].exit, &exited[j].exit) < opts.match_tol {
                    worst = worst.max(dist(&exited[i].entry, &exited[j].entry));
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let gronwall_holds = results.iter().all(|r| r.bound.growth <= r.bound.gronwall * (1.0 + 1e-9));
    let witness = results
        .iter()
        .find(|r| r.trapped)
        .map(|r| SimplicityWitness { x: r.x, theta: r.theta, reason: "orbit did not exit within the arc-length budget".into() })
        .or_else(|| results.iter().find(|r| r.conj > 0).map(|r| SimplicityWitness { x: r.x, theta: r.theta, reason: format!("{} conjugate point(s)", r.conj) }));
    let pass = witness.is_none() && injectivity_residual <= 1e3 * opts.match_tol && gronwall_holds;
    Ok(SimplicityReport {
        orbits: results.len(),
        max_arc_length,
        trapped,
        conjugate_points,
        injectivity_residual,
        orbit_bounds: results.into_iter().map(|r| r.bound).collect(),
        gronwall_holds,
        pass,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::metric::curvature::RoundSphere;
    use crate::metric::{CrossSection, Product, Profile};

    #[test]
    fn sphere_conjugate_time_is_pi() {
        let s = conjugate_point_scan(&RoundSphere, &[std::f64::consts::FRAC_PI_2, 0.0], &[0.0, 1.0], &JacobiOptions { t_max: 4.0, ..Default::default() }).unwrap();
        assert_eq!(s.times.len(), 1);
        assert!((s.times[0] - std::f64::consts::PI).abs() < 1e-9, "{:?}", s.times);
    }

    #[test]
    fn zero_initial_data_has_no_sign_changes() {
        let s = conjugate_point_scan_with(&RoundSphere, &[1.0, 0.0], &[0.0, 1.0], &[(vec![0.0; 2], vec![0.0; 2])], &JacobiOptions { t_max: 4.0, ..Default::default() }).unwrap();
        assert!(s.times.is_empty());
        assert!(s.degenerate);
    }

    #[test]
    fn flat_limit_is_affine() {
        let m = GasGiantMetric::flat(1e-4, 2, 10.0).unwrap();
        let p = [5.0, 0.0];
        let v = [0.6 * 5f64.powf(1e-4 / 2.0), 0.8 * 5f64.powf(1e-4 / 2.0)];
        let (j0, jd0) = (vec![0.3, -0.2], vec![0.1, 0.5]);
        let run = integrate_jacobi(&m, &p, &v, &[(j0.clone(), jd0.clone())], &JacobiOptions { t_max: 1.0, ..Default::default() }).unwrap();
        for s in &run.samples {
            let j = &s.fields[0].0;
            let dev = (0..2).map(|a| (j[a] - j0[a] - s.t * jd0[a]).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-3, "{dev}");
        }
    }

    #[test]
    fn rhs_rejects_boundary() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let st = JacobiState { w1: vec![0.0, 1.0], w2: vec![0.0, 0.0], position: vec![0.0, 0.0], velocity: vec![-1.0, 0.0] };
        assert!(jacobi_rhs(&m, &st).is_err());
    }

    #[test]
    fn vertical_ray_tangential_field_is_constant() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let p = PhasePoint::new(1.0, vec![0.0], -1.0, vec![0.0]).unit_speed(&m).unwrap();
        let (pos, vel) = velocity_from_phase(&m, &p).unwrap();
        let o = JacobiOptions { t_max: 10.0, x_stop: Some(1e-8), ..Default::default() };
        let run = integrate_jacobi(&m, &pos, &vel, &[(vec![0.0, 1.0], vec![0.0, 0.0])], &o).unwrap();
        assert_eq!(run.end, JacobiEnd::ReachedXStop);
        let gronwall = run.samples.last().unwrap().a_integral.exp();
        for s in &run.samples {
            let j = &s.fields[0].0;
            let je = (j[0] * j[0] + j[1] * j[1]).sqrt();
            assert!((je - 1.0).abs() < 1e-9);
            assert!(je <= gronwall);
        }
    }

    fn cycloid_start(m: &GasGiantMetric, x0: f64) -> (Vec<f64>, Vec<f64>) {
        // Point on the incoming half of the apex-x0 cycloid, well above the boundary.
        let apex = PhasePoint::apex(m, x0, &[0.0], &[1.0]).unwrap();
        let (start, _) = crate::flow::flow_for_time(m, &apex, -0.8 * std::f64::consts::PI * x0.sqrt(), &FlowOptions::quiet(), None).unwrap();
        velocity_from_phase(m, &start).unwrap()
    }

    #[test]
    fn model_cycloids_have_no_conjugate_points() {
        let m = GasGiantMetric::model(1.0).unwrap();
        for x0 in [0.1, 0.5, 2.0] {
            let (p, v) = cycloid_start(&m, x0);
            let s = conjugate_point_scan(&m, &p, &v, &JacobiOptions { t_max: 100.0, x_stop: Some(1e-8), ..Default::default() }).unwrap();
            assert_eq!(s.end, JacobiEnd::ReachedXStop);
            assert!(s.times.is_empty(), "x0 {x0}: {:?}", s.times);
            assert!(!s.degenerate);
            assert!(s.growth <= s.gronwall);
        }
    }

    #[test]
    fn rescaled_matches_direct_integration() {
        let m = GasGiantMetric::new(0.7, 2, 10.0, Arc::new(crate::metric::Warped { dim_y: 1, a: 0.3, b: 0.2, c: 0.0, k: 2.0 })).unwrap();
        let p = PhasePoint::new(0.8, vec![0.1], -0.3, vec![0.6]).unit_speed(&m).unwrap();
        let (pos, vel) = velocity_from_phase(&m, &p).unwrap();
        let times: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64).collect();
        let (j0, jd0) = (vec![0.2, 1.0], vec![-0.4, 0.3]);
        let o = JacobiOptions { t_max: 1.0, record: false, sample_times: times.clone(), ..Default::default() };
        let run = integrate_jacobi(&m, &pos, &vel, &[(j0.clone(), jd0.clone())], &o).unwrap();
        let direct = integrate_jacobi_direct(&m, &pos, &vel, &j0, &jd0, &times, 1e-11, 1e-14).unwrap();
        assert_eq!(direct.len(), times.len());
        for (s, (t, j, _)) in run.samples[1..].iter().zip(&direct) {
            assert!((s.t - t).abs() < 1e-14);
            let scale = j.iter().map(|a| a.abs()).fold(0.0, f64::max);
            let dev = (0..2).map(|a| (s.fields[0].0[a] - j[a]).abs()).fold(0.0, f64::max);
            assert!(dev / scale < 1e-6, "{dev}");
        }
    }

    #[test]
    fn symplectic_pairing_is_conserved() {
        let m = GasGiantMetric::new(1.0, 3, 10.0, Arc::new(crate::metric::Warped { dim_y: 2, a: 0.2, b: 0.1, c: 0.05, k: 1.5 })).unwrap();
        let p = PhasePoint::new(0.5, vec![0.0, 0.2], -0.2, vec![0.5, -0.3]).unit_speed(&m).unwrap();
        let (pos, vel) = velocity_from_phase(&m, &p).unwrap();
        let fields = vec![(vec![0.1, 0.5, 0.0], vec![0.0, 0.2, 0.7]), (vec![0.0, -0.3, 0.4], vec![0.3, 0.0, -0.1])];
        let run = integrate_jacobi(&m, &pos, &vel, &fields, &JacobiOptions { t_max: 3.0, x_stop: Some(1e-3), ..Default::default() }).unwrap();
        let w0 = symplectic_pairing(&m, &run.samples[0]).unwrap();
        for s in &run.samples {
            assert!((symplectic_pairing(&m, s).unwrap() - w0).abs() < 1e-7);
        }
    }

    #[test]
    fn covariant_derivative_times_x_stays_bounded_near_exit() {
        let m = GasGiantMetric::model(1.0).unwrap();
        let (p, v) = cycloid_start(&m, 0.5);
        let fields = normal_basis(&m, &p, &v).unwrap().into_iter().map(|e| (vec![0.0; 2], e)).collect::<Vec<_>>();
        let run = integrate_jacobi(&m, &p, &v, &fields, &JacobiOptions { t_max: 100.0, x_stop: Some(1e-8), ..Default::default() }).unwrap();
        let prof = growth_profile(&m, &run, 0).unwrap();
        let window: Vec<f64> = prof.iter().filter(|s| s.0 <= 1e-6).map(|s| s.2).collect();
        assert!(window.len() > 4);
        let (lo, hi) = window.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        // The window starts at its largest x; nothing closer to the boundary may exceed it.
        assert!(lo > 0.0 && hi <= window[0] * (1.0 + 1e-6), "{lo} {hi} {}", window[0]);
    }

    #[test]
    fn model_certificate_passes() {
        let m = GasGiantMetric::flat(1.0, 2, 1.0).unwrap();
        let r = simplicity_certificate(&m, 12, &SimplicityOptions::default()).unwrap();
        assert!(r.pass, "{:?}", r.witness);
        assert_eq!(r.conjugate_points, 0);
        assert_eq!(r.trapped, 0);
        assert!(r.gronwall_holds);
    }

    #[test]
    fn deep_bump_trap_fails_with_witness() {
        let fam = Product { dim_y: 1, profile: Profile::Gaussian { amplitude: 50.0, center: 0.5, width: 0.1 }, cross: CrossSection::Euclidean };
        let m = GasGiantMetric::new(1.0, 2, 1.0, Arc::new(fam)).unwrap();
        let r = simplicity_certificate(&m, 8, &SimplicityOptions::default()).unwrap();
        assert!(!r.pass);
        assert!(r.trapped > 0);
        assert!(r.witness.is_some());
    }
}
