//! Adaptive Dormand–Prince 5(4) integration with step rejection and event bisection.
//!
//! Right-hand sides have the shape `FnMut(t, y, dy) -> bool`; returning `false`
//! marks the state as inadmissible and forces the step to be rejected.

use crate::error::{GeoError, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude; `0.0` picks one automatically.
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, h_init: 0.0, h_max: f64::INFINITY, max_steps: 2_000_000 }
    }
}

impl OdeOptions {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// View of one accepted step handed to the observer.
pub struct StepView<'a> {
    pub t_prev: f64,
    pub y_prev: &'a [f64],
    pub t: f64,
    pub y: &'a [f64],
    /// Indices of the stop times hit exactly by this step (several if stops coincide).
    pub stops_hit: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct OdeOutcome {
    pub t: f64,
    pub y: Vec<f64>,
    pub t_prev: f64,
    pub y_prev: Vec<f64>,
    pub steps: usize,
    pub rejected: usize,
    pub stopped: bool,
    pub last_h: f64,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Work buffers for one Dormand–Prince step.
pub struct Stepper {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl Stepper {
    pub fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] }
    }

    /// One step from `(t, y)` of size `h`; `k[0]` must hold `f(t, y)`.
    /// Writes the fifth-order solution to `y_out` and the embedded error to `err`.
    /// Returns `false` if the right-hand side refused a stage.
    fn step<F>(&mut self, f: &mut F, t: f64, y: &[f64], h: f64, y_out: &mut [f64], err: &mut [f64]) -> bool
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        if !f(t + C2 * h, tmp, k2) {
            return false;
        }
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        if !f(t + C3 * h, tmp, k3) {
            return false;
        }
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        if !f(t + C4 * h, tmp, k4) {
            return false;
        }
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        if !f(t + C5 * h, tmp, k5) {
            return false;
        }
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        if !f(t + h, tmp, k6) {
            return false;
        }
        for i in 0..n {
            y_out[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        if !f(t + h, y_out, k7) {
            return false;
        }
        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        y_out.iter().all(|v| v.is_finite())
    }
}

/// Single Dormand–Prince step without error control, used for event bisection
/// inside an interval that the adaptive integrator already accepted.
pub fn probe_step<F>(f: &mut F, t: f64, y: &[f64], h: f64) -> Option<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let n = y.len();
    let mut st = Stepper::new(n);
    if !f(t, y, &mut st.k[0]) {
        return None;
    }
    let mut out = vec![0.0; n];
    let mut err = vec![0.0; n];
    if h == 0.0 {
        return Some(y.to_vec());
    }
    st.step(f, t, y, h, &mut out, &mut err).then_some(out)
}

/// Locates the root of `g` between `(t0, y0)` and `t1` by bisection on probe steps.
/// `g` must change sign over the interval. Returns the bracketing end state closest
/// to the root on the side where `g` has the sign of `g(t1)`.
pub fn locate_event<F, G>(f: &mut F, t0: f64, y0: &[f64], t1: f64, mut g: G, t_tol: f64) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    G: FnMut(f64, &[f64]) -> f64,
{
    let g0 = g(t0, y0);
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let span = t1 - t0;
    let mut y_hi = probe_step(f, t0, y0, span).ok_or(GeoError::NonFinite { t: t1 })?;
    for _ in 0..200 {
        if (hi - lo) * span.abs() <= t_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let ym = probe_step(f, t0, y0, mid * span).ok_or(GeoError::NonFinite { t: t0 + mid * span })?;
        let gm = g(t0 + mid * span, &ym);
        if gm == 0.0 {
            return Ok((t0 + mid * span, ym));
        }
        if (gm > 0.0) == (g0 > 0.0) {
            lo = mid;
        } else {
            hi = mid;
            y_hi = ym;
        }
    }
    Ok((t0 + hi * span, y_hi))
}

fn err_norm(y: &[f64], y_new: &[f64], err: &[f64], o: &OdeOptions) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let sc = o.atol + o.rtol * y[i].abs().max(y_new[i].abs());
        let r = err[i] / sc;
        s += r * r;
    }
    (s / y.len() as f64).sqrt()
}

/// Integrates from `t0` towards `t_end` (either direction). Steps land exactly on
/// every entry of `stops` lying between the two. The observer sees each accepted
/// step and may halt the integration.
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    stops: &[f64],
    opts: &OdeOptions,
    mut observer: O,
) -> Result<OdeOutcome>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    O: FnMut(&StepView) -> Control,
{
    let n = y0.len();
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut st = Stepper::new(n);
    let mut t = t0;
    let mut y = y0.to_vec();
    if !f(t, &y, &mut st.k[0]) {
        return Err(GeoError::Domain(format!("initial state rejected by right-hand side at t = {t0}")));
    }
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut stop_idx: Vec<usize> = (0..stops.len())
        .filter(|&i| (stops[i] - t0) * dir > 0.0 && (t_end - stops[i]) * dir >= 0.0)
        .collect();
    stop_idx.sort_by(|&a, &b| ((stops[a] - stops[b]) * dir).partial_cmp(&0.0).unwrap());
    let mut next_stop = 0usize;

    let mut h = if opts.h_init > 0.0 {
        opts.h_init
    } else {
        let d0 = y.iter().map(|v| v * v).sum::<f64>().sqrt() / (n as f64).sqrt();
        let d1 = st.k[0].iter().map(|v| v * v).sum::<f64>().sqrt() / (n as f64).sqrt();
        let h0 = if d1 > 1e-300 { 0.01 * (d0.max(1e-6) / d1) } else { 1e-6 };
        (h0 * opts.rtol.powf(0.2)).max(1e-14)
    };
    h = h.min(opts.h_max);
    let mut steps = 0;
    let mut rejected = 0;
    let mut t_prev = t;
    let mut y_prev = y.clone();
    let mut last_h = h;
    loop {
        if (t_end - t) * dir <= 0.0 {
            break;
        }
        if steps >= opts.max_steps {
            return Err(GeoError::TooManySteps(opts.max_steps));
        }
        let mut target = t_end;
        if next_stop < stop_idx.len() {
            target = stops[stop_idx[next_stop]];
        }
        let mut hh = h.min(opts.h_max);
        let mut lands = false;
        if (t + dir * hh - target) * dir >= 0.0 {
            hh = (target - t).abs();
            lands = true;
        } else if (t + dir * 1.5 * hh - target) * dir >= 0.0 {
            // Avoid leaving a sliver before the next stop.
            hh = 0.5 * (target - t).abs();
        }
        if hh <= 4.0 * f64::EPSILON * t.abs().max(1e-300) {
            return Err(GeoError::StepSizeCollapse { t });
        }
        let ok = st.step(&mut f, t, &y, dir * hh, &mut y_new, &mut err);
        if !ok {
            rejected += 1;
            h = 0.25 * hh;
            continue;
        }
        let en = err_norm(&y, &y_new, &err, opts);
        if !en.is_finite() {
            rejected += 1;
            h = 0.25 * hh;
            continue;
        }
        if en > 1.0 {
            rejected += 1;
            h = hh * (0.9 * en.powf(-0.2)).max(0.2);
            continue;
        }
        steps += 1;
        last_h = hh;
        t_prev = t;
        y_prev.copy_from_slice(&y);
        t = if lands { target } else { t + dir * hh };
        y.copy_from_slice(&y_new);
        let [k1, .., k7] = &mut st.k;
        k1.copy_from_slice(k7);
        let first_hit = next_stop;
        if lands {
            while next_stop < stop_idx.len() && (stops[stop_idx[next_stop]] - target).abs() <= 4.0 * f64::EPSILON * target.abs() {
                next_stop += 1;
            }
        }
        let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        // A step truncated to land on a stop does not shrink the controller's step.
        h = if lands { h.max(hh * fac) } else { hh * fac };
        let view = StepView { t_prev, y_prev: &y_prev, t, y: &y, stops_hit: &stop_idx[first_hit..next_stop] };
        if observer(&view) == Control::Stop {
            return Ok(OdeOutcome { t, y, t_prev, y_prev, steps, rejected, stopped: true, last_h });
        }
    }
    Ok(OdeOutcome { t, y, t_prev, y_prev, steps, rejected, stopped: false, last_h })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let out = integrate(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = -y[0];
                true
            },
            0.0,
            &[1.0],
            5.0,
            &[],
            &OdeOptions::with_tol(1e-12, 1e-14),
            |_| Control::Continue,
        )
        .unwrap();
        assert!((out.y[0] - (-5.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_backward_and_stops() {
        let mut seen = Vec::new();
        let stops = [-1.0, -2.0, -0.5];
        let out = integrate(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -y[0];
                true
            },
            0.0,
            &[0.0, 1.0],
            -3.0,
            &stops,
            &OdeOptions::with_tol(1e-12, 1e-14),
            |v| {
                for &i in v.stops_hit {
                    seen.push((i, v.t, v.y[0]));
                }
                Control::Continue
            },
        )
        .unwrap();
        assert!((out.y[0] - (-3.0f64).sin()).abs() < 1e-10);
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 0, 1]);
        for (_, t, v) in seen {
            assert!((v - t.sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn event_bisection_finds_zero_of_sine() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
            true
        };
        let out = integrate(&mut f, 0.0, &[0.0, 1.0], 10.0, &[], &OdeOptions::default(), |v| {
            if v.t > 1.0 && v.y[0] < 0.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        let (tz, _) = locate_event(&mut f, out.t_prev, &out.y_prev, out.t, |_, y| y[0], 1e-13).unwrap();
        assert!((tz - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn rejected_states_shrink_the_step() {
        // sqrt blows up for negative arguments; the solver must stay on y > 0.
        let out = integrate(
            |_t, y: &[f64], dy: &mut [f64]| {
                if y[0] <= 0.0 {
                    return false;
                }
                dy[0] = -y[0].sqrt();
                true
            },
            0.0,
            &[1.0],
            1.9,
            &[],
            &OdeOptions::default(),
            |_| Control::Continue,
        )
        .unwrap();
        let exact = (1.0 - 0.5 * 1.9f64).powi(2);
        assert!((out.y[0] - exact).abs() < 1e-8);
    }
}
