//! Adapted coordinates for radially symmetric conformally Euclidean metrics c(r)^{-2}(dr² + r²dσ²).
//!
//! With ρ = R − r the depth below the surface and c(ρ) ≈ κ ρ^{α/2}, the adapted
//! coordinate x solves c |dx/dρ| = x^{α/2}. Writing x = e^{ω} x̂ with x̂ = aρ,
//! a^{2−α} = κ^{-2} and q = c²/(κ²ρ^α), the equation becomes
//! x̂ ω' = q^{-1/2} e^{(α−2)ω/2} − 1 with ω(0) = 0.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::families::{CrossSection, Product, Profile};
use super::lane_emden::{lane_emden, PolytropeProfile};
use super::GasGiantMetric;
use crate::error::{GeoError, Result};
use crate::fit::{fit_loglog, linear_fit};
use crate::ode::{integrate, Control, OdeOptions};
use crate::quad::integrate_adaptive;
use crate::spline::CubicSpline;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SoundSpeedSpec {
    /// c = κ ρ^{exponent} (1 + b ρ) with surface radius `radius`.
    ShiftedPower {
        exponent: f64,
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default)]
        b: f64,
        radius: f64,
    },
    /// c = θ^{1/2} from the Lane–Emden profile of the given index.
    LaneEmden {
        n_poly: f64,
        #[serde(default = "three")]
        dimension: usize,
    },
}

fn one() -> f64 {
    1.0
}
fn three() -> usize {
    3
}

#[derive(Debug, Clone)]
pub struct ConformalMetricSpec {
    pub sound_speed: SoundSpeedSpec,
    /// Depth of the collar below the surface.
    pub collar: f64,
    pub dim: usize,
    /// Expected boundary order; a mismatch with the profile is an error.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NormalForm {
    pub metric: GasGiantMetric,
    pub alpha: f64,
    pub alpha_fit: f64,
    pub kappa: f64,
    pub radius: f64,
    /// Samples (ρ, x(ρ), ω).
    pub samples: Vec<(f64, f64, f64)>,
    /// max |c² (dx/dρ)² / x^α − 1| from fourth-order differences of the solution.
    pub eikonal_residual: f64,
    /// max relative gap between the ODE solution and the direct quadrature for x(ρ).
    pub quadrature_deviation: f64,
}

enum Speed {
    Power { a: f64, kappa: f64, b: f64 },
    Polytrope(Box<PolytropeProfile>),
}

impl Speed {
    fn c(&self, rho: f64) -> f64 {
        match self {
            Speed::Power { a, kappa, b } => kappa * rho.powf(*a) * (1.0 + b * rho),
            Speed::Polytrope(p) => p.sound_speed_at_depth(rho),
        }
    }
}

pub fn normal_form_radial(spec: &ConformalMetricSpec) -> Result<NormalForm> {
    let (speed, radius) = match &spec.sound_speed {
        SoundSpeedSpec::ShiftedPower { exponent, kappa, b, radius } => {
            if !(*exponent > 0.0 && *exponent < 1.0 && *kappa > 0.0 && *radius > 0.0) {
                return Err(GeoError::InvalidParameter("sound speed exponent must lie in (0, 1)".into()));
            }
            (Speed::Power { a: *exponent, kappa: *kappa, b: *b }, *radius)
        }
        SoundSpeedSpec::LaneEmden { n_poly, dimension } => {
            let p = lane_emden(*n_poly, *dimension)?;
            let r = p.radius;
            (Speed::Polytrope(Box::new(p)), r)
        }
    };
    let collar = spec.collar;
    if !(collar > 0.0 && collar < radius) {
        return Err(GeoError::InvalidParameter(format!("collar depth {collar} must lie in (0, R = {radius})")));
    }
    if spec.dim < 2 {
        return Err(GeoError::InvalidParameter("dimension must be at least 2".into()));
    }
    // Boundary order from the small-depth power law of c.
    let rho_fit: Vec<f64> = (0..13).map(|k| collar * 1e-6 * 10f64.powf(3.0 * k as f64 / 12.0)).collect();
    let c_fit: Vec<f64> = rho_fit.iter().map(|&r| speed.c(r)).collect();
    let alpha_fit = 2.0 * fit_loglog(&rho_fit, &c_fit, 0.5, 1.0)?.slope;
    let alpha = match spec.alpha {
        Some(a) => {
            if (a - alpha_fit).abs() > 0.02 {
                return Err(GeoError::InvalidParameter(format!("profile has boundary order {alpha_fit:.4}, not the requested {a}")));
            }
            a
        }
        None => alpha_fit,
    };
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(GeoError::InvalidParameter(format!("boundary order {alpha} outside (0, 2)")));
    }
    // κ = lim c / ρ^{α/2}, from a linear fit in ρ.
    let kr: Vec<f64> = rho_fit.iter().zip(&c_fit).map(|(r, c)| c / r.powf(alpha / 2.0)).collect();
    let kappa = linear_fit(&rho_fit, &kr)?.intercept;
    let a = kappa.powf(-2.0 / (2.0 - alpha));
    let q = |xh: f64| {
        let rho = xh / a;
        let c = speed.c(rho);
        c * c / (kappa * kappa * rho.powf(alpha))
    };
    let xh_max = a * collar;
    let xh0 = xh_max * 1e-9;
    let q1 = (q(2.0 * xh0) - q(xh0)) / xh0;
    let omega0 = -q1 * xh0 / (4.0 - alpha);

    let rho_out: Vec<f64> = (0..=200).map(|i| collar * 1e-6 * 1e6f64.powf(i as f64 / 200.0)).collect();
    let eik_rho: Vec<f64> = (0..=12).map(|i| collar * 1e-4 * (0.9e4f64).powf(i as f64 / 12.0)).collect();
    let mut stops: Vec<f64> = rho_out.iter().map(|r| a * r).collect();
    for &r in &eik_rho {
        let h = 1e-3 * r;
        for k in -2..=2 {
            stops.push(a * (r + k as f64 * h));
        }
    }
    let mut values = vec![f64::NAN; stops.len()];
    let rhs = |xh: f64, y: &[f64], dy: &mut [f64]| {
        let qq = q(xh);
        if !(qq > 0.0) {
            return false;
        }
        dy[0] = (qq.powf(-0.5) * ((alpha - 2.0) * y[0] / 2.0).exp() - 1.0) / xh;
        true
    };
    integrate(rhs, xh0, &[omega0], xh_max, &stops, &OdeOptions::with_tol(1e-13, 1e-16), |v| {
        for &i in v.stops_hit {
            values[i] = v.y[0];
        }
        Control::Continue
    })?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GeoError::NoConvergence("normal-form march did not reach every output depth".into()));
    }
    let x_of = |idx: usize| values[idx].exp() * stops[idx];
    let samples: Vec<(f64, f64, f64)> = (0..rho_out.len()).map(|i| (rho_out[i], x_of(i), values[i])).collect();

    let mut eikonal_residual = 0.0f64;
    for (j, &r) in eik_rho.iter().enumerate() {
        let base = rho_out.len() + 5 * j;
        let h = 1e-3 * r;
        let xm2 = x_of(base);
        let xm1 = x_of(base + 1);
        let x0 = x_of(base + 2);
        let xp1 = x_of(base + 3);
        let xp2 = x_of(base + 4);
        let dx = (xm2 - 8.0 * xm1 + 8.0 * xp1 - xp2) / (12.0 * h);
        let c = speed.c(r);
        eikonal_residual = eikonal_residual.max((c * c * dx * dx / x0.powf(alpha) - 1.0).abs());
    }

    // Independent quadrature x^{1−α/2}/(1−α/2) = ∫_0^ρ dρ'/c, with ρ' = σ^β.
    let beta = 2.0 / (2.0 - alpha);
    let mut quadrature_deviation = 0.0f64;
    for &(r, x, _) in samples.iter().step_by(20) {
        let smax = r.powf(1.0 / beta);
        let integral = integrate_adaptive(|s| beta * s.powf(beta - 1.0) / speed.c(s.powf(beta)), 0.0, smax, 0.0, 1e-13)?;
        let xq = ((1.0 - alpha / 2.0) * integral).powf(beta);
        quadrature_deviation = quadrature_deviation.max((x - xq).abs() / xq);
    }

    // Tangential profile φ(x) = x^α r² / c², with its finite boundary value.
    let mut xs = vec![0.0];
    let mut phis = vec![radius * radius * a.powf(alpha) / (kappa * kappa)];
    for &(r, x, _) in &samples {
        let c = speed.c(r);
        xs.push(x);
        phis.push(x.powf(alpha) * (radius - r).powi(2) / (c * c));
    }
    let x_max = *xs.last().unwrap();
    let spline = CubicSpline::new(xs, phis)?;
    let cross = if spec.dim == 2 { CrossSection::Euclidean } else { CrossSection::RoundStereographic };
    let family = Arc::new(Product { dim_y: spec.dim - 1, profile: Profile::Spline(spline), cross });
    let metric = GasGiantMetric::new(alpha, spec.dim, x_max, family)?;
    Ok(NormalForm { metric, alpha, alpha_fit, kappa, radius, samples, eikonal_residual, quadrature_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(exponent: f64, b: f64, alpha: Option<f64>) -> ConformalMetricSpec {
        ConformalMetricSpec { sound_speed: SoundSpeedSpec::ShiftedPower { exponent, kappa: 1.0, b, radius: 2.0 }, collar: 0.5, dim: 3, alpha }
    }

    #[test]
    fn exact_normal_form_is_a_fixed_point() {
        let nf = normal_form_radial(&spec(0.5, 0.0, Some(1.0))).unwrap();
        assert!(nf.samples.iter().all(|s| s.2.abs() < 1e-12));
        assert!(nf.eikonal_residual < 1e-8);
    }

    #[test]
    fn perturbed_square_root_profile() {
        let nf = normal_form_radial(&spec(0.5, 1.0, None)).unwrap();
        assert!((nf.alpha - 1.0).abs() < 0.01, "alpha {}", nf.alpha);
        let nf = normal_form_radial(&spec(0.5, 1.0, Some(1.0))).unwrap();
        assert!(nf.eikonal_residual < 1e-8, "eikonal {}", nf.eikonal_residual);
        assert!(nf.quadrature_deviation < 1e-9, "quadrature {}", nf.quadrature_deviation);
    }

    #[test]
    fn mismatched_alpha_rejected() {
        assert!(normal_form_radial(&spec(0.5, 1.0, Some(1.5))).is_err());
    }

    #[test]
    fn lane_emden_profile_gives_alpha_one() {
        let s = ConformalMetricSpec { sound_speed: SoundSpeedSpec::LaneEmden { n_poly: 1.5, dimension: 3 }, collar: 0.5, dim: 3, alpha: None };
        let nf = normal_form_radial(&s).unwrap();
        assert!((nf.alpha_fit - 1.0).abs() < 0.01, "alpha {}", nf.alpha_fit);
    }
}
