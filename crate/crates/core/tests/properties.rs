use std::sync::Arc;

use gasgiant::fit::fit_loglog;
use gasgiant::flow::{flow_for_time, integrate_to_boundary, FlowOptions, PhasePoint, TrajectoryStatus};
use gasgiant::jacobi::{integrate_jacobi, normal_basis, symplectic_pairing, velocity_from_phase, JacobiOptions};
use gasgiant::metric::curvature::riemann;
use gasgiant::metric::{GasGiantMetric, Geometry, Warped};
use gasgiant::spectral::{assemble_radial, indicial_data, TruncatedEigenproblem};
use gasgiant::xray::pestov::frame_point;
use gasgiant::xray::{uf_integral, xray_transform, FieldKind, RaySpec, ScalarField, VanishingOrder, XrayOptions};
use proptest::prelude::*;

fn warped(alpha: f64, dim: usize, a: f64, b: f64) -> GasGiantMetric {
    GasGiantMetric::new(alpha, dim, 5.0, Arc::new(Warped { dim_y: dim - 1, a, b, c: 0.0, k: 1.0 })).unwrap()
}

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cfg(32))]

    #[test]
    fn cometric_inverts_the_metric(alpha in 0.2f64..1.8, x in 0.01f64..3.0, y0 in -1.0f64..1.0, y1 in -1.0f64..1.0, a in 0.0f64..0.3) {
        let m = warped(alpha, 3, a, 0.2);
        let jet = m.h_jet(x, &[y0, y1]);
        let (hinv, _, _) = m.cometric(x, &[y0, y1]).unwrap();
        let id = &jet.h * &hinv;
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                prop_assert!((id[(i, j)] - delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn christoffel_symbols_match_metric_derivatives(alpha in 0.2f64..1.8, x in 0.05f64..2.0, y0 in -1.0f64..1.0, y1 in -1.0f64..1.0) {
        let m = warped(alpha, 3, 0.25, 0.15);
        let p = [x, y0, y1];
        let gam = m.christoffel(&p).unwrap();
        let g = m.metric_tensor(&p).unwrap();
        let ginv = g.clone().try_inverse().unwrap();
        let dg: Vec<_> = (0..3).map(|e| {
            let h = 1e-5 * p[e].abs().max(0.1);
            let (mut pp, mut pm) = (p, p);
            pp[e] += h;
            pm[e] -= h;
            (m.metric_tensor(&pp).unwrap() - m.metric_tensor(&pm).unwrap()) / (2.0 * h)
        }).collect();
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(gam.get(k, i, j), gam.get(k, j, i));
                    let fd: f64 = (0..3).map(|l| 0.5 * ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)])).sum();
                    worst = worst.max((fd - gam.get(k, i, j)).abs());
                    scale = scale.max(gam.get(k, i, j).abs());
                }
            }
        }
        prop_assert!(worst < 1e-8 * scale, "{} {}", worst, scale);
    }

    #[test]
    fn first_bianchi_identity(alpha in 0.2f64..1.8, x in 0.05f64..2.0, y0 in -1.0f64..1.0, y1 in -1.0f64..1.0) {
        let m = warped(alpha, 3, 0.25, 0.15);
        prop_assert!(riemann(&m, &[x, y0, y1]).unwrap().bianchi_defect() < 1e-9);
    }

    #[test]
    fn hamiltonian_is_conserved_along_rays(alpha in 0.3f64..1.7, x in 0.05f64..1.0, theta in 0.0f64..std::f64::consts::TAU) {
        let m = warped(alpha, 2, 0.2, 0.1);
        let p = frame_point(&m, x, 0.0, theta).unwrap();
        let tr = integrate_to_boundary(&m, &p, &FlowOptions::default()).unwrap();
        prop_assume!(tr.status == TrajectoryStatus::Exited);
        for s in tr.samples.iter().filter(|s| s.point.x > 1e-6) {
            prop_assert!((s.point.hamiltonian(&m).unwrap() - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn outgoing_rays_near_the_boundary_keep_falling(alpha in 0.3f64..1.7, x in 1e-4f64..1e-2, theta in 1.7f64..4.5) {
        // Frame angle in (π/2, 3π/2) means ξ < 0.
        let m = warped(alpha, 2, 0.2, 0.1);
        let p = frame_point(&m, x, 0.1, theta).unwrap();
        prop_assume!(p.xi < 0.0);
        let tr = integrate_to_boundary(&m, &p, &FlowOptions::default()).unwrap();
        prop_assert_eq!(tr.status, TrajectoryStatus::Exited);
        prop_assert!(tr.apexes.is_empty());
        prop_assert!(tr.samples.windows(2).all(|w| w[1].point.x <= w[0].point.x));
    }
}

proptest! {
    #![proptest_config(cfg(16))]

    #[test]
    fn xray_is_linear_and_reversal_invariant(x in 0.1f64..1.0, y in -0.5f64..0.5, theta in 0.0f64..std::f64::consts::TAU, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let m = GasGiantMetric::model(1.0).unwrap();
        let o = XrayOptions { allow_escape: true, ..XrayOptions::default() };
        let f = ScalarField::new(FieldKind::Bump { center: vec![0.5, 0.0], radius: 0.4, amplitude: 1.0 }, VanishingOrder::Infinite);
        let g = ScalarField::new(FieldKind::Poly { power: 2, coefficients: vec![1.0, 0.3], shift: 0.0 }, VanishingOrder::Finite(2));
        let ray = RaySpec::Through { x, y: vec![y], theta };
        let (i_f, i_g) = (xray_transform(&m, &f, &ray, &o).unwrap(), xray_transform(&m, &g, &ray, &o).unwrap());
        let p = ray.phase_point(&m).unwrap();
        let both = |x: f64, yy: &[f64], out: &mut [f64]| out[0] = a * f.eval(x, yy) + b * g.eval(x, yy);
        let fw = gasgiant::xray::forward_integrals(&m, &p, 1, both, &o).unwrap()[0];
        let bw = gasgiant::xray::forward_integrals(&m, &p.reversed(), 1, both, &o).unwrap()[0];
        prop_assert!((fw + bw - (a * i_f + b * i_g)).abs() < 1e-10 * (1.0 + a.abs() * i_f.abs() + b.abs() * i_g.abs()));
        let rev = RaySpec::Covector { x: p.x, y: p.y.clone(), xi: -p.xi, eta: p.eta.iter().map(|e| -e).collect() };
        prop_assert!((xray_transform(&m, &f, &rev, &o).unwrap() - i_f).abs() < 1e-8);
    }

    #[test]
    fn transport_semigroup(x in 0.1f64..1.0, y in -0.5f64..0.5, theta in 0.0f64..std::f64::consts::TAU, s in 0.01f64..0.5) {
        let m = warped(0.8, 2, 0.2, 0.1);
        let o = XrayOptions { allow_escape: true, ..XrayOptions::default() };
        let f = ScalarField::new(FieldKind::PowerBump { power: 4, center: vec![0.0], radius: 1.0, amplitude: 1.0, x_cutoff: None }, VanishingOrder::Finite(4));
        let p = frame_point(&m, x, y, theta).unwrap();
        let g = |x: f64, yy: &[f64], out: &mut [f64]| out[0] = f.eval(x, yy);
        let Ok((q, head)) = flow_for_time(&m, &p, s, &o.flow, Some((1, &g))) else { return Ok(()) };
        prop_assume!(q.x > 1e-3);
        let whole = uf_integral(&m, &f, &p, &o).unwrap();
        prop_assert!((whole - head[0] - uf_integral(&m, &f, &q, &o).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn symplectic_pairing_is_conserved(x in 0.2f64..1.0, theta in 0.0f64..std::f64::consts::TAU, c in -1.0f64..1.0) {
        let m = warped(1.0, 3, 0.2, 0.1);
        let h = m.h_jet(x, &[0.0, 0.0]).h;
        let p = PhasePoint::new(x, vec![0.0, 0.0], theta.cos(), vec![theta.sin() * h[(0, 0)].sqrt(), 0.3]).unit_speed(&m).unwrap();
        let (pos, vel) = velocity_from_phase(&m, &p).unwrap();
        let basis = normal_basis(&m, &pos, &vel).unwrap();
        let fields = vec![(basis[0].clone(), basis[1].iter().map(|v| c * v).collect()), (basis[1].clone(), basis[0].clone())];
        let opts = JacobiOptions { t_max: 1.0, x_stop: Some(0.02), x_ceiling: Some(4.0), ..JacobiOptions::default() };
        let run = integrate_jacobi(&m, &pos, &vel, &fields, &opts).unwrap();
        let w0 = symplectic_pairing(&m, &run.samples[0]).unwrap();
        for s in &run.samples {
            prop_assert!((symplectic_pairing(&m, s).unwrap() - w0).abs() < 1e-7);
        }
    }
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn indicial_midpoints_coincide(k in 1u32..128, n in 2usize..9) {
        let alpha = k as f64 / 64.0;
        let d = indicial_data(alpha, n).unwrap();
        prop_assert_eq!(d.root_midpoint(), d.cutoff_midpoint());
        prop_assert_eq!(d.essentially_self_adjoint, d.gamma_minus < d.mu_minus && d.mu_plus < d.gamma_plus);
    }

    #[test]
    fn radial_operator_is_weighted_symmetric(alpha in 0.1f64..1.9, n in 2usize..6, mu in 0.0f64..5.0, e in 2.0f64..14.0, seed in 0u64..1000) {
        let op = assemble_radial(&TruncatedEigenproblem::new(alpha, n, mu, 2f64.powf(-e)).with_cells(300)).unwrap();
        prop_assert!(op.symmetry_residual(2, seed) < 1e-10);
        let l: Vec<f64> = (1..=3).map(|j| op.eigenvalue(j).unwrap()).collect();
        prop_assert!(l[0] > 0.0 && l[0] < l[1] && l[1] < l[2]);
    }

    #[test]
    fn loglog_fit_recovers_power_laws(p in -3.0f64..3.0, c in 0.01f64..100.0, lo in -8.0f64..0.0) {
        let s: Vec<f64> = (0..12).map(|i| 10f64.powf(lo + 3.0 * i as f64 / 11.0)).collect();
        let v: Vec<f64> = s.iter().map(|x| c * x.powf(p)).collect();
        let f = fit_loglog(&s, &v, p, 1e-9).unwrap();
        prop_assert!(f.pass);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
    }
}
