//! Boundary distance functions r_x(z) = d_g(x, z) of interior points, by first-arrival
//! shooting over a sweep of initial directions.

use std::cell::RefCell;

use rayon::prelude::*;
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use super::{integrate_to_boundary, FlowOptions, PhasePoint};
use crate::error::{GeoError, Result};
use crate::metric::GasGiantMetric;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryDistanceFunction {
    pub source_x: f64,
    pub source_y: Vec<f64>,
    /// Boundary sample points (one-dimensional boundary).
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl BoundaryDistanceFunction {
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DistanceMapOptions {
    pub flow: FlowOptions,
    /// Number of initial directions in the sweep.
    pub directions: usize,
    /// Tolerance of the bracketed root refinement in the direction angle.
    pub angle_tol: f64,
}

impl Default for DistanceMapOptions {
    fn default() -> Self {
        Self { flow: FlowOptions::quiet(), directions: 720, angle_tol: 1e-13 }
    }
}

/// Unit covector at (x, y) making angle θ with the inward normal in an h-orthonormal frame.
fn direction(metric: &GasGiantMetric, x: f64, y: &[f64], theta: f64) -> Result<PhasePoint> {
    let h = metric.h_jet(x, y).h[(0, 0)];
    PhasePoint::new(x, y.to_vec(), -theta.cos(), vec![theta.sin() * h.sqrt()]).unit_speed(metric)
}

fn exit_of(metric: &GasGiantMetric, x: f64, y: &[f64], theta: f64, flow: &FlowOptions) -> Result<Option<(f64, f64)>> {
    let p = direction(metric, x, y, theta)?;
    let tr = integrate_to_boundary(metric, &p, flow)?;
    Ok(tr.exit.map(|e| (e.y_bar[0], e.time)))
}

/// d_g(source, z) for every z in `grid`, as the shortest arrival among all rays from the
/// source that exit at z. Two-dimensional metrics only.
pub fn interior_distance_map(metric: &GasGiantMetric, source_x: f64, source_y: &[f64], grid: &[f64], opts: &DistanceMapOptions) -> Result<BoundaryDistanceFunction> {
    if metric.dim != 2 {
        return Err(GeoError::InvalidParameter("distance maps are implemented for one-dimensional boundaries".into()));
    }
    if !(source_x > 0.0 && source_x < metric.x_max) {
        return Err(GeoError::Domain(format!("source height {source_x} is not interior")));
    }
    let n = opts.directions.max(8);
    let thetas: Vec<f64> = (0..n).map(|i| 2.0 * std::f64::consts::PI * i as f64 / n as f64).collect();
    let exits = thetas.par_iter().map(|&t| exit_of(metric, source_x, source_y, t, &opts.flow)).collect::<Result<Vec<_>>>()?;
    let values = grid
        .par_iter()
        .map(|&z| {
            let mut best = f64::INFINITY;
            for i in 0..n {
                let j = (i + 1) % n;
                let (Some(a), Some(b)) = (exits[i], exits[j]) else { continue };
                let (fa, fb) = (a.0 - z, b.0 - z);
                if fa == 0.0 {
                    best = best.min(a.1);
                    continue;
                }
                if fa * fb > 0.0 {
                    continue;
                }
                let t0 = thetas[i];
                let t1 = if j == 0 { 2.0 * std::f64::consts::PI } else { thetas[j] };
                let err = RefCell::new(None);
                let f = |t: f64| match exit_of(metric, source_x, source_y, t, &opts.flow) {
                    Ok(Some(e)) => e.0 - z,
                    Ok(None) => f64::NAN,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                };
                let mut conv = SimpleConvergency { eps: opts.angle_tol, max_iter: 200 };
                let Ok(root) = find_root_brent(t0, t1, f, &mut conv) else { continue };
                if let Some(e) = err.into_inner() {
                    return Err(e);
                }
                if let Some((_, time)) = exit_of(metric, source_x, source_y, root, &opts.flow)? {
                    best = best.min(time);
                }
            }
            if best.is_finite() {
                Ok(best)
            } else {
                Err(GeoError::NoConvergence(format!("no ray from the source brackets the boundary point {z}")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(BoundaryDistanceFunction { source_x, source_y: source_y.to_vec(), grid: grid.to_vec(), values })
}

/// Smallest pairwise sup-distance between the distance functions of the given sources.
pub fn distance_map_separation(maps: &[BoundaryDistanceFunction]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            best = best.min(maps[i].sup_distance(&maps[j]));
        }
    }
    best
}
