//! Boundary families h(x, y): the tangential part of the compactified metric.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::spline::CubicSpline;

/// Value of h and its first derivatives at one point.
#[derive(Debug, Clone)]
pub struct HJet {
    pub h: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    /// `dy[k]` is the derivative with respect to `y_k`.
    pub dy: Vec<DMatrix<f64>>,
}

pub trait BoundaryFamily: Send + Sync + fmt::Debug {
    /// Dimension of the boundary, `n - 1`.
    fn dim_y(&self) -> usize;
    fn jet(&self, x: f64, y: &[f64]) -> HJet;
    /// True when h is the same constant matrix everywhere.
    fn is_constant(&self) -> bool {
        false
    }
    /// True when h does not depend on y.
    fn is_y_independent(&self) -> bool {
        false
    }
}

/// h = scale * identity.
#[derive(Debug, Clone)]
pub struct Flat {
    pub dim_y: usize,
    pub scale: f64,
}

impl BoundaryFamily for Flat {
    fn dim_y(&self) -> usize {
        self.dim_y
    }
    fn jet(&self, _x: f64, _y: &[f64]) -> HJet {
        let m = self.dim_y;
        HJet { h: DMatrix::identity(m, m) * self.scale, dx: DMatrix::zeros(m, m), dy: vec![DMatrix::zeros(m, m); m] }
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn is_y_independent(&self) -> bool {
        true
    }
}

/// h_ij = δ_ij (1 + a x + b sin(k y_i)) + c x, a generic x- and y-dependent test family.
#[derive(Debug, Clone)]
pub struct Warped {
    pub dim_y: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: f64,
}

impl BoundaryFamily for Warped {
    fn dim_y(&self) -> usize {
        self.dim_y
    }
    fn jet(&self, x: f64, y: &[f64]) -> HJet {
        let m = self.dim_y;
        let mut h = DMatrix::from_element(m, m, self.c * x);
        let mut dx = DMatrix::from_element(m, m, self.c);
        let mut dy = vec![DMatrix::zeros(m, m); m];
        for i in 0..m {
            h[(i, i)] += 1.0 + self.a * x + self.b * (self.k * y[i]).sin();
            dx[(i, i)] += self.a;
            dy[i][(i, i)] = self.b * self.k * (self.k * y[i]).cos();
        }
        HJet { h, dx, dy }
    }
}

/// Scalar radial profile s(x) multiplying a cross-section metric.
#[derive(Debug, Clone)]
pub enum Profile {
    Constant(f64),
    /// 1 + amplitude * exp(-((x - center) / width)^2)
    Gaussian { amplitude: f64, center: f64, width: f64 },
    Spline(CubicSpline),
}

impl Profile {
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            Profile::Constant(c) => (*c, 0.0),
            Profile::Gaussian { amplitude, center, width } => {
                let z = (x - center) / width;
                let e = amplitude * (-z * z).exp();
                (1.0 + e, -2.0 * z / width * e)
            }
            Profile::Spline(s) => {
                let (lo, hi) = s.domain();
                s.eval_with_derivative(x.clamp(lo, hi))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSection {
    Euclidean,
    /// Round unit sphere in stereographic coordinates, 4 |dy|^2 / (1 + |y|^2)^2.
    RoundStereographic,
}

/// h(x, y) = s(x) σ(y).
#[derive(Debug, Clone)]
pub struct Product {
    pub dim_y: usize,
    pub profile: Profile,
    pub cross: CrossSection,
}

impl BoundaryFamily for Product {
    fn dim_y(&self) -> usize {
        self.dim_y
    }
    fn jet(&self, x: f64, y: &[f64]) -> HJet {
        let m = self.dim_y;
        let (s, ds) = self.profile.eval(x);
        let (sig, dsig): (f64, Vec<f64>) = match self.cross {
            CrossSection::Euclidean => (1.0, vec![0.0; m]),
            CrossSection::RoundStereographic => {
                let r2: f64 = y.iter().map(|v| v * v).sum();
                let q = 1.0 + r2;
                (4.0 / (q * q), y.iter().map(|v| -16.0 * v / (q * q * q)).collect())
            }
        };
        let id = DMatrix::<f64>::identity(m, m);
        HJet { h: &id * (s * sig), dx: &id * (ds * sig), dy: dsig.iter().map(|d| &id * (s * d)).collect() }
    }
    fn is_constant(&self) -> bool {
        matches!(self.profile, Profile::Constant(_)) && self.cross == CrossSection::Euclidean
    }
    fn is_y_independent(&self) -> bool {
        self.cross == CrossSection::Euclidean
    }
}

/// Scalar h on a rectangular (x, y) grid, two-dimensional manifolds only,
/// interpolated by bicubic Catmull–Rom patches.
#[derive(Debug, Clone)]
pub struct Tabulated {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Tabulated {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let uniform = |v: &[f64]| {
            v.len() >= 4 && {
                let h = v[1] - v[0];
                h > 0.0 && v.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0))
            }
        };
        if !uniform(&xs) || !uniform(&ys) {
            return Err(GeoError::InvalidParameter("tabulated grid must be uniform with at least 4 nodes per axis".into()));
        }
        if values.len() != xs.len() || values.iter().any(|r| r.len() != ys.len()) {
            return Err(GeoError::InvalidParameter("tabulated values must be indexed [x][y]".into()));
        }
        Ok(Self { xs, ys, values })
    }

    fn locate(grid: &[f64], t: f64) -> (usize, f64, f64) {
        let h = grid[1] - grid[0];
        let s = ((t - grid[0]) / h).clamp(0.0, (grid.len() - 1) as f64);
        let i = (s.floor() as usize).min(grid.len() - 2);
        (i, s - i as f64, h)
    }

    fn node(&self, i: isize, j: isize) -> f64 {
        // Ghost nodes outside the table come from linear extrapolation.
        let nx = self.xs.len() as isize;
        let ny = self.ys.len() as isize;
        let ci = i.clamp(0, nx - 1) as usize;
        let cj = j.clamp(0, ny - 1) as usize;
        let v = &self.values;
        let ex = if i < 0 {
            v[0][cj] - v[1][cj]
        } else if i >= nx {
            v[ci][cj] - v[ci - 1][cj]
        } else {
            0.0
        };
        let ey = if j < 0 {
            v[ci][0] - v[ci][1]
        } else if j >= ny {
            v[ci][cj] - v[ci][cj - 1]
        } else {
            0.0
        };
        v[ci][cj] + ex + ey
    }

    fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (i, u, hx) = Self::locate(&self.xs, x);
        let (j, v, hy) = Self::locate(&self.ys, y);
        let w = |t: f64| -> ([f64; 4], [f64; 4]) {
            let t2 = t * t;
            let t3 = t2 * t;
            (
                [(-t3 + 2.0 * t2 - t) / 2.0, (3.0 * t3 - 5.0 * t2 + 2.0) / 2.0, (-3.0 * t3 + 4.0 * t2 + t) / 2.0, (t3 - t2) / 2.0],
                [(-3.0 * t2 + 4.0 * t - 1.0) / 2.0, (9.0 * t2 - 10.0 * t) / 2.0, (-9.0 * t2 + 8.0 * t + 1.0) / 2.0, (3.0 * t2 - 2.0 * t) / 2.0],
            )
        };
        let (wu, du) = w(u);
        let (wv, dv) = w(v);
        let (mut f, mut fx, mut fy) = (0.0, 0.0, 0.0);
        for a in 0..4 {
            for b in 0..4 {
                let p = self.node(i as isize + a as isize - 1, j as isize + b as isize - 1);
                f += wu[a] * wv[b] * p;
                fx += du[a] * wv[b] * p;
                fy += wu[a] * dv[b] * p;
            }
        }
        (f, fx / hx, fy / hy)
    }
}

impl BoundaryFamily for Tabulated {
    fn dim_y(&self) -> usize {
        1
    }
    fn jet(&self, x: f64, y: &[f64]) -> HJet {
        let (f, fx, fy) = self.eval(x, y[0]);
        HJet { h: DMatrix::from_element(1, 1, f), dx: DMatrix::from_element(1, 1, fx), dy: vec![DMatrix::from_element(1, 1, fy)] }
    }
}
