//! Cubic splines: natural interpolating splines and uniform cubic B-spline bases.

use crate::error::{GeoError, Result};

/// Natural cubic interpolating spline on strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(GeoError::InvalidParameter("spline needs at least 3 matching knots".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeoError::InvalidParameter("spline knots must increase strictly".into()));
        }
        // Tridiagonal system for second derivatives with natural ends.
        let mut a = vec![0.0; n];
        let mut b = vec![1.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            a[i] = h0 / 6.0;
            b[i] = (h0 + h1) / 3.0;
            c[i] = h1 / 6.0;
            d[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        }
        let m = thomas(&a, &b, &c, &d);
        Ok(Self { x, y, m })
    }

    fn cell(&self, t: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).0
    }

    pub fn eval_with_derivative(&self, t: f64) -> (f64, f64) {
        let i = self.cell(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let v = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0;
        let d = (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0 + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0;
        (v, d)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }
}

/// Solves a tridiagonal system with sub-diagonal `a`, diagonal `b`, super-diagonal `c`.
pub fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / den;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Cardinal cubic B-spline supported on `[0, 4]`.
pub fn cardinal_cubic(t: f64) -> f64 {
    if !(0.0..4.0).contains(&t) {
        return 0.0;
    }
    let (k, u) = (t.floor(), t - t.floor());
    match k as i32 {
        0 => u * u * u / 6.0,
        1 => (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0,
        2 => (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0,
        _ => (1.0 - u).powi(3) / 6.0,
    }
}

/// `count` uniform cubic B-splines whose supports all lie inside `[a, b]`.
#[derive(Debug, Clone, Copy)]
pub struct BSplineBasis1D {
    pub a: f64,
    pub b: f64,
    pub count: usize,
}

impl BSplineBasis1D {
    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / (self.count + 3) as f64
    }

    pub fn eval(&self, j: usize, x: f64) -> f64 {
        cardinal_cubic((x - self.a) / self.spacing() - j as f64)
    }

    pub fn support(&self, j: usize) -> (f64, f64) {
        let h = self.spacing();
        (self.a + j as f64 * h, self.a + (j + 4) as f64 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_smooth_function() {
        let x: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0 * 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = CubicSpline::new(x, y).unwrap();
        for &t in &[0.5, 1.234, 2.9] {
            let (v, d) = s.eval_with_derivative(t);
            assert!((v - f64::sin(t)).abs() < 1e-7);
            assert!((d - f64::cos(t)).abs() < 1e-5);
        }
    }

    #[test]
    fn cardinal_bspline_partition_of_unity() {
        for k in 0..20 {
            let t = 3.0 + k as f64 * 0.05;
            let s: f64 = (0..4).map(|j| cardinal_cubic(t - j as f64)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        let basis = BSplineBasis1D { a: 0.1, b: 0.6, count: 10 };
        assert!(basis.eval(0, 0.1) == 0.0 && basis.eval(9, 0.6) == 0.0);
        assert!(basis.support(9).1 <= 0.6 + 1e-15);
    }
}
