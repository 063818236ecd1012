//! Indicial data and truncated Dirichlet eigenvalues of the degenerate Laplacian
//! Δ_g = x^α ∂_x² − α(n/2−1) x^{α−1} ∂_x − μ x^α on a single cross-section mode.
//!
//! The radial operator is the divergence form L u = w⁻¹(p u′)′ − μ x^α u with
//! w = x^{−nα/2} (the volume density) and p = w x^α, discretized by vertex-centred finite
//! volumes as a symmetric pencil K − λM on a grid graded towards x = ε.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fit::fit_loglog;
use crate::metric::volume_density_exponent;
use crate::spline::thomas;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicialData {
    pub alpha: f64,
    pub n: usize,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub essentially_self_adjoint: bool,
}

impl IndicialData {
    pub fn root_midpoint(&self) -> f64 {
        (self.gamma_minus + self.gamma_plus) / 2.0
    }

    pub fn cutoff_midpoint(&self) -> f64 {
        (self.mu_minus + self.mu_plus) / 2.0
    }
}

fn check_alpha_n(alpha: f64, n: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(GeoError::InvalidParameter(format!("alpha = {alpha} is outside (0, 2)")));
    }
    if n < 2 {
        return Err(GeoError::InvalidParameter(format!("dimension {n} must be at least 2")));
    }
    Ok(())
}

/// Roots of γ² − (α(n/2−1)+1)γ = 0 and the L² cutoff window of dV_g.
pub fn indicial_data(alpha: f64, n: usize) -> Result<IndicialData> {
    check_alpha_n(alpha, n)?;
    let nf = n as f64;
    let gamma_plus = alpha * (nf / 2.0 - 1.0) + 1.0;
    let mu_minus = 0.5 * (nf * alpha / 2.0 - 1.0);
    let mu_plus = mu_minus + 2.0 - alpha;
    Ok(IndicialData { alpha, n, gamma_minus: 0.0, gamma_plus, mu_minus, mu_plus, essentially_self_adjoint: alpha > 2.0 / nf })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
    Robin { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEigenproblem {
    pub alpha: f64,
    pub n: usize,
    /// Eigenvalue of the cross-section Laplacian.
    pub mu_mode: f64,
    pub eps: f64,
    /// Number of grid cells on [ε, 1].
    pub cells: usize,
    pub condition: BoundaryCondition,
}

impl TruncatedEigenproblem {
    pub fn new(alpha: f64, n: usize, mu_mode: f64, eps: f64) -> Self {
        Self { alpha, n, mu_mode, eps, cells: 2000, condition: BoundaryCondition::Dirichlet }
    }

    pub fn with_cells(self, cells: usize) -> Self {
        Self { cells, ..self }
    }

    fn validate(&self) -> Result<()> {
        check_alpha_n(self.alpha, self.n)?;
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(GeoError::InvalidParameter(format!("truncation height {} is outside (0, 1)", self.eps)));
        }
        if !(self.mu_mode >= 0.0) {
            return Err(GeoError::InvalidParameter("mode eigenvalue must be nonnegative".into()));
        }
        if self.cells < 8 {
            return Err(GeoError::InvalidParameter("grid too coarse".into()));
        }
        if self.condition != BoundaryCondition::Dirichlet {
            return Err(GeoError::InvalidParameter("only Dirichlet conditions are assembled".into()));
        }
        Ok(())
    }

    /// x_i = ε + (1−ε)(i/N)³.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.cells as f64;
        (0..=self.cells).map(|i| self.eps + (1.0 - self.eps) * (i as f64 / n).powi(3)).collect()
    }

    pub fn weight(&self, x: f64) -> f64 {
        x.powf(volume_density_exponent(self.alpha, self.n))
    }

    pub fn flux_coefficient(&self, x: f64) -> f64 {
        self.weight(x) * x.powf(self.alpha)
    }
}

/// Symmetric pencil K − λM on the interior nodes, with Dirichlet values at both ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialOperator {
    pub x: Vec<f64>,
    /// Face conductances p(x_{i+½}) / (x_{i+1} − x_i), one per cell.
    pub conductance: Vec<f64>,
    /// Mode term μ p(x_i)(x_{i+1} − x_{i−1})/2 on interior nodes.
    pub reaction: Vec<f64>,
    /// Lumped weights on interior nodes: w(x_i)(p(x_{i+½}) − p(x_{i−½}))/p′(x_i), which is
    /// w(x_i)(x_{i+1} − x_{i−1})/2 when p is constant and makes L exact on u = x otherwise.
    pub mass: Vec<f64>,
}

impl RadialOperator {
    pub fn interior(&self) -> usize {
        self.mass.len()
    }

    /// (L u)_i on interior nodes for a full nodal vector u (end values included).
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (1..self.x.len() - 1)
            .map(|i| {
                let c = &self.conductance;
                let flux = c[i] * (u[i + 1] - u[i]) - c[i - 1] * (u[i] - u[i - 1]);
                (flux - self.reaction[i - 1] * u[i]) / self.mass[i - 1]
            })
            .collect()
    }

    /// |⟨Lu, v⟩_w − ⟨u, Lv⟩_w| / (‖Lu‖‖v‖ + ‖u‖‖Lv‖) for seeded random interior vectors.
    pub fn symmetry_residual(&self, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.interior();
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let mut draw = || {
                let mut v = vec![0.0; m + 2];
                v[1..=m].iter_mut().for_each(|e| *e = rng.gen_range(-1.0..1.0));
                v
            };
            let (u, v) = (draw(), draw());
            let (lu, lv) = (self.apply(&u), self.apply(&v));
            let ip = |a: &[f64], b: &[f64]| -> f64 { (0..m).map(|i| self.mass[i] * a[i] * b[i + 1]).sum() };
            let norm = |a: &[f64], shift: usize| -> f64 { (0..m).map(|i| self.mass[i] * a[i + shift].powi(2)).sum::<f64>().sqrt() };
            let scale = norm(&lu, 0) * norm(&v, 1) + norm(&u, 1) * norm(&lv, 0);
            worst = worst.max((ip(&lu, &v) - ip(&lv, &u)).abs() / scale);
        }
        worst
    }

    /// Number of pencil eigenvalues below σ, by a pivot recursion written in terms of the
    /// excess e_i = d_i − c_i so that nodes with huge conductances do not cancel.
    pub fn count_below(&self, sigma: f64) -> usize {
        let c = &self.conductance;
        let mut count = 0;
        let mut excess = f64::INFINITY;
        for i in 1..self.x.len() - 1 {
            let cin = c[i - 1];
            let carried = if excess.is_infinite() { cin } else { cin * excess / (cin + excess) };
            excess = carried + self.reaction[i - 1] - sigma * self.mass[i - 1];
            let pivot = c[i] + excess;
            if pivot < 0.0 {
                count += 1;
            }
            if pivot == 0.0 {
                excess = -c[i] * (1.0 - f64::EPSILON);
            }
        }
        count
    }

    /// The j-th eigenvalue (1-based) by bisection on the Sturm count.
    pub fn eigenvalue(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.interior() {
            return Err(GeoError::InvalidParameter(format!("eigenvalue index {j} out of range")));
        }
        let mut hi = 1.0;
        while self.count_below(hi) < j {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(GeoError::NoConvergence("no upper bracket for the eigenvalue".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) >= j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Eigenvector for an eigenvalue estimate by shift-invert iteration, normalized in
    /// the weighted norm and positive next to x = ε. End values are included.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let m = self.interior();
        let c = &self.conductance;
        let sigma = lambda * (1.0 + 1e-10) + 1e-300;
        let sub: Vec<f64> = (0..m).map(|i| if i == 0 { 0.0 } else { -c[i] }).collect();
        let sup: Vec<f64> = (0..m).map(|i| if i + 1 == m { 0.0 } else { -c[i + 1] }).collect();
        let diag: Vec<f64> = (0..m).map(|i| c[i] + c[i + 1] + self.reaction[i] - sigma * self.mass[i]).collect();
        let mut v = vec![1.0; m];
        for _ in 0..4 {
            let rhs: Vec<f64> = (0..m).map(|i| self.mass[i] * v[i]).collect();
            v = thomas(&sub, &diag, &sup, &rhs);
            let norm = (0..m).map(|i| self.mass[i] * v[i] * v[i]).sum::<f64>().sqrt();
            v.iter_mut().for_each(|e| *e /= norm);
        }
        let sign = v.iter().find(|e| **e != 0.0).map_or(1.0, |e| e.signum());
        let mut full = vec![0.0; m + 2];
        full[1..=m].iter_mut().zip(&v).for_each(|(f, e)| *f = sign * e);
        full
    }

    pub fn rayleigh_quotient(&self, u: &[f64]) -> f64 {
        let lu = self.apply(u);
        let m = self.interior();
        -(0..m).map(|i| self.mass[i] * lu[i] * u[i + 1]).sum::<f64>() / (0..m).map(|i| self.mass[i] * u[i + 1] * u[i + 1]).sum::<f64>()
    }
}

pub fn assemble_radial(problem: &TruncatedEigenproblem) -> Result<RadialOperator> {
    problem.validate()?;
    let x = problem.grid();
    let n = x.len();
    let conductance: Vec<f64> = x.windows(2).map(|w| problem.flux_coefficient(0.5 * (w[0] + w[1])) / (w[1] - w[0])).collect();
    // p = x^k; p(b) − p(a) = p(a)·expm1(k·ln(1 + (b − a)/a)) avoids cancellation on tiny cells.
    let k = problem.alpha * (1.0 - problem.n as f64 / 2.0);
    let mut reaction = Vec::with_capacity(n - 2);
    let mut mass = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let half = 0.5 * (x[i + 1] - x[i - 1]);
        let (a, b) = (0.5 * (x[i - 1] + x[i]), 0.5 * (x[i] + x[i + 1]));
        let span = if k == 0.0 { half } else { a.powf(k) * (k * ((b - a) / a).ln_1p()).exp_m1() / (k * x[i].powf(k - 1.0)) };
        mass.push(problem.weight(x[i]) * span);
        reaction.push(problem.mu_mode * problem.flux_coefficient(x[i]) * half);
    }
    let op = RadialOperator { x, conductance, reaction, mass };
    let sym = op.symmetry_residual(3, 17);
    if !(sym < 1e-10) {
        return Err(GeoError::InvalidParameter(format!("discrete operator not symmetric (residual {sym:e})")));
    }
    Ok(op)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncatedEigenvalues {
    pub eps: f64,
    /// Grid-extrapolated eigenvalues λ₁(ε) ≤ … ≤ λ_k(ε).
    pub lambda: Vec<f64>,
    /// Estimated remaining discretization error per eigenvalue.
    pub discretization_error: Vec<f64>,
    pub cells: Vec<usize>,
    pub symmetry_residual: f64,
}

/// The k smallest Dirichlet eigenvalues at N, 2N and 4N cells, Richardson-extrapolated
/// in N⁻² and then N⁻⁴.
pub fn eigenvalues_truncated(problem: &TruncatedEigenproblem, k: usize) -> Result<TruncatedEigenvalues> {
    if k == 0 || k > 20 {
        return Err(GeoError::InvalidParameter(format!("requested {k} eigenvalues, allowed 1..=20")));
    }
    let cells = vec![problem.cells, 2 * problem.cells, 4 * problem.cells];
    let levels = cells
        .iter()
        .map(|&c| {
            let op = assemble_radial(&problem.with_cells(c))?;
            let l = (1..=k).map(|j| op.eigenvalue(j)).collect::<Result<Vec<f64>>>()?;
            Ok((l, op.symmetry_residual(3, 23)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lambda = Vec::with_capacity(k);
    let mut err = Vec::with_capacity(k);
    for j in 0..k {
        let (a, b, c) = (levels[0].0[j], levels[1].0[j], levels[2].0[j]);
        let r1 = (4.0 * b - a) / 3.0;
        let r2 = (4.0 * c - b) / 3.0;
        lambda.push((16.0 * r2 - r1) / 15.0);
        err.push((r2 - r1).abs() / 15.0);
    }
    if lambda.iter().any(|l| !(*l > 0.0)) || lambda.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GeoError::NoConvergence(format!("eigenvalues not positive and increasing at ε = {}: {lambda:?}", problem.eps)));
    }
    Ok(TruncatedEigenvalues {
        eps: problem.eps,
        lambda,
        discretization_error: err,
        cells,
        symmetry_residual: levels.iter().map(|l| l.1).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenRow {
    pub eps: f64,
    pub j: usize,
    pub lambda: f64,
    pub discretization_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenTable {
    pub alpha: f64,
    pub n: usize,
    pub mu_mode: f64,
    pub rows: Vec<EigenRow>,
    /// ε → 0 limits from the two smallest ε, Richardson with exponent γ₊.
    pub extrapolated: Vec<f64>,
    pub symmetry_residual: f64,
}

impl EigenTable {
    pub fn k(&self) -> usize {
        self.extrapolated.len()
    }

    /// (ε, λ_j(ε), discretization error) for one index, in ladder order.
    pub fn series(&self, j: usize) -> Vec<(f64, f64, f64)> {
        self.rows.iter().filter(|r| r.j == j).map(|r| (r.eps, r.lambda, r.discretization_error)).collect()
    }

    /// Dirichlet monotonicity: each λ_j(ε) strictly decreases as ε decreases.
    pub fn monotone_in_eps(&self) -> bool {
        (1..=self.k()).all(|j| {
            let mut s = self.series(j);
            s.sort_by(|a, b| b.0.total_cmp(&a.0));
            s.windows(2).all(|w| w[1].1 < w[0].1)
        })
    }
}

/// ε = 2^{-k} for k in the range.
pub fn eps_ladder(ks: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    ks.map(|k| 2f64.powi(-k)).collect()
}

pub fn eigen_table(alpha: f64, n: usize, mu_mode: f64, eps: &[f64], k: usize, cells: usize) -> Result<EigenTable> {
    let ind = indicial_data(alpha, n)?;
    if eps.len() < 2 {
        return Err(GeoError::InsufficientData("ε ladder needs at least two values".into()));
    }
    let levels = eps
        .par_iter()
        .map(|&e| eigenvalues_truncated(&TruncatedEigenproblem::new(alpha, n, mu_mode, e).with_cells(cells), k))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..eps.len()).collect();
    order.sort_by(|&a, &b| eps[a].total_cmp(&eps[b]));
    let (s, t) = (&levels[order[0]], &levels[order[1]]);
    let r = (s.eps / t.eps).powf(ind.gamma_plus);
    let extrapolated = (0..k).map(|j| (s.lambda[j] - r * t.lambda[j]) / (1.0 - r)).collect();
    let rows = levels
        .iter()
        .flat_map(|l| (0..k).map(move |j| EigenRow { eps: l.eps, j: j + 1, lambda: l.lambda[j], discretization_error: l.discretization_error[j] }))
        .collect();
    Ok(EigenTable { alpha, n, mu_mode, rows, extrapolated, symmetry_residual: levels.iter().map(|l| l.symmetry_residual).fold(0.0, f64::max) })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub j: usize,
    pub slope: f64,
    pub expected: f64,
    pub usable: usize,
    pub pass: bool,
}

/// Slopes of log |λ_j(ε) − λ_j| against log ε; points whose gap is within ten times the
/// discretization error are dropped, and at least three decades of ε must remain.
pub fn truncation_rate_fit(table: &EigenTable, tolerance: f64) -> Result<Vec<RateFit>> {
    let expected = indicial_data(table.alpha, table.n)?.gamma_plus;
    (1..=table.k())
        .map(|j| {
            let lim = table.extrapolated[j - 1];
            let (s, v): (Vec<f64>, Vec<f64>) = table.series(j).into_iter().filter(|(_, l, e)| (l - lim).abs() > 10.0 * e).map(|(e, l, _)| (e, (l - lim).abs())).unzip();
            let span = s.iter().copied().fold(0.0, f64::max) / s.iter().copied().fold(f64::INFINITY, f64::min);
            if s.len() < 4 || !(span >= 1e3 * (1.0 - 1e-9)) {
                return Err(GeoError::InsufficientData(format!("eigenvalue {j}: {} usable points spanning a factor {span:.3} in ε", s.len())));
            }
            let fit = fit_loglog(&s, &v, expected, tolerance)?;
            Ok(RateFit { j, slope: fit.slope, expected, usable: s.len(), pass: fit.pass })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryProfile {
    pub j: usize,
    pub lambda: f64,
    /// Exponent of |φ| ~ x^β on [10ε, 0.1].
    pub beta: f64,
    pub expected: f64,
    /// Smallest C with |φ| ≤ C x (ε + x)^{α(n/2−1)} on the grid.
    pub bound_constant: f64,
    /// Smallest ratio |φ| / (x (ε + x)^{α(n/2−1)}) on [2ε, 0.5].
    pub bound_floor: f64,
    /// Exponent of φ ~ (x − ε)^s next to the wall.
    pub wall_exponent: f64,
}

fn interpolate(x: &[f64], v: &[f64], t: f64) -> f64 {
    let i = x.partition_point(|p| *p <= t).clamp(1, x.len() - 1) - 1;
    let a = (t - x[i]) / (x[i + 1] - x[i]);
    (1.0 - a) * v[i] + a * v[i + 1]
}

fn log_points(a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| a * (b / a).powf(i as f64 / (count - 1) as f64)).collect()
}

pub fn eigenfunction_boundary_profile(problem: &TruncatedEigenproblem, j: usize) -> Result<BoundaryProfile> {
    let (lo, hi) = (10.0 * problem.eps, 0.1);
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(GeoError::InvalidParameter(format!("fit window [{lo}, {hi}] collides with ε = {}", problem.eps)));
    }
    let op = assemble_radial(problem)?;
    let lambda = op.eigenvalue(j)?;
    let phi = op.eigenvector(lambda);
    let ind = indicial_data(problem.alpha, problem.n)?;
    let drift = ind.gamma_plus - 1.0;
    let x = &op.x;
    let ts = log_points(lo, hi, 40);
    let vals: Vec<f64> = ts.iter().map(|&t| interpolate(x, &phi, t).abs()).collect();
    let beta = fit_loglog(&ts, &vals, ind.gamma_plus, 0.05)?.slope;
    let shape = |t: f64| t * (problem.eps + t).powf(drift);
    let ratios: Vec<(f64, f64)> = x[1..x.len() - 1].iter().zip(&phi[1..phi.len() - 1]).map(|(&t, &v)| (t, v.abs() / shape(t))).collect();
    let bound_constant = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let bound_floor = ratios.iter().filter(|r| r.0 >= 2.0 * problem.eps && r.0 <= 0.5).map(|r| r.1).fold(f64::INFINITY, f64::min);
    let ws = log_points(1e-4 * problem.eps, 1e-2 * problem.eps, 12);
    let wv: Vec<f64> = ws.iter().map(|&d| interpolate(x, &phi, problem.eps + d).abs()).collect();
    let wall_exponent = fit_loglog(&ws, &wv, 1.0, 0.05)?.slope;
    Ok(BoundaryProfile { j, lambda, beta, expected: ind.gamma_plus, bound_constant, bound_floor, wall_exponent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{GasGiantMetric, Warped};

    /// J₁ by its power series, adequate for arguments below 20.
    fn bessel_j1(z: f64) -> f64 {
        let q = -z * z / 4.0;
        let mut term = z / 2.0;
        let mut sum = term;
        for k in 1..80 {
            term *= q / (k as f64 * (k + 1) as f64);
            sum += term;
        }
        sum
    }

    fn bessel_j1_zero(j: usize) -> f64 {
        // Zeros lie near (j + 1/4)π; bracket by ±1.
        let guess = (j as f64 + 0.25) * std::f64::consts::PI;
        let (mut a, mut b) = (guess - 1.0, guess + 1.0);
        assert!(bessel_j1(a) * bessel_j1(b) < 0.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if bessel_j1(a) * bessel_j1(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn bessel_oracle_is_sane() {
        assert!((bessel_j1_zero(1) - 3.831705970207512).abs() < 1e-10);
        assert!((bessel_j1_zero(2) - 7.015586669815619).abs() < 1e-10);
    }

    #[test]
    fn indicial_table_examples() {
        let a = indicial_data(1.0, 2).unwrap();
        assert_eq!((a.gamma_minus, a.gamma_plus, a.mu_minus, a.mu_plus, a.essentially_self_adjoint), (0.0, 1.0, 0.0, 1.0, false));
        let b = indicial_data(1.0, 4).unwrap();
        assert_eq!((b.gamma_plus, b.mu_minus, b.mu_plus, b.essentially_self_adjoint), (2.0, 0.5, 1.5, true));
        let c = indicial_data(0.5, 2).unwrap();
        assert_eq!((c.gamma_plus, c.mu_minus, c.mu_plus, c.essentially_self_adjoint), (1.0, -0.25, 1.25, false));
        assert!(indicial_data(2.0, 2).is_err() && indicial_data(1.0, 1).is_err());
    }

    #[test]
    fn weight_matches_the_volume_density() {
        let p = TruncatedEigenproblem::new(0.7, 3, 0.0, 0.01);
        let m = GasGiantMetric::flat(0.7, 3, 1.0).unwrap();
        let _ = Warped { dim_y: 2, a: 0.0, b: 0.0, c: 0.0, k: 1.0 };
        let x: f64 = 0.3;
        assert_eq!(p.weight(x), x.powf(crate::metric::volume_density_exponent(m.alpha, m.dim)));
    }

    #[test]
    fn quadratic_is_differentiated_exactly() {
        let op = assemble_radial(&TruncatedEigenproblem::new(1.0, 2, 0.0, 0.01).with_cells(200)).unwrap();
        let u: Vec<f64> = op.x.iter().map(|x| x * (1.0 - x)).collect();
        for (i, v) in op.apply(&u).iter().enumerate() {
            let (a, x, b) = (op.x[i], op.x[i + 1], op.x[i + 2]);
            // Rounding of u at the nodes, amplified by the second difference on the cell.
            let roundoff = 8.0 * f64::EPSILON * x * 0.25 / ((x - a) * 0.5 * (b - a));
            assert!((v + 2.0 * x).abs() < 1e-12 + roundoff, "{x} {v}");
        }
    }

    #[test]
    fn drift_is_reproduced_near_the_wall() {
        for (alpha, n) in [(1.0, 4), (0.5, 3), (1.5, 2)] {
            let p = TruncatedEigenproblem::new(alpha, n, 0.0, 1e-3).with_cells(2000);
            let op = assemble_radial(&p).unwrap();
            let lx = op.apply(&op.x);
            for i in 1..20 {
                let x = op.x[i];
                let drift = -alpha * (n as f64 / 2.0 - 1.0) * x.powf(alpha - 1.0);
                assert!((lx[i - 1] - drift).abs() <= 1e-8 * drift.abs().max(1.0), "{alpha} {n} {x}: {} vs {drift}", lx[i - 1]);
            }
        }
    }

    #[test]
    fn operator_is_symmetric_in_the_weighted_product() {
        for (alpha, n, mu) in [(1.0, 2, 0.0), (1.0, 4, 2.0), (0.5, 3, 1.0)] {
            let op = assemble_radial(&TruncatedEigenproblem::new(alpha, n, mu, 1e-4)).unwrap();
            assert!(op.symmetry_residual(10, 5) < 1e-10);
        }
    }

    #[test]
    fn non_dirichlet_conditions_are_rejected() {
        let p = TruncatedEigenproblem { condition: BoundaryCondition::Neumann, ..TruncatedEigenproblem::new(1.0, 2, 0.0, 0.1) };
        assert!(assemble_radial(&p).is_err());
    }

    #[test]
    fn sturm_count_agrees_with_eigenvectors() {
        let op = assemble_radial(&TruncatedEigenproblem::new(1.0, 4, 1.0, 1e-3).with_cells(400)).unwrap();
        for j in 1..=4 {
            let l = op.eigenvalue(j).unwrap();
            let v = op.eigenvector(l);
            assert!((op.rayleigh_quotient(&v) - l).abs() < 1e-9 * l);
            let sign_changes = v[1..v.len() - 1].windows(2).filter(|w| w[0] * w[1] < 0.0).count();
            assert_eq!(sign_changes, j - 1);
        }
    }

    #[test]
    fn bessel_limits_for_the_flat_model() {
        let t = eigen_table(1.0, 2, 0.0, &eps_ladder(12..=14), 5, 2000).unwrap();
        for j in 1..=5 {
            let z = bessel_j1_zero(j);
            let exact = z * z / 4.0;
            assert!((t.extrapolated[j - 1] / exact - 1.0).abs() < 1e-3, "{j} {} {exact}", t.extrapolated[j - 1]);
        }
        assert!((t.extrapolated[0] - 3.67049).abs() < 1e-3);
        assert!(t.monotone_in_eps());
    }

    #[test]
    fn truncation_rate_in_two_dimensions() {
        let t = eigen_table(1.0, 2, 0.0, &eps_ladder(4..=14), 3, 1000).unwrap();
        for f in truncation_rate_fit(&t, 0.1).unwrap() {
            assert!(f.pass, "{f:?}");
        }
    }

    #[test]
    fn too_short_ladder_is_rejected() {
        let t = eigen_table(1.0, 2, 0.0, &eps_ladder(4..=8), 1, 500).unwrap();
        assert!(truncation_rate_fit(&t, 0.1).is_err());
    }

    #[test]
    fn boundary_profile_follows_the_indicial_root() {
        for (n, beta) in [(2, 1.0), (4, 2.0)] {
            let p = TruncatedEigenproblem::new(1.0, n, 0.0, 1e-6).with_cells(4000);
            let prof = eigenfunction_boundary_profile(&p, 1).unwrap();
            assert!((prof.beta - beta).abs() < 0.05, "{prof:?}");
            assert!((prof.wall_exponent - 1.0).abs() < 0.05, "{prof:?}");
            assert!(prof.bound_floor > 0.0 && prof.bound_constant.is_finite());
        }
        assert!(eigenfunction_boundary_profile(&TruncatedEigenproblem::new(1.0, 2, 0.0, 0.01), 1).is_err());
    }
}
