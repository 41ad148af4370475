//! Split LASSO regularization paths on the first half of the data, and the
//! significance levels derived from them.
//!
//! The objective at a grid point lambda is
//!
//! ```text
//! (1/(2 n1)) ||y1 - X1 beta||^2 + (1/(2 nu)) ||D beta - gamma||^2 + lambda ||gamma||_1
//! ```
//!
//! minimized by block alternating minimization: the beta step solves a fixed
//! SPD system (factorized once per nu), the gamma step is a coordinate-wise
//! soft threshold. Warm starts chain along the decreasing grid.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Dataset, LinearTransform};
use crate::numerics::{soft_threshold, SpdFactor, SymMatrix};

const MAX_SWEEPS: usize = 10_000;
const SWEEP_TOL: f64 = 1e-10;
const KKT_TOL: f64 = 1e-6;

/// Strictly decreasing positive regularization grid, log-uniformly spaced
/// from lambda_max down to lambda_max * min_ratio. Empty when lambda_max = 0.
#[derive(Debug, Clone)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn log_spaced(lambda_max: f64, count: usize, min_ratio: f64) -> Result<Self> {
        if lambda_max < 0.0 || !lambda_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda_max must be finite and nonnegative, got {lambda_max}"
            )));
        }
        if count == 0 || !(min_ratio > 0.0 && min_ratio < 1.0) {
            return Err(Error::InvalidParameter(
                "grid needs count >= 1 and min_ratio in (0, 1)".into(),
            ));
        }
        if lambda_max == 0.0 {
            return Ok(Self { values: Vec::new() });
        }
        let values = if count == 1 {
            vec![lambda_max]
        } else {
            let log_max = lambda_max.ln();
            let log_min = (lambda_max * min_ratio).ln();
            (0..count)
                .map(|k| {
                    let t = k as f64 / (count - 1) as f64;
                    (log_max + t * (log_min - log_max)).exp()
                })
                .collect()
        };
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One Split LASSO instance: data half, transform, and nu, with the beta-step
/// factorization cached.
pub struct SplitLassoProblem {
    gram: SymMatrix,
    // Dense inverse of the Gram; the beta step is then one gemv per sweep,
    // which is much faster than repeated triangular solves.
    gram_inverse: DMatrix<f64>,
    xty: DVector<f64>,
    transform: LinearTransform,
    nu: f64,
    beta_infinity: DVector<f64>,
    d_beta_infinity: DVector<f64>,
    // ||y1||^2 / (2 n1), so the objective is computable from Gram quantities.
    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    response_energy: f64,
}

/// Warm-startable solver state.
#[derive(Debug, Clone)]
pub struct PathState {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub d_beta: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PointDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl SplitLassoProblem {
    pub fn new(dataset1: &Dataset, transform: &LinearTransform, nu: f64) -> Result<Self> {
        if transform.p() != dataset1.p() {
            return Err(Error::DimensionMismatch(format!(
                "transform expects p = {}, dataset has p = {}",
                transform.p(),
                dataset1.p()
            )));
        }
        if !(nu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nu must be positive, got {nu}"
            )));
        }
        let n1 = dataset1.n() as f64;
        let x = dataset1.x();
        let d = transform.matrix();
        let gram = SymMatrix::new(x.tr_mul(x) / n1 + d.tr_mul(d) / nu)?;
        let factor = SpdFactor::new(&gram)?;
        let gram_inverse = factor.solve_mat(&DMatrix::identity(gram.dim(), gram.dim()));
        let xty = x.tr_mul(dataset1.y()) / n1;
        let beta_infinity = factor.solve_vec(&xty);
        let d_beta_infinity = transform.apply(&beta_infinity);
        let response_energy = dataset1.y().norm_squared() / (2.0 * n1);
        Ok(Self {
            gram,
            gram_inverse,
            xty,
            transform: transform.clone(),
            nu,
            beta_infinity,
            d_beta_infinity,
            response_energy,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn m(&self) -> usize {
        self.transform.m()
    }

    pub fn p(&self) -> usize {
        self.transform.p()
    }

    pub fn beta_infinity(&self) -> &DVector<f64> {
        &self.beta_infinity
    }

    pub fn d_beta_infinity(&self) -> &DVector<f64> {
        &self.d_beta_infinity
    }

    /// Smallest lambda at which the joint minimizer keeps gamma = 0: above it
    /// beta(lambda) stays at the gamma-free solution beta_infinity.
    pub fn lambda_max(&self) -> f64 {
        self.d_beta_infinity
            .iter()
            .map(|v| v.abs() / self.nu)
            .fold(0.0, f64::max)
    }

    pub fn initial_state(&self) -> PathState {
        PathState {
            beta: self.beta_infinity.clone(),
            gamma: DVector::zeros(self.m()),
            d_beta: self.d_beta_infinity.clone(),
        }
    }

    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    fn objective(&self, state: &PathState, lambda: f64) -> f64 {
        let quad = 0.5 * state.beta.dot(&(self.gram.as_matrix() * &state.beta))
            - 0.5 * state.d_beta.norm_squared() / self.nu;
        let gap = (&state.d_beta - &state.gamma).norm_squared() / (2.0 * self.nu);
        self.response_energy - state.beta.dot(&self.xty)
            + quad
            + gap
            + lambda * state.gamma.iter().map(|g| g.abs()).sum::<f64>()
    }

    /// Alternating minimization at one lambda, warm started from `state`.
    /// Returns (sweeps, converged-by-coordinate-change).
    fn solve_core(&self, lambda: f64, state: &mut PathState) -> (usize, bool) {
        let threshold = lambda * self.nu;
        let mut rhs = DVector::zeros(self.p());
        let mut beta_new = DVector::zeros(self.p());
        let mut iterations = 0;
        let mut swept = false;
        for sweep in 1..=MAX_SWEEPS {
            iterations = sweep;
            #[cfg(debug_assertions)]
            let obj_before = self.objective(state, lambda);

            // beta step: G beta = X1^T y1 / n1 + D^T gamma / nu
            self.transform.apply_transpose_into(&state.gamma, &mut rhs);
            rhs /= self.nu;
            rhs += &self.xty;
            beta_new.gemv(1.0, &self.gram_inverse, &rhs, 0.0);

            let mut change = 0.0f64;
            let mut beta_amax = 0.0f64;
            for i in 0..self.p() {
                change = change.max((beta_new[i] - state.beta[i]).abs());
                beta_amax = beta_amax.max(beta_new[i].abs());
                state.beta[i] = beta_new[i];
            }
            self.transform.apply_into(&state.beta, &mut state.d_beta);
            for i in 0..self.m() {
                let g = soft_threshold(state.d_beta[i], threshold);
                change = change.max((g - state.gamma[i]).abs());
                state.gamma[i] = g;
            }

            #[cfg(debug_assertions)]
            {
                let obj_after = self.objective(state, lambda);
                assert!(
                    obj_after <= obj_before + 1e-10 * (1.0 + obj_before.abs()),
                    "alternating sweep increased the objective at lambda = {lambda}"
                );
            }

            if change <= SWEEP_TOL * (1.0 + beta_amax) {
                swept = true;
                break;
            }
        }
        (iterations, swept)
    }

    /// Alternating minimization with the KKT certificate evaluated at the
    /// final iterate.
    pub fn solve_at(&self, lambda: f64, state: &mut PathState) -> PointDiagnostics {
        let (iterations, swept) = self.solve_core(lambda, state);
        let kkt_residual = self.kkt_residual(state, lambda);
        PointDiagnostics {
            iterations,
            converged: swept && kkt_residual <= KKT_TOL,
            kkt_residual,
        }
    }

    /// Scaled KKT residual: max of the beta stationarity residual (relative
    /// to 1 + ||X1^T y1 / n1||_inf) and the gamma subgradient violation.
    pub fn kkt_residual(&self, state: &PathState, lambda: f64) -> f64 {
        let stationarity = {
            let mut r = self.gram.as_matrix() * &state.beta - &self.xty;
            let correction = self.transform.apply_transpose(&state.gamma) / self.nu;
            r -= correction;
            r.abs().max() / (1.0 + self.xty.abs().max())
        };
        let mut subgrad = 0.0f64;
        let denom = lambda * self.nu;
        if denom > 0.0 {
            for (i, &g) in state.gamma.iter().enumerate() {
                let rho = (state.d_beta[i] - g) / denom;
                let violation = if g != 0.0 {
                    (rho - g.signum()).abs()
                } else {
                    (rho.abs() - 1.0).max(0.0)
                };
                subgrad = subgrad.max(violation);
            }
        }
        stationarity.max(subgrad)
    }

    /// Solves the whole grid with warm starts.
    pub fn solve_path(&self, grid: &LambdaGrid) -> BetaPath {
        let k = grid.len();
        let mut beta = DMatrix::zeros(self.p(), k);
        let mut d_beta = DMatrix::zeros(self.m(), k);
        let mut iters = Vec::with_capacity(k);
        let mut converged = Vec::with_capacity(k);
        let mut state = self.initial_state();
        for (col, &lambda) in grid.values().iter().enumerate() {
            let diag = self.solve_at(lambda, &mut state);
            beta.set_column(col, &state.beta);
            d_beta.set_column(col, &state.d_beta);
            iters.push(diag.iterations);
            converged.push(diag.converged);
        }
        BetaPath {
            grid: grid.clone(),
            beta,
            d_beta,
            iters,
            converged,
            d_beta_infinity: self.d_beta_infinity.clone(),
        }
    }
}

/// Convenience wrapper matching the one-shot contract.
pub fn lambda_max(dataset1: &Dataset, transform: &LinearTransform, nu: f64) -> Result<f64> {
    Ok(SplitLassoProblem::new(dataset1, transform, nu)?.lambda_max())
}

/// Convenience wrapper: build the default grid for a problem and solve it.
pub fn solve_beta_path(
    dataset1: &Dataset,
    transform: &LinearTransform,
    nu: f64,
    grid: &LambdaGrid,
) -> Result<BetaPath> {
    Ok(SplitLassoProblem::new(dataset1, transform, nu)?.solve_path(grid))
}

/// Solutions along the grid. Column k of `beta` and `d_beta` belong to
/// grid value k; `d_beta_infinity` is the gamma-free solution governing all
/// lambda at or above the top of the grid.
#[derive(Debug, Clone)]
pub struct BetaPath {
    grid: LambdaGrid,
    beta: DMatrix<f64>,
    d_beta: DMatrix<f64>,
    iters: Vec<usize>,
    converged: Vec<bool>,
    d_beta_infinity: DVector<f64>,
}

impl BetaPath {
    /// Test constructor from raw columns.
    pub fn from_columns(
        grid: LambdaGrid,
        d_beta: DMatrix<f64>,
        d_beta_infinity: DVector<f64>,
    ) -> Self {
        let k = grid.len();
        assert_eq!(d_beta.ncols(), k);
        Self {
            beta: DMatrix::zeros(0, k),
            iters: vec![0; k],
            converged: vec![true; k],
            grid,
            d_beta,
            d_beta_infinity,
        }
    }

    pub fn grid(&self) -> &LambdaGrid {
        &self.grid
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn d_beta(&self) -> &DMatrix<f64> {
        &self.d_beta
    }

    pub fn iters(&self) -> &[usize] {
        &self.iters
    }

    pub fn converged(&self) -> &[bool] {
        &self.converged
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn d_beta_infinity(&self) -> &DVector<f64> {
        &self.d_beta_infinity
    }

    pub fn m(&self) -> usize {
        self.d_beta_infinity.len()
    }
}

/// Supplies D beta(lambda) at off-grid lambda values during bracket
/// refinement.
pub trait PathOracle {
    fn d_beta_at(&mut self, lambda: f64) -> DVector<f64>;
}

/// Path oracle backed by the real solver, with warm starts taken from the
/// nearest previously solved lambda. Grid solutions seed the cache.
pub struct CachedPathSolver<'a> {
    problem: &'a SplitLassoProblem,
    cache: BTreeMap<u64, PathState>,
}

impl<'a> CachedPathSolver<'a> {
    pub fn new(problem: &'a SplitLassoProblem, path: &BetaPath) -> Self {
        let mut cache = BTreeMap::new();
        for (k, &lambda) in path.grid().values().iter().enumerate() {
            let beta = path.beta().column(k).into_owned();
            let d_beta = path.d_beta().column(k).into_owned();
            let gamma = DVector::from_fn(d_beta.len(), |i, _| {
                soft_threshold(d_beta[i], lambda * problem.nu())
            });
            cache.insert(lambda.to_bits(), PathState { beta, gamma, d_beta });
        }
        Self { problem, cache }
    }

    fn nearest_state(&self, lambda: f64) -> PathState {
        let key = lambda.to_bits();
        let below = self.cache.range(..=key).next_back();
        let above = self.cache.range(key..).next();
        match (below, above) {
            (Some((kb, sb)), Some((ka, sa))) => {
                let db = lambda - f64::from_bits(*kb);
                let da = f64::from_bits(*ka) - lambda;
                if db <= da {
                    sb.clone()
                } else {
                    sa.clone()
                }
            }
            (Some((_, s)), None) | (None, Some((_, s))) => s.clone(),
            (None, None) => self.problem.initial_state(),
        }
    }
}

impl PathOracle for CachedPathSolver<'_> {
    fn d_beta_at(&mut self, lambda: f64) -> DVector<f64> {
        if let Some(state) = self.cache.get(&lambda.to_bits()) {
            return state.d_beta.clone();
        }
        let mut state = self.nearest_state(lambda);
        self.problem.solve_core(lambda, &mut state);
        let d_beta = state.d_beta.clone();
        self.cache.insert(lambda.to_bits(), state);
        d_beta
    }
}

/// Oracle for synthetic paths whose D beta(lambda) is a fixed function.
pub struct FnPathOracle<F: FnMut(f64) -> DVector<f64>>(pub F);

impl<F: FnMut(f64) -> DVector<f64>> PathOracle for FnPathOracle<F> {
    fn d_beta_at(&mut self, lambda: f64) -> DVector<f64> {
        (self.0)(lambda)
    }
}

/// Significance levels of the original features and their knockoff copies,
/// with the recorded activation signs.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
    /// Sign of the coordinate when it first activates; 0 when never active.
    pub r: Vec<i8>,
}

impl FeatureStats {
    /// Both significance vectors and the activation signs in one pass over
    /// the path.
    pub fn compute(
        path: &BetaPath,
        nu: f64,
        zeta: &DVector<f64>,
        oracle: &mut dyn PathOracle,
        refine_steps: usize,
    ) -> Result<FeatureStats> {
        let (z, r) = compute_z_r(path, nu, oracle, refine_steps);
        let z_tilde = compute_z_tilde(path, nu, zeta, oracle, refine_steps)?;
        Ok(FeatureStats { z, z_tilde, r })
    }
}

// The activation test for coordinate i at lambda. The same arithmetic form
// (division by nu, then the shift) is used for both the original and the
// knockoff significance so that a zero shift reproduces Z exactly.
fn active(d_beta_i: f64, shift: f64, nu: f64, lambda: f64) -> bool {
    (d_beta_i / nu + shift).abs() > lambda
}

fn significance_one(
    path: &BetaPath,
    nu: f64,
    coord: usize,
    shift: f64,
    oracle: &mut dyn PathOracle,
    refine_steps: usize,
) -> (f64, i8) {
    let grid = path.grid().values();
    // Above-grid regime: beta is constant, so the activation boundary is
    // available in closed form.
    let top = (path.d_beta_infinity()[coord] / nu + shift).abs();
    if grid.is_empty() {
        let z = top;
        let sign = if z > 0.0 {
            sign_of(path.d_beta_infinity()[coord])
        } else {
            0
        };
        return (z, sign);
    }
    if top > grid[0] {
        return (top, sign_of(path.d_beta_infinity()[coord]));
    }
    let first_active = (0..grid.len())
        .find(|&k| active(path.d_beta()[(coord, k)], shift, nu, grid[k]));
    let Some(k) = first_active else {
        return (0.0, 0);
    };
    let sign = sign_of(path.d_beta()[(coord, k)]);
    if k == 0 {
        return (grid[0], sign);
    }
    let mut lo = grid[k]; // active
    let mut hi = grid[k - 1]; // inactive
    for _ in 0..refine_steps {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket at floating point resolution
        }
        let d_beta = oracle.d_beta_at(mid);
        if active(d_beta[coord], shift, nu, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), sign)
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Largest lambda at which each original coordinate is active, and the sign
/// it activates with.
pub fn compute_z_r(
    path: &BetaPath,
    nu: f64,
    oracle: &mut dyn PathOracle,
    refine_steps: usize,
) -> (Vec<f64>, Vec<i8>) {
    let m = path.m();
    let mut z = Vec::with_capacity(m);
    let mut r = Vec::with_capacity(m);
    for coord in 0..m {
        let (zi, ri) = significance_one(path, nu, coord, 0.0, oracle, refine_steps);
        z.push(zi);
        r.push(if zi > 0.0 { ri } else { 0 });
    }
    (z, r)
}

/// Largest lambda at which each knockoff coordinate is active. The shift
/// vector is zeta from the copy construction.
pub fn compute_z_tilde(
    path: &BetaPath,
    nu: f64,
    zeta: &DVector<f64>,
    oracle: &mut dyn PathOracle,
    refine_steps: usize,
) -> Result<Vec<f64>> {
    if zeta.len() != path.m() {
        return Err(Error::DimensionMismatch(format!(
            "zeta has {} entries, path has m = {}",
            zeta.len(),
            path.m()
        )));
    }
    let mut z = Vec::with_capacity(path.m());
    for coord in 0..path.m() {
        let (zi, _) = significance_one(path, nu, coord, zeta[coord], oracle, refine_steps);
        z.push(zi);
    }
    Ok(z)
}

/// Plain LASSO (1/(2n)) ||y - X beta||^2 + lambda ||beta||_1 by cyclic
/// coordinate descent, run to a KKT residual of 1e-8. Used by screening.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let mut beta = DVector::zeros(x.ncols());
    lasso_path_warm(x, y, lambda, &mut beta);
    beta
}

/// Same solver warm started from `beta`, for callers scanning a lambda grid.
/// Between full KKT-checked passes the descent cycles only over the current
/// active set, which is what makes wide sparse designs tractable.
pub fn lasso_path_warm(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, beta: &mut DVector<f64>) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let col_scale: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / n).collect();
    let mut residual = y - x * &*beta;
    let tol = 1e-8;

    let sweep = |indices: &[usize], beta: &mut DVector<f64>, residual: &mut DVector<f64>| {
        let mut change = 0.0f64;
        for &j in indices {
            if col_scale[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let partial = col.dot(residual) / n + col_scale[j] * beta[j];
            let updated = soft_threshold(partial, lambda) / col_scale[j];
            let delta = updated - beta[j];
            if delta != 0.0 {
                *residual -= delta * col;
                beta[j] = updated;
                change = change.max(delta.abs());
            }
        }
        change
    };

    let all: Vec<usize> = (0..p).collect();
    for _ in 0..1_000 {
        sweep(&all, beta, &mut residual);
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        for _ in 0..10_000 {
            if sweep(&active, beta, &mut residual) <= 1e-12 {
                break;
            }
        }
        // KKT: |x_j^T r / n| <= lambda everywhere, equality on the support.
        let mut worst = 0.0f64;
        for j in 0..p {
            let g = x.column(j).dot(&residual) / n;
            let v = if beta[j] != 0.0 {
                (g - lambda * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        if worst <= tol {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;
    use crate::numerics::{sample_ar1_design, Rng};

    fn random_dataset(rng: &mut Rng, n: usize, p: usize) -> Dataset {
        let x = sample_ar1_design(rng, n, p, 0.3).unwrap();
        let y = DVector::from_vec(rng.normal_vec(n));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = LambdaGrid::log_spaced(2.0, 5, 1e-2).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g.values()[0] - 2.0).abs() < 1e-15);
        assert!((g.values()[4] - 0.02).abs() < 1e-15);
        for w in g.values().windows(2) {
            assert!(w[0] > w[1]);
        }
        let ratios: Vec<f64> = g.values().windows(2).map(|w| w[1] / w[0]).collect();
        for w in ratios.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12, "log-uniform spacing");
        }
        assert!(LambdaGrid::log_spaced(0.0, 5, 1e-2).unwrap().is_empty());
    }

    #[test]
    fn lambda_max_zero_response() {
        let mut rng = Rng::new(3);
        let x = sample_ar1_design(&mut rng, 10, 3, 0.0).unwrap();
        let data = Dataset::new(x, DVector::zeros(10)).unwrap();
        let t = LinearTransform::identity(3);
        assert_eq!(lambda_max(&data, &t, 1.0).unwrap(), 0.0);
    }

    // Scalar algebra oracle: p = 1, D = [1], X^T X / n = 1, X^T y / n = c
    // gives beta_inf = c / (1 + 1/nu) and lambda_max = |c| / (nu + 1).
    #[test]
    fn lambda_max_scalar_oracle() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, -1.0, -1.0]);
        let c = 0.75;
        let y = &x * DVector::from_element(1, c);
        let data = Dataset::new(x, y).unwrap();
        let t = LinearTransform::identity(1);
        for &nu in &[0.5, 1.0, 4.0] {
            let lm = lambda_max(&data, &t, nu).unwrap();
            assert!((lm - c / (nu + 1.0)).abs() < 1e-12, "nu = {nu}");
        }
    }

    // Fixed-point oracle: just above lambda_max, (beta_inf, 0) is already the
    // solution, so one warm-started solve stays there with a tiny residual.
    #[test]
    fn above_lambda_max_is_fixed_point() {
        let mut rng = Rng::new(11);
        let data = random_dataset(&mut rng, 30, 4);
        let t = LinearTransform::line_difference(4).unwrap();
        let prob = SplitLassoProblem::new(&data, &t, 0.7).unwrap();
        let lambda = prob.lambda_max() * 1.01;
        let mut state = prob.initial_state();
        let diag = prob.solve_at(lambda, &mut state);
        assert!(diag.converged);
        assert!(state.gamma.norm() == 0.0);
        assert!((state.beta.clone() - prob.beta_infinity()).abs().max() <= 1e-10);
        assert!(prob.kkt_residual(&state, lambda) <= 1e-10);
    }

    #[test]
    fn path_hits_beta_infinity_at_top() {
        let mut rng = Rng::new(21);
        let data = random_dataset(&mut rng, 25, 5);
        let t = LinearTransform::identity(5);
        let prob = SplitLassoProblem::new(&data, &t, 1.0).unwrap();
        let grid = LambdaGrid::log_spaced(prob.lambda_max(), 30, 1e-3).unwrap();
        let path = prob.solve_path(&grid);
        // Direct linear-solve oracle at the top of the grid.
        let gap = (path.beta().column(0) - prob.beta_infinity()).abs().max();
        assert!(gap <= 1e-9, "gap {gap}");
        assert!(path.all_converged());
    }

    // Least-squares oracle: with D = I and n1 > p the path approaches the
    // ordinary least squares solution as lambda shrinks.
    #[test]
    fn small_lambda_approaches_least_squares() {
        let mut rng = Rng::new(33);
        let data = random_dataset(&mut rng, 60, 4);
        let t = LinearTransform::identity(4);
        let prob = SplitLassoProblem::new(&data, &t, 1.0).unwrap();
        let grid = LambdaGrid::log_spaced(prob.lambda_max(), 80, 1e-7).unwrap();
        let path = prob.solve_path(&grid);
        let n1 = data.n() as f64;
        let gram = SymMatrix::new(data.x().tr_mul(data.x()) / n1).unwrap();
        let lsq = crate::numerics::cholesky_solve(
            &gram,
            &DMatrix::from_column_slice(4, 1, (data.x().tr_mul(data.y()) / n1).as_slice()),
        )
        .unwrap();
        let last = path.beta().column(path.grid().len() - 1);
        let gap = (last - lsq.column(0)).abs().max();
        assert!(gap <= 1e-4, "gap to least squares {gap}");
    }

    #[test]
    fn kkt_certificate_along_path() {
        let mut rng = Rng::new(55);
        let data = random_dataset(&mut rng, 40, 6);
        let t = LinearTransform::line_difference(6).unwrap();
        let prob = SplitLassoProblem::new(&data, &t, 0.5).unwrap();
        let grid = LambdaGrid::log_spaced(prob.lambda_max(), 50, 1e-3).unwrap();
        let path = prob.solve_path(&grid);
        let mut state = prob.initial_state();
        for (k, &lambda) in grid.values().iter().enumerate() {
            prob.solve_at(lambda, &mut state);
            if path.converged()[k] {
                assert!(prob.kkt_residual(&state, lambda) <= KKT_TOL);
            }
        }
    }

    // Synthetic constant path: activation solves exactly, Z_i = |d_i| / nu.
    #[test]
    fn constant_path_closed_form() {
        let nu = 2.0;
        let d = DVector::from_vec(vec![3.0, -1.0, 0.0]);
        let grid = LambdaGrid::log_spaced(5.0, 400, 1e-4).unwrap();
        let cols = DMatrix::from_fn(3, grid.len(), |i, _| d[i]);
        let path = BetaPath::from_columns(grid, cols, d.clone());
        let mut oracle = FnPathOracle(|_| d.clone());
        let (z, r) = compute_z_r(&path, nu, &mut oracle, 40);
        assert!((z[0] - 3.0 / nu).abs() < 1e-9, "z0 = {}", z[0]);
        assert!((z[1] - 1.0 / nu).abs() < 1e-9);
        assert_eq!(z[2], 0.0);
        assert_eq!(r, vec![1, -1, 0]);

        let zeta = DVector::from_vec(vec![0.25, -0.3, 0.4]);
        let zt = compute_z_tilde(&path, nu, &zeta, &mut oracle, 40).unwrap();
        for i in 0..3 {
            let expect = (d[i] / nu + zeta[i]).abs();
            assert!((zt[i] - expect).abs() < 1e-9, "coordinate {i}");
        }
    }

    #[test]
    fn all_zero_path_never_active() {
        let grid = LambdaGrid::log_spaced(1.0, 50, 1e-3).unwrap();
        let cols = DMatrix::zeros(2, grid.len());
        let path = BetaPath::from_columns(grid, cols, DVector::zeros(2));
        let mut oracle = FnPathOracle(|_| DVector::zeros(2));
        let (z, r) = compute_z_r(&path, 1.0, &mut oracle, 10);
        assert_eq!(z, vec![0.0, 0.0]);
        assert_eq!(r, vec![0, 0]);
    }

    // Zero shift must reproduce Z bit for bit.
    #[test]
    fn zero_zeta_reproduces_z_exactly() {
        let mut rng = Rng::new(77);
        let data = random_dataset(&mut rng, 30, 5);
        let t = LinearTransform::line_difference(5).unwrap();
        let prob = SplitLassoProblem::new(&data, &t, 0.8).unwrap();
        let grid = LambdaGrid::log_spaced(prob.lambda_max(), 60, 1e-3).unwrap();
        let path = prob.solve_path(&grid);
        let mut oracle = CachedPathSolver::new(&prob, &path);
        let (z, _) = compute_z_r(&path, 0.8, &mut oracle, 20);
        let zt = compute_z_tilde(&path, 0.8, &DVector::zeros(4), &mut oracle, 20).unwrap();
        assert_eq!(z, zt);
    }

    #[test]
    fn z_tilde_above_lambda_max_uses_closed_form() {
        let mut rng = Rng::new(78);
        let data = random_dataset(&mut rng, 30, 3);
        let t = LinearTransform::identity(3);
        let nu = 1.0;
        let prob = SplitLassoProblem::new(&data, &t, nu).unwrap();
        let grid = LambdaGrid::log_spaced(prob.lambda_max(), 60, 1e-3).unwrap();
        let path = prob.solve_path(&grid);
        let mut oracle = CachedPathSolver::new(&prob, &path);
        // A shift large enough that the knockoff activates above lambda_max.
        let big = prob.lambda_max() * 10.0;
        let zeta = DVector::from_vec(vec![big, 0.0, 0.0]);
        let zt = compute_z_tilde(&path, nu, &zeta, &mut oracle, 20).unwrap();
        let expect = (path.d_beta_infinity()[0] / nu + big).abs();
        assert!((zt[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn path_rows_permutation_invariant() {
        let mut rng = Rng::new(90);
        let data = random_dataset(&mut rng, 24, 4);
        let t = LinearTransform::line_difference(4).unwrap();
        let nu = 1.5;
        let prob = SplitLassoProblem::new(&data, &t, nu).unwrap();
        let grid = LambdaGrid::log_spaced(prob.lambda_max(), 40, 1e-3).unwrap();
        let path = prob.solve_path(&grid);
        let mut oracle = CachedPathSolver::new(&prob, &path);
        let (z, _) = compute_z_r(&path, nu, &mut oracle, 25);

        let perm: Vec<usize> = (0..24).rev().collect();
        let data_p = data.restrict(&perm).unwrap();
        let prob_p = SplitLassoProblem::new(&data_p, &t, nu).unwrap();
        let grid_p = LambdaGrid::log_spaced(prob_p.lambda_max(), 40, 1e-3).unwrap();
        let path_p = prob_p.solve_path(&grid_p);
        let mut oracle_p = CachedPathSolver::new(&prob_p, &path_p);
        let (z_p, _) = compute_z_r(&path_p, nu, &mut oracle_p, 25);
        for i in 0..z.len() {
            assert!((z[i] - z_p[i]).abs() <= 1e-8 * (1.0 + z[i].abs()));
        }
    }

    #[test]
    fn grid_refinement_shrinks_consecutive_gaps() {
        let mut rng = Rng::new(101);
        for _ in 0..10 {
            let data = random_dataset(&mut rng, 30, 4);
            let t = LinearTransform::identity(4);
            let prob = SplitLassoProblem::new(&data, &t, 1.0).unwrap();
            let max_gap = |count: usize| {
                let grid = LambdaGrid::log_spaced(prob.lambda_max(), count, 1e-3).unwrap();
                let path = prob.solve_path(&grid);
                let mut gap = 0.0f64;
                for k in 1..grid.len() {
                    gap = gap.max((path.beta().column(k) - path.beta().column(k - 1)).norm());
                }
                gap
            };
            let coarse = max_gap(25);
            let fine = max_gap(50);
            let finest = max_gap(100);
            assert!(fine <= coarse + 1e-12);
            assert!(finest <= fine + 1e-12);
        }
    }

    #[test]
    fn lasso_full_shrinkage_and_orthonormal_oracle() {
        let mut rng = Rng::new(7);
        let x = sample_ar1_design(&mut rng, 40, 5, 0.0).unwrap();
        let y = DVector::from_vec(rng.normal_vec(40));
        let n = 40.0;
        let lam_max = (x.tr_mul(&y) / n).abs().max();
        let beta = lasso_path(&x, &y, lam_max * 1.0001);
        assert!(beta.norm() == 0.0);

        // Orthonormalize columns so the solution has a closed form.
        let q = orthonormalize(&x);
        let scaled = &q * n.sqrt();
        let corr = scaled.tr_mul(&y) / n;
        let lambda = 0.15;
        let beta = lasso_path(&scaled, &y, lambda);
        for j in 0..5 {
            let expect = soft_threshold(corr[j], lambda);
            assert!((beta[j] - expect).abs() < 1e-8, "column {j}");
        }
    }

    #[test]
    fn lasso_kkt_on_random_instance() {
        let mut rng = Rng::new(8);
        let x = sample_ar1_design(&mut rng, 50, 8, 0.4).unwrap();
        let y = DVector::from_vec(rng.normal_vec(50));
        let lambda = 0.1;
        let beta = lasso_path(&x, &y, lambda);
        let r = &y - &x * &beta;
        for j in 0..8 {
            let g = x.column(j).dot(&r) / 50.0;
            assert!(g.abs() <= lambda + 1e-8);
            if beta[j] != 0.0 {
                assert!((g - lambda * beta[j].signum()).abs() <= 1e-8);
            }
        }
    }

    fn orthonormalize(x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut q = x.clone();
        for j in 0..q.ncols() {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let prev = q.column(k).into_owned();
                let mut col = q.column_mut(j);
                col.axpy(-proj, &prev, 1.0);
            }
            let norm = q.column(j).norm();
            q.column_mut(j).scale_mut(1.0 / norm);
        }
        q
    }
}
