//! W statistics, data-dependent thresholds, and the end-to-end selection
//! pipelines (with and without sample splitting).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::knockoff_copy::{
    build_augmented, compute_c_nu, compute_zeta, construct_copy, s_equicorrelated,
};
use crate::model::{
    split_first, split_samples, DataSplit, Dataset, LinearTransform, SMethod, SplitConfig,
    SplitMode,
};
use crate::numerics::Rng;
use crate::split_lasso::{CachedPathSolver, FeatureStats, LambdaGrid, SplitLassoProblem};

/// W_i = Z_i * sign(Z_i - Z~_i); ties within `tie_tol` give W_i = 0 and are
/// therefore never selected.
pub fn w_statistics(z: &[f64], z_tilde: &[f64], tie_tol: f64) -> Result<Vec<f64>> {
    if z.len() != z_tilde.len() {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} entries, Z~ has {}",
            z.len(),
            z_tilde.len()
        )));
    }
    Ok(z.iter()
        .zip(z_tilde)
        .map(|(&zi, &zt)| {
            if (zi - zt).abs() <= tie_tol {
                0.0
            } else if zi > zt {
                zi
            } else {
                -zi
            }
        })
        .collect())
}

/// The max-form statistic W'_i = max(Z_i, Z~_i) * sign(Z_i - Z~_i). Its
/// selections are always contained in those of `w_statistics`; it exists for
/// that inclusion check.
pub fn w_statistics_max(z: &[f64], z_tilde: &[f64], tie_tol: f64) -> Result<Vec<f64>> {
    if z.len() != z_tilde.len() {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} entries, Z~ has {}",
            z.len(),
            z_tilde.len()
        )));
    }
    Ok(z.iter()
        .zip(z_tilde)
        .map(|(&zi, &zt)| {
            if (zi - zt).abs() <= tie_tol {
                0.0
            } else if zi > zt {
                zi
            } else {
                -zt
            }
        })
        .collect())
}

/// Smallest candidate t (over the distinct positive |W_i|) at which
/// (#{W_i <= -t} + plus) / max(1, #{W_i >= t}) <= q, or +inf when no
/// candidate qualifies.
pub fn threshold(w: &[f64], q: f64, plus: bool) -> f64 {
    let mut candidates: Vec<f64> = w.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let offset = if plus { 1 } else { 0 };
    for &t in &candidates {
        let neg = w.iter().filter(|&&v| v <= -t).count();
        let pos = w.iter().filter(|&&v| v >= t).count();
        if (neg + offset) as f64 / pos.max(1) as f64 <= q {
            return t;
        }
    }
    f64::INFINITY
}

/// The selected index set {i : W_i >= t} with the recorded activation signs.
pub fn select(w: &[f64], t: f64, r: &[i8]) -> Result<(Vec<usize>, BTreeMap<usize, i8>)> {
    let mut selected = Vec::new();
    let mut signs = BTreeMap::new();
    if t.is_finite() {
        for (i, &wi) in w.iter().enumerate() {
            if wi >= t {
                if r[i] == 0 {
                    return Err(Error::InternalInvariantViolation(format!(
                        "selected coordinate {i} has no recorded sign"
                    )));
                }
                selected.push(i);
                signs.insert(i, r[i]);
            }
        }
    }
    Ok((selected, signs))
}

/// Everything the filter derives before thresholding. One of these supports
/// selections at any (q, plus) without re-solving paths.
#[derive(Debug, Clone)]
pub struct FilterStats {
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub r: Vec<i8>,
    pub lambda_max: f64,
    pub s: Vec<f64>,
    pub nu: f64,
    pub converged: Vec<bool>,
    pub split: DataSplit,
}

impl FilterStats {
    pub fn tie_tolerance(&self) -> f64 {
        1e-9 * self.lambda_max
    }

    pub fn w(&self) -> Vec<f64> {
        w_statistics(&self.z, &self.z_tilde, self.tie_tolerance())
            .expect("z and z_tilde were built with equal lengths")
    }

    pub fn select(&self, config: &SplitConfig) -> Result<SelectionResult> {
        let w = self.w();
        let t = threshold(&w, config.q, config.plus);
        let (selected, signs) = select(&w, t, &self.r)?;
        Ok(SelectionResult {
            w,
            z: self.z.clone(),
            z_tilde: self.z_tilde.clone(),
            r: self.r.clone(),
            threshold: t,
            selected,
            signs,
            config: config.clone(),
            diagnostics: Diagnostics {
                converged: self.converged.clone(),
                s: self.s.clone(),
                nu: self.nu,
                lambda_max: self.lambda_max,
                n1: self.split.idx1.len(),
                n2: self.split.idx2.len(),
            },
            tested: None,
        })
    }
}

/// Run diagnostics echoed with every selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub converged: Vec<bool>,
    pub s: Vec<f64>,
    pub nu: f64,
    pub lambda_max: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Output of one filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub r: Vec<i8>,
    /// +inf when nothing can be selected at level q.
    pub threshold: f64,
    /// 0-based coordinate indices, sorted ascending.
    pub selected: Vec<usize>,
    pub signs: BTreeMap<usize, i8>,
    pub config: SplitConfig,
    pub diagnostics: Diagnostics,
    /// When screening ran first, the original coordinates the filter actually
    /// tested: entry k maps position k of the statistic vectors.
    pub tested: Option<Vec<usize>>,
}

impl SelectionResult {
    pub fn m(&self) -> usize {
        self.w.len()
    }
}

fn make_split(n: usize, config: &SplitConfig) -> Result<DataSplit> {
    match config.split_mode {
        SplitMode::Random => split_samples(n, config.n1, &mut Rng::new(config.seed)),
        SplitMode::FirstN1 => split_first(n, config.n1),
    }
}

/// Computes the filter statistics for given data halves. `d1` drives the
/// regularization path; `d2` drives the copy and zeta. The two may alias
/// (the no-sample-split variant).
pub(crate) fn stats_for_halves(
    d1: &Dataset,
    d2: &Dataset,
    split: DataSplit,
    transform: &LinearTransform,
    config: &SplitConfig,
) -> Result<FilterStats> {
    let nu = config.nu;
    let problem = SplitLassoProblem::new(d1, transform, nu)?;
    let lambda_max = problem.lambda_max();
    let grid = LambdaGrid::log_spaced(lambda_max, config.lambda_count, config.lambda_min_ratio)?;
    let path = problem.solve_path(&grid);
    if !path.all_converged() && !config.allow_nonconverged {
        let count = path.converged().iter().filter(|&&c| !c).count();
        return Err(Error::NonConvergedPath {
            count,
            total: path.converged().len(),
        });
    }

    let aug = build_augmented(d2, transform, nu)?;
    let c_nu = compute_c_nu(&aug)?;
    let s = match config.s_method {
        SMethod::Equicorrelated => s_equicorrelated(&c_nu, nu)?,
    };
    let copy = construct_copy(&aug, &s)?;
    let zeta = compute_zeta(&copy, &aug)?;

    let mut oracle = CachedPathSolver::new(&problem, &path);
    let stats = FeatureStats::compute(&path, nu, &zeta, &mut oracle, config.refine_bisection_steps)?;

    Ok(FilterStats {
        z: stats.z,
        z_tilde: stats.z_tilde,
        r: stats.r,
        lambda_max,
        s: s.as_slice().to_vec(),
        nu,
        converged: path.converged().to_vec(),
        split,
    })
}

/// Statistics for the sample-splitting pipeline: random (or first-n1) split,
/// path on the first half, copy and zeta on the second.
pub fn split_knockoff_stats(
    dataset: &Dataset,
    transform: &LinearTransform,
    config: &SplitConfig,
) -> Result<FilterStats> {
    config.validate(dataset.n())?;
    let split = make_split(dataset.n(), config)?;
    let d1 = dataset.restrict(&split.idx1)?;
    let d2 = dataset.restrict(&split.idx2)?;
    stats_for_halves(&d1, &d2, split, transform, config)
}

/// Statistics for the variant without sample splitting: both stages see the
/// full dataset and all normalizations use n.
pub fn no_split_stats(
    dataset: &Dataset,
    transform: &LinearTransform,
    config: &SplitConfig,
) -> Result<FilterStats> {
    if !(config.q > 0.0 && config.q < 1.0) || !(config.nu > 0.0) {
        return Err(Error::InvalidParameter(
            "q must lie in (0,1) and nu must be positive".into(),
        ));
    }
    let n = dataset.n();
    let split = DataSplit {
        idx1: (0..n).collect(),
        idx2: (0..n).collect(),
    };
    stats_for_halves(dataset, dataset, split, transform, config)
}

/// Full pipeline: split, path, copy, statistics, threshold, selection.
pub fn run_split_knockoff(
    dataset: &Dataset,
    transform: &LinearTransform,
    config: &SplitConfig,
) -> Result<SelectionResult> {
    split_knockoff_stats(dataset, transform, config)?.select(config)
}

/// Full pipeline on the whole dataset without sample splitting.
pub fn run_no_split(
    dataset: &Dataset,
    transform: &LinearTransform,
    config: &SplitConfig,
) -> Result<SelectionResult> {
    no_split_stats(dataset, transform, config)?.select(config)
}
