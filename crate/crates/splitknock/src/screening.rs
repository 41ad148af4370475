//! High-dimensional pre-selection. When n2 < m + p the copy construction is
//! infeasible, so a LASSO screen on the first half keeps a subset of beta
//! features, a Split LASSO screen keeps a subset of gamma features, and the
//! filter runs on the restricted problem. Screening consumes only the first
//! half, so the downstream guarantee survives on the sure-screening event.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::evaluation::cv_select_nu_with;
use crate::filter::{stats_for_halves, Diagnostics, FilterStats, SelectionResult};
use crate::model::{
    split_first, split_samples, DataSplit, Dataset, LinearTransform, SplitConfig, SplitMode,
};
use crate::numerics::Rng;
use crate::split_lasso::{lasso_path, lasso_path_warm, LambdaGrid, SplitLassoProblem};

use nalgebra::DVector;

const SUPPORT_TOL: f64 = 1e-10;

/// Outcome of the two screening stages (0-based index sets).
#[derive(Debug, Clone)]
pub struct ScreenResult {
    pub s_beta: Vec<usize>,
    pub s_gamma: Vec<usize>,
    pub lambda_beta: f64,
    pub lambda_gamma: f64,
}

/// Support of the LASSO solution on the first half at lambda_beta.
pub fn screen_beta(dataset1: &Dataset, lambda_beta: f64) -> Vec<usize> {
    let beta = lasso_path(dataset1.x(), dataset1.y(), lambda_beta);
    beta.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > SUPPORT_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// Support of gamma from one Split LASSO solve at lambda_gamma, on data and
/// transform already restricted to the beta survivors.
pub fn screen_gamma(
    dataset1_restricted: &Dataset,
    transform_restricted: &LinearTransform,
    nu: f64,
    lambda_gamma: f64,
) -> Result<Vec<usize>> {
    let problem = SplitLassoProblem::new(dataset1_restricted, transform_restricted, nu)?;
    let mut state = problem.initial_state();
    problem.solve_at(lambda_gamma, &mut state);
    Ok(state
        .gamma
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > SUPPORT_TOL)
        .map(|(i, _)| i)
        .collect())
}

/// lambda_beta by 5-fold CV over a 50-point log grid, then a one-standard-
/// error step toward the SMALLER side: under-screening beta features is the
/// safe direction for the downstream guarantee. The stretch never grows the
/// support past `support_cap`: past that the n2 budget has no room left for
/// the gamma screen and the copies degenerate.
pub fn default_lambda_beta(
    dataset1: &Dataset,
    rng: &mut Rng,
    support_cap: usize,
) -> Result<f64> {
    let folds = 5;
    let n1 = dataset1.n();
    if n1 < folds {
        return Err(Error::InvalidFolds(format!(
            "cannot make {folds} folds out of {n1} rows"
        )));
    }
    let lam_max = (dataset1.x().tr_mul(dataset1.y()) / n1 as f64)
        .abs()
        .max();
    if lam_max == 0.0 {
        return Ok(0.0);
    }
    // Floor at lambda_max / 100: below that the fit is interpolating in wide
    // designs and useless for screening.
    let grid = LambdaGrid::log_spaced(lam_max, 50, 1e-2)?;
    let mut order: Vec<usize> = (0..n1).collect();
    rng.shuffle(&mut order);
    let mut scores = vec![Vec::with_capacity(folds); grid.len()];
    for f in 0..folds {
        let mut val_rows: Vec<usize> = order.iter().skip(f).step_by(folds).copied().collect();
        val_rows.sort_unstable();
        let train_rows: Vec<usize> = (0..n1).filter(|i| !val_rows.contains(i)).collect();
        let train = dataset1.restrict(&train_rows)?;
        let val = dataset1.restrict(&val_rows)?;
        let mut beta = DVector::zeros(train.p());
        for (k, &lambda) in grid.values().iter().enumerate() {
            lasso_path_warm(train.x(), train.y(), lambda, &mut beta);
            let mse = (val.y() - val.x() * &beta).norm_squared() / val.n() as f64;
            scores[k].push(mse);
        }
    }
    let stats: Vec<(f64, f64)> = scores
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (s.len() as f64 - 1.0);
            (mean, (var / s.len() as f64).sqrt())
        })
        .collect();
    let best = stats
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(k, _)| k)
        .unwrap();
    let cutoff = stats[best].0 + stats[best].1;

    let support_at = {
        let mut beta = DVector::zeros(dataset1.p());
        let mut sizes = Vec::with_capacity(grid.len());
        for &lambda in grid.values() {
            lasso_path_warm(dataset1.x(), dataset1.y(), lambda, &mut beta);
            sizes.push(beta.iter().filter(|v| v.abs() > SUPPORT_TOL).count());
        }
        sizes
    };

    // Take the smallest lambda in the contiguous one-SE region whose support
    // still fits the cap; if even the CV optimum is over, back up the grid.
    let mut chosen = best;
    for k in (best + 1)..grid.len() {
        if stats[k].0 > cutoff {
            break;
        }
        if support_at[k] <= support_cap {
            chosen = k;
        }
    }
    while support_at[chosen] > support_cap && chosen > 0 {
        chosen -= 1;
    }
    Ok(grid.values()[chosen])
}

/// Smallest grid value of lambda_gamma whose gamma support keeps
/// |S_beta| + |S_gamma| within the n2 budget.
pub fn default_lambda_gamma(
    dataset1_restricted: &Dataset,
    transform_restricted: &LinearTransform,
    nu: f64,
    kept_beta: usize,
    n2: usize,
) -> Result<f64> {
    let problem = SplitLassoProblem::new(dataset1_restricted, transform_restricted, nu)?;
    let lam_max = problem.lambda_max();
    if lam_max == 0.0 {
        return Ok(0.0);
    }
    let grid = LambdaGrid::log_spaced(lam_max, 50, 1e-3)?;
    let mut state = problem.initial_state();
    let mut best = lam_max;
    for &lambda in grid.values() {
        problem.solve_at(lambda, &mut state);
        let support = state.gamma.iter().filter(|v| v.abs() > SUPPORT_TOL).count();
        if kept_beta + support <= n2 {
            best = lambda;
        }
    }
    Ok(best)
}

fn make_split(n: usize, config: &SplitConfig) -> Result<DataSplit> {
    match config.split_mode {
        SplitMode::Random => split_samples(n, config.n1, &mut Rng::new(config.seed)),
        SplitMode::FirstN1 => split_first(n, config.n1),
    }
}

fn empty_selection(
    config: &SplitConfig,
    split: &DataSplit,
    tested: Vec<usize>,
) -> SelectionResult {
    SelectionResult {
        w: vec![],
        z: vec![],
        z_tilde: vec![],
        r: vec![],
        threshold: f64::INFINITY,
        selected: vec![],
        signs: BTreeMap::new(),
        config: config.clone(),
        diagnostics: Diagnostics {
            converged: vec![],
            s: vec![],
            nu: config.nu,
            lambda_max: 0.0,
            n1: split.idx1.len(),
            n2: split.idx2.len(),
        },
        tested: Some(tested),
    }
}

/// One screened run: restricted filter statistics plus the coordinate maps
/// needed to report selections in the original space.
pub struct HdRun {
    pub stats: FilterStats,
    pub screen: ScreenResult,
    /// nu actually used (differs from the config when CV ran).
    pub nu: f64,
    /// Empty-screen runs carry no statistics.
    pub split: DataSplit,
}

impl HdRun {
    /// Selection in original coordinates at the given (q, plus).
    pub fn select(&self, config: &SplitConfig) -> Result<SelectionResult> {
        let mut config = config.clone();
        config.nu = self.nu;
        if self.screen.s_gamma.is_empty() {
            return Ok(empty_selection(&config, &self.split, vec![]));
        }
        let restricted = self.stats.select(&config)?;
        let s_gamma = &self.screen.s_gamma;
        let selected: Vec<usize> = restricted.selected.iter().map(|&k| s_gamma[k]).collect();
        let signs: BTreeMap<usize, i8> = restricted
            .signs
            .iter()
            .map(|(&k, &v)| (s_gamma[k], v))
            .collect();
        Ok(SelectionResult {
            selected,
            signs,
            tested: Some(s_gamma.clone()),
            ..restricted
        })
    }
}

fn placeholder_stats(split: &DataSplit) -> FilterStats {
    FilterStats {
        z: vec![],
        z_tilde: vec![],
        r: vec![],
        lambda_max: 0.0,
        s: vec![],
        nu: 1.0,
        converged: vec![],
        split: split.clone(),
    }
}

/// Screens on the first half (given strengths, or the defaults when None),
/// optionally cross-validates nu on the screened first half, and computes
/// the restricted filter statistics once.
pub fn hd_stats(
    dataset: &Dataset,
    transform: &LinearTransform,
    config: &SplitConfig,
    strengths: Option<(f64, f64)>,
    cv: Option<(&[f64], usize)>,
) -> Result<HdRun> {
    config.validate(dataset.n())?;
    let split = make_split(dataset.n(), config)?;
    let d1 = dataset.restrict(&split.idx1)?;
    let d2 = dataset.restrict(&split.idx2)?;
    let n2 = split.idx2.len();

    let lambda_beta = match strengths {
        Some((lb, _)) => lb,
        // Cap the beta survivors at a quarter of the second half: the copy
        // needs n2 >= |S_beta| + |S_gamma| with room to spare, or s collapses
        // and the knockoffs lose all power.
        None => default_lambda_beta(&d1, &mut Rng::new(config.seed).child(7), n2 / 4)?,
    };
    let s_beta = screen_beta(&d1, lambda_beta);
    if s_beta.is_empty() {
        return Ok(HdRun {
            stats: placeholder_stats(&split),
            screen: ScreenResult {
                s_beta,
                s_gamma: vec![],
                lambda_beta,
                lambda_gamma: 0.0,
            },
            nu: config.nu,
            split,
        });
    }
    let d1_cols = d1.restrict_columns(&s_beta)?;
    let all_rows: Vec<usize> = (0..transform.m()).collect();
    let t_cols = transform.restricted(&all_rows, &s_beta)?;

    let nu = match cv {
        Some((grid, folds)) => {
            cv_select_nu_with(
                &d1_cols,
                &t_cols,
                grid,
                folds,
                &mut Rng::new(config.seed).child(3),
                config.lambda_count,
                config.lambda_min_ratio,
            )?
            .0
        }
        None => config.nu,
    };
    let mut config = config.clone();
    config.nu = nu;

    let lambda_gamma = match strengths {
        Some((_, lg)) => lg,
        None => default_lambda_gamma(&d1_cols, &t_cols, nu, s_beta.len(), n2)?,
    };
    let s_gamma = screen_gamma(&d1_cols, &t_cols, nu, lambda_gamma)?;
    let screen = ScreenResult {
        s_beta,
        s_gamma,
        lambda_beta,
        lambda_gamma,
    };
    if screen.s_gamma.is_empty() {
        return Ok(HdRun {
            stats: placeholder_stats(&split),
            screen,
            nu,
            split,
        });
    }
    if screen.s_beta.len() + screen.s_gamma.len() > n2 {
        return Err(Error::ScreeningTooLoose {
            kept_beta: screen.s_beta.len(),
            kept_gamma: screen.s_gamma.len(),
            n2,
        });
    }

    let t_restricted = transform.restricted(&screen.s_gamma, &screen.s_beta)?;
    let d2_cols = d2.restrict_columns(&screen.s_beta)?;
    let stats = stats_for_halves(&d1_cols, &d2_cols, split.clone(), &t_restricted, &config)?;
    Ok(HdRun {
        stats,
        screen,
        nu,
        split,
    })
}

/// Full high-dimensional pipeline at explicit screening strengths. The split
/// is the same one the filter uses; screening reads only the first half.
pub fn run_hd_pipeline(
    dataset: &Dataset,
    transform: &LinearTransform,
    config: &SplitConfig,
    lambda_beta: f64,
    lambda_gamma: f64,
) -> Result<SelectionResult> {
    hd_stats(dataset, transform, config, Some((lambda_beta, lambda_gamma)), None)?.select(config)
}

/// High-dimensional pipeline with the default screening strengths:
/// cross-validated lambda_beta and the budget rule for lambda_gamma.
pub fn run_hd_auto(
    dataset: &Dataset,
    transform: &LinearTransform,
    config: &SplitConfig,
) -> Result<SelectionResult> {
    hd_stats(dataset, transform, config, None, None)?.select(config)
}
