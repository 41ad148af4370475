//! Ground-truth metrics, simulation instance generation, the replicate
//! experiment runner, and cross-validated selection of nu.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{no_split_stats, split_knockoff_stats, SelectionResult};
use crate::model::{Dataset, LinearTransform, SplitConfig, TransformKind};
use crate::numerics::{sample_ar1_design, Rng};
use crate::screening;
use crate::split_lasso::{LambdaGrid, SplitLassoProblem};

/// True coefficients behind a simulated instance.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta_star: DVector<f64>,
    pub gamma_star: DVector<f64>,
    pub sigma: f64,
}

/// Sparsity pattern of the simulated beta*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaPattern {
    /// amplitude at 1-based positions i <= 20 with i = 0 or -1 (mod 3),
    /// zero elsewhere; 13 nonzeros when p >= 20.
    Mod3 { amplitude: f64 },
}

impl BetaPattern {
    pub fn coefficients(&self, p: usize) -> DVector<f64> {
        match *self {
            BetaPattern::Mod3 { amplitude } => DVector::from_fn(p, |j, _| {
                let i = j + 1;
                if i <= 20 && (i % 3 == 0 || i % 3 == 2) {
                    amplitude
                } else {
                    0.0
                }
            }),
        }
    }
}

/// Which pipeline the experiment exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Split,
    NoSplit,
    HighDimensional,
}

/// How nu is chosen for each replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuSelection {
    /// Run the full grid and report per-nu metrics.
    Sweep,
    /// Pick nu per replicate by cross validation on the first half.
    CrossValidated { folds: usize },
}

/// A full simulation study description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub transform: TransformKind,
    pub pattern: BetaPattern,
    pub sigma: f64,
    pub q: f64,
    pub nus: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    pub mode: RunMode,
    pub n1: usize,
    pub nu_selection: NuSelection,
    pub lambda_count: usize,
    pub lambda_min_ratio: f64,
    pub refine_bisection_steps: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nus.is_empty() {
            return Err(Error::InvalidParameter("empty nu grid".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicate count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn build_transform(&self) -> Result<LinearTransform> {
        match self.transform {
            TransformKind::Identity => Ok(LinearTransform::identity(self.p)),
            TransformKind::LineDifference => LinearTransform::line_difference(self.p),
            TransformKind::Stacked => LinearTransform::stacked(self.p),
            _ => Err(Error::InvalidParameter(
                "experiments support identity, line, and stacked transforms".into(),
            )),
        }
    }

    fn config(&self, nu: f64, plus: bool, seed: u64) -> SplitConfig {
        let mut config = SplitConfig::new(nu, self.q, self.n1);
        config.plus = plus;
        config.seed = seed;
        config.lambda_count = self.lambda_count;
        config.lambda_min_ratio = self.lambda_min_ratio;
        config.refine_bisection_steps = self.refine_bisection_steps;
        config
    }
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

/// Fraction of selected coordinates whose estimated sign disagrees with
/// sign(gamma*), selections of true zeros included.
pub fn fdp_dir(selection: &SelectionResult, gamma_star: &DVector<f64>) -> f64 {
    let errors = selection
        .selected
        .iter()
        .filter(|&&i| selection.signs[&i] != sign_of(gamma_star[i]))
        .count();
    errors as f64 / selection.selected.len().max(1) as f64
}

/// Modified ratio with 1/q added to the denominator.
pub fn mfdp_dir(selection: &SelectionResult, gamma_star: &DVector<f64>, q: f64) -> f64 {
    let errors = selection
        .selected
        .iter()
        .filter(|&&i| selection.signs[&i] != sign_of(gamma_star[i]))
        .count();
    errors as f64 / (selection.selected.len() as f64 + 1.0 / q)
}

/// Fraction of true nonzeros recovered with the correct sign. When gamma*
/// has no nonzeros the recovery is vacuous and the power is 1 by convention.
pub fn power_dir(selection: &SelectionResult, gamma_star: &DVector<f64>) -> f64 {
    let nonnull = gamma_star.iter().filter(|&&g| g != 0.0).count();
    if nonnull == 0 {
        return 1.0;
    }
    let hits = selection
        .selected
        .iter()
        .filter(|&&i| selection.signs[&i] == sign_of(gamma_star[i]) && gamma_star[i] != 0.0)
        .count();
    hits as f64 / nonnull as f64
}

/// Simulated dataset for one replicate: AR(1) design, patterned beta*, and
/// Gaussian noise, all driven by the replicate seed.
pub fn generate_instance(
    spec: &ExperimentSpec,
    replicate_seed: u64,
) -> Result<(Dataset, GroundTruth, LinearTransform)> {
    let root = Rng::new(replicate_seed);
    let x = sample_ar1_design(&mut root.child(0), spec.n, spec.p, spec.rho)?;
    let beta_star = spec.pattern.coefficients(spec.p);
    let noise = DVector::from_vec(root.child(1).normal_vec(spec.n));
    let y = &x * &beta_star + noise * spec.sigma;
    let dataset = Dataset::new(x, y)?;
    let transform = spec.build_transform()?;
    let gamma_star = transform.apply(&beta_star);
    Ok((
        dataset,
        GroundTruth {
            beta_star,
            gamma_star,
            sigma: spec.sigma,
        },
        transform,
    ))
}

/// Thresholding variant of a report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Knockoff,
    KnockoffPlus,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Knockoff => "knockoff",
            Variant::KnockoffPlus => "knockoff+",
        }
    }

    pub fn plus(&self) -> bool {
        matches!(self, Variant::KnockoffPlus)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReplicateMetrics {
    pub fdp_dir: f64,
    pub mfdp_dir: f64,
    pub power: f64,
    pub n_selected: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub variant: Variant,
    pub nu: f64,
    pub replicate: usize,
    pub metrics: Option<ReplicateMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AggregateRecord {
    pub variant: Variant,
    pub nu: f64,
    pub used: usize,
    pub failed: usize,
    pub mean_fdp: f64,
    pub sd_fdp: f64,
    pub mean_power: f64,
    pub sd_power: f64,
    pub mean_mfdp: f64,
    pub sd_mfdp: f64,
    pub mean_selected: f64,
    /// 80% empirical interval of the per-replicate FDP, truncated to [0, 1].
    pub fdp_q10: f64,
    pub fdp_q90: f64,
    pub power_q10: f64,
    pub power_q90: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<ReplicateRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

fn metrics_for(selection: &SelectionResult, truth: &GroundTruth, q: f64) -> ReplicateMetrics {
    ReplicateMetrics {
        fdp_dir: fdp_dir(selection, &truth.gamma_star),
        mfdp_dir: mfdp_dir(selection, &truth.gamma_star, q),
        power: power_dir(selection, &truth.gamma_star),
        n_selected: selection.selected.len(),
        threshold: selection.threshold,
    }
}

fn failure_rows(nu: f64, replicate: usize, message: String) -> Vec<ReplicateRecord> {
    [Variant::Knockoff, Variant::KnockoffPlus]
        .map(|variant| ReplicateRecord {
            variant,
            nu,
            replicate,
            metrics: None,
            error: Some(message.clone()),
        })
        .to_vec()
}

/// Runs the stats once for the replicate and derives both threshold variants.
fn run_both_variants(
    spec: &ExperimentSpec,
    nu: f64,
    replicate: usize,
    dataset: &Dataset,
    truth: &GroundTruth,
    transform: &LinearTransform,
    cv: Option<(&[f64], usize)>,
) -> Vec<ReplicateRecord> {
    let seed = spec.base_seed.wrapping_add(replicate as u64);
    let config = spec.config(nu, false, seed);

    // The HD mode screens and may cross-validate internally; the plain modes
    // receive a pre-selected nu.
    if spec.mode == RunMode::HighDimensional {
        return match screening::hd_stats(dataset, transform, &config, None, cv) {
            Ok(run) => [Variant::Knockoff, Variant::KnockoffPlus]
                .into_iter()
                .map(|variant| {
                    let config = spec.config(run.nu, variant.plus(), seed);
                    match run.select(&config) {
                        Ok(sel) => ReplicateRecord {
                            variant,
                            nu: run.nu,
                            replicate,
                            metrics: Some(metrics_for(&sel, truth, spec.q)),
                            error: None,
                        },
                        Err(e) => ReplicateRecord {
                            variant,
                            nu: run.nu,
                            replicate,
                            metrics: None,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect(),
            Err(e) => failure_rows(nu, replicate, e.to_string()),
        };
    }

    let stats = match spec.mode {
        RunMode::Split => split_knockoff_stats(dataset, transform, &config),
        RunMode::NoSplit => no_split_stats(dataset, transform, &config),
        RunMode::HighDimensional => unreachable!(),
    };
    match stats {
        Ok(stats) => [Variant::Knockoff, Variant::KnockoffPlus]
            .into_iter()
            .map(|variant| {
                let config = spec.config(nu, variant.plus(), seed);
                match stats.select(&config) {
                    Ok(sel) => ReplicateRecord {
                        variant,
                        nu,
                        replicate,
                        metrics: Some(metrics_for(&sel, truth, spec.q)),
                        error: None,
                    },
                    Err(e) => ReplicateRecord {
                        variant,
                        nu,
                        replicate,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect(),
        Err(e) => failure_rows(nu, replicate, e.to_string()),
    }
}

fn replicate_records(spec: &ExperimentSpec, replicate: usize) -> Vec<ReplicateRecord> {
    let seed = spec.base_seed.wrapping_add(replicate as u64);
    let (dataset, truth, transform) = match generate_instance(spec, seed) {
        Ok(v) => v,
        Err(e) => {
            return spec
                .nus
                .iter()
                .flat_map(|&nu| failure_rows(nu, replicate, e.to_string()))
                .collect()
        }
    };
    match spec.nu_selection {
        NuSelection::Sweep => spec
            .nus
            .iter()
            .flat_map(|&nu| {
                run_both_variants(spec, nu, replicate, &dataset, &truth, &transform, None)
            })
            .collect(),
        NuSelection::CrossValidated { folds } => {
            if spec.mode == RunMode::HighDimensional {
                return run_both_variants(
                    spec,
                    spec.nus[0],
                    replicate,
                    &dataset,
                    &truth,
                    &transform,
                    Some((&spec.nus, folds)),
                );
            }
            let nu = match cv_nu_for_replicate(spec, folds, seed, &dataset, &transform) {
                Ok((nu, _)) => nu,
                Err(e) => return failure_rows(f64::NAN, replicate, e.to_string()),
            };
            run_both_variants(spec, nu, replicate, &dataset, &truth, &transform, None)
        }
    }
}

fn cv_nu_for_replicate(
    spec: &ExperimentSpec,
    folds: usize,
    seed: u64,
    dataset: &Dataset,
    transform: &LinearTransform,
) -> Result<(f64, Vec<CvEntry>)> {
    match spec.mode {
        RunMode::Split => {
            // Same split the pipeline will use: seed drives both.
            let config = spec.config(spec.nus[0], false, seed);
            let split = crate::model::split_samples(dataset.n(), spec.n1, &mut Rng::new(seed))?;
            let d1 = dataset.restrict(&split.idx1)?;
            cv_select_nu_with(
                &d1,
                transform,
                &spec.nus,
                folds,
                &mut Rng::new(seed).child(3),
                config.lambda_count,
                config.lambda_min_ratio,
            )
        }
        _ => cv_select_nu_with(
            dataset,
            transform,
            &spec.nus,
            folds,
            &mut Rng::new(seed).child(3),
            spec.lambda_count,
            spec.lambda_min_ratio,
        ),
    }
}

/// Runs the whole study. Replicate seeds are base_seed + replicate index, so
/// the report is a pure function of the spec no matter how work is scheduled.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut rows: Vec<ReplicateRecord> = (0..spec.replicates)
        .into_par_iter()
        .flat_map_iter(|replicate| replicate_records(spec, replicate))
        .collect();
    rows.sort_by(|a, b| {
        a.nu
            .total_cmp(&b.nu)
            .then(a.replicate.cmp(&b.replicate))
            .then((a.variant == Variant::KnockoffPlus).cmp(&(b.variant == Variant::KnockoffPlus)))
    });
    let aggregates = aggregate(spec, &rows);
    Ok(ExperimentReport {
        spec: spec.clone(),
        rows,
        aggregates,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    (sorted[lo] * (1.0 - frac) + sorted[hi] * frac).clamp(0.0, 1.0)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(spec: &ExperimentSpec, rows: &[ReplicateRecord]) -> Vec<AggregateRecord> {
    // In CV mode every replicate may land on a different nu; aggregate the
    // whole study as one group per variant, keyed by NaN-safe sentinel nu.
    let group_nus: Vec<f64> = match spec.nu_selection {
        NuSelection::Sweep => spec.nus.clone(),
        NuSelection::CrossValidated { .. } => vec![f64::NAN],
    };
    let mut out = Vec::new();
    for variant in [Variant::Knockoff, Variant::KnockoffPlus] {
        for &nu in &group_nus {
            let group: Vec<&ReplicateRecord> = rows
                .iter()
                .filter(|r| {
                    r.variant == variant
                        && (nu.is_nan() || (r.nu - nu).abs() <= f64::EPSILON * nu.abs().max(1.0))
                })
                .collect();
            if group.is_empty() {
                continue;
            }
            let failed = group.iter().filter(|r| r.metrics.is_none()).count();
            let mut fdp: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.as_ref().map(|m| m.fdp_dir))
                .collect();
            let mut power: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.as_ref().map(|m| m.power))
                .collect();
            let mfdp: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.as_ref().map(|m| m.mfdp_dir))
                .collect();
            let selected: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.as_ref().map(|m| m.n_selected as f64))
                .collect();
            let (mean_fdp, sd_fdp) = mean_sd(&fdp);
            let (mean_power, sd_power) = mean_sd(&power);
            let (mean_mfdp, sd_mfdp) = mean_sd(&mfdp);
            let (mean_selected, _) = mean_sd(&selected);
            fdp.sort_by(f64::total_cmp);
            power.sort_by(f64::total_cmp);
            out.push(AggregateRecord {
                variant,
                nu,
                used: fdp.len(),
                failed,
                mean_fdp,
                sd_fdp,
                mean_power,
                sd_power,
                mean_mfdp,
                sd_mfdp,
                mean_selected,
                fdp_q10: quantile(&fdp, 0.1),
                fdp_q90: quantile(&fdp, 0.9),
                power_q10: quantile(&power, 0.1),
                power_q90: quantile(&power, 0.9),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct CvEntry {
    pub nu: f64,
    pub mean_mse: f64,
}

/// Cross-validated nu: for each candidate, solve the path on every training
/// fold, score the best validation MSE over the grid, and average across
/// folds. Smallest nu wins ties.
pub fn cv_select_nu(
    dataset1: &Dataset,
    transform: &LinearTransform,
    nu_grid: &[f64],
    folds: usize,
    rng: &mut Rng,
) -> Result<(f64, Vec<CvEntry>)> {
    cv_select_nu_with(dataset1, transform, nu_grid, folds, rng, 200, 1e-3)
}

pub fn cv_select_nu_with(
    dataset1: &Dataset,
    transform: &LinearTransform,
    nu_grid: &[f64],
    folds: usize,
    rng: &mut Rng,
    lambda_count: usize,
    lambda_min_ratio: f64,
) -> Result<(f64, Vec<CvEntry>)> {
    if nu_grid.is_empty() {
        return Err(Error::InvalidParameter("empty nu grid".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidFolds(format!("need at least 2 folds, got {folds}")));
    }
    let n1 = dataset1.n();
    if n1 < folds {
        return Err(Error::InvalidFolds(format!(
            "cannot make {folds} folds out of {n1} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n1).collect();
    rng.shuffle(&mut order);
    let assignments: Vec<Vec<usize>> = (0..folds)
        .map(|f| {
            let mut rows: Vec<usize> = order.iter().skip(f).step_by(folds).copied().collect();
            rows.sort_unstable();
            rows
        })
        .collect();

    let mut sorted_nus: Vec<f64> = nu_grid.to_vec();
    sorted_nus.sort_by(f64::total_cmp);

    let mut table = Vec::with_capacity(sorted_nus.len());
    let mut best = (f64::INFINITY, sorted_nus[0]);
    for &nu in &sorted_nus {
        let mut fold_scores = Vec::with_capacity(folds);
        for val_rows in &assignments {
            let train_rows: Vec<usize> = (0..n1).filter(|i| !val_rows.contains(i)).collect();
            if train_rows.is_empty() || val_rows.is_empty() {
                return Err(Error::InvalidFolds("empty fold".into()));
            }
            let train = dataset1.restrict(&train_rows)?;
            let val = dataset1.restrict(val_rows)?;
            let problem = SplitLassoProblem::new(&train, transform, nu)?;
            let grid =
                LambdaGrid::log_spaced(problem.lambda_max(), lambda_count, lambda_min_ratio)?;
            let n_val = val.n() as f64;
            let score = if grid.is_empty() {
                let pred = val.x() * problem.beta_infinity();
                (val.y() - pred).norm_squared() / n_val
            } else {
                let path = problem.solve_path(&grid);
                let mut best_lambda = f64::INFINITY;
                for k in 0..grid.len() {
                    let beta = path.beta().column(k);
                    let pred = val.x() * beta;
                    let mse = (val.y() - pred).norm_squared() / n_val;
                    if mse < best_lambda {
                        best_lambda = mse;
                    }
                }
                best_lambda
            };
            fold_scores.push(score);
        }
        let mean = fold_scores.iter().sum::<f64>() / folds as f64;
        table.push(CvEntry { nu, mean_mse: mean });
        if mean < best.0 {
            best = (mean, nu);
        }
    }
    Ok((best.1, table))
}
