mod io;
mod jsonfmt;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::{json, Map, Value};

use splitknock::evaluation::{
    cv_select_nu, run_experiment, BetaPattern, ExperimentSpec, NuSelection, RunMode,
};
use splitknock::filter::{run_no_split, run_split_knockoff, SelectionResult};
use splitknock::knockoff_copy::{
    build_augmented, compute_c_nu, construct_copy, copy_residuals, s_equicorrelated,
};
use splitknock::model::{Dataset, LinearTransform, SplitConfig, TransformKind};
use splitknock::numerics::Rng;
use splitknock::screening::run_hd_pipeline;
use splitknock::Error as LibError;

const SCHEMA: &str = "splitknock/1";
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "splitknock",
    about = "Split knockoff selection with directional FDR control",
    version = concat!(env!("CARGO_PKG_VERSION"), " (schema splitknock/1)")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selection filter on CSV data and emit a JSON result.
    Filter(FilterArgs),
    /// Monte-Carlo simulation study over a nu grid; emits tidy + aggregate CSV.
    Simulate(SimulateArgs),
    /// Cross-validate nu on the first data half.
    CvNu(CvNuArgs),
    /// Construct a knockoff copy and print its six structural residuals.
    CopyCheck(CopyCheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransformArg {
    Identity,
    Line,
    Graph,
    Stacked,
}

#[derive(Args)]
struct TransformOpts {
    /// Dense CSV (m x p) or triplet CSV with header row,col,value (1-based).
    #[arg(long)]
    d: Option<PathBuf>,
    /// Built-in transform to construct instead of --d.
    #[arg(long, value_enum)]
    transform: Option<TransformArg>,
    /// Edge list CSV (tail,head; 1-based) for --transform graph.
    #[arg(long)]
    edges: Option<PathBuf>,
}

impl TransformOpts {
    fn build(&self, p: usize) -> Result<LinearTransform> {
        match (&self.d, self.transform) {
            (Some(path), None) => {
                let d = io::read_transform_matrix(path)?;
                if d.ncols() != p {
                    bail!(
                        "transform has {} columns but the design has p = {}",
                        d.ncols(),
                        p
                    );
                }
                Ok(LinearTransform::custom(d)?)
            }
            (None, Some(TransformArg::Identity)) => Ok(LinearTransform::identity(p)),
            (None, Some(TransformArg::Line)) => Ok(LinearTransform::line_difference(p)?),
            (None, Some(TransformArg::Stacked)) => Ok(LinearTransform::stacked(p)?),
            (None, Some(TransformArg::Graph)) => {
                let path = self
                    .edges
                    .as_ref()
                    .ok_or_else(|| anyhow!("--transform graph requires --edges FILE"))?;
                let edges = io::read_edges(path)?;
                Ok(LinearTransform::graph_difference(p, &edges)?)
            }
            _ => bail!("exactly one of --d or --transform is required"),
        }
    }
}

#[derive(Args)]
struct FilterArgs {
    /// Design matrix CSV (n x p).
    #[arg(long)]
    x: PathBuf,
    /// Response vector CSV (length n).
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    transform: TransformOpts,
    /// Variable-splitting strength.
    #[arg(long)]
    nu: f64,
    /// Nominal directional FDR level in (0, 1).
    #[arg(long)]
    q: f64,
    /// Knockoff+ thresholding.
    #[arg(long)]
    plus: bool,
    /// Rows in the first half (default: 2n/5).
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run both stages on the full dataset (no sample splitting).
    #[arg(long)]
    no_split: bool,
    /// High-dimensional mode: screen before filtering.
    #[arg(long)]
    hd: bool,
    /// LASSO strength for beta screening (required with --hd).
    #[arg(long)]
    lambda_beta: Option<f64>,
    /// Split LASSO strength for gamma screening (required with --hd).
    #[arg(long)]
    lambda_gamma: Option<f64>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario: d1 (identity), d2 (line difference), d3 (stacked).
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    q: f64,
    /// log10(nu) grid as LO:HI:STEP, e.g. 0:2:0.2.
    #[arg(long)]
    nu_grid: String,
    #[arg(long)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// split, no-split, or hd.
    #[arg(long, default_value = "split")]
    mode: String,
    /// Rows in the first half (default: 2n/5).
    #[arg(long)]
    n1: Option<usize>,
    /// Choose nu per replicate by cross validation instead of sweeping.
    #[arg(long)]
    cv_nu: bool,
    /// Folds for --cv-nu.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Tidy CSV output path; the aggregate CSV lands next to it as
    /// <stem>.agg.csv. Without this flag both blocks go to stdout.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct CvNuArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    transform: TransformOpts,
    /// log10(nu) grid as LO:HI:STEP.
    #[arg(long)]
    nu_grid: String,
    #[arg(long)]
    folds: usize,
    #[arg(long)]
    n1: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CopyCheckArgs {
    /// Design CSV: all rows are used as the second half.
    #[arg(long)]
    x: Option<PathBuf>,
    #[command(flatten)]
    transform: TransformOpts,
    /// Synthetic instance: P M N2 (seeded standard normal X and D).
    #[arg(long, num_args = 3, value_names = ["P", "M", "N2"])]
    random: Option<Vec<usize>>,
    #[arg(long)]
    nu: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Filter(args) => cmd_filter(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::CvNu(args) => cmd_cv_nu(&args),
        Command::CopyCheck(args) => cmd_copy_check(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Validation problems exit 2, numeric failures exit 3.
fn classify(err: &anyhow::Error) -> u8 {
    if let Some(lib) = err.downcast_ref::<LibError>() {
        match lib {
            LibError::NotPositiveDefinite(_)
            | LibError::NotPositiveSemidefinite { .. }
            | LibError::InsufficientDimension { .. }
            | LibError::InfeasibleS(_)
            | LibError::NonConvergedPath { .. }
            | LibError::InternalInvariantViolation(_) => EXIT_NUMERIC,
            _ => EXIT_VALIDATION,
        }
    } else {
        EXIT_VALIDATION
    }
}

fn default_n1(n: usize) -> usize {
    (2 * n / 5).max(1)
}

fn parse_nu_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("--nu-grid expects LO:HI:STEP in log10(nu), got {spec:?}");
    }
    let lo: f64 = parts[0].parse().context("bad LO in --nu-grid")?;
    let hi: f64 = parts[1].parse().context("bad HI in --nu-grid")?;
    let step: f64 = parts[2].parse().context("bad STEP in --nu-grid")?;
    if step <= 0.0 && hi != lo {
        bail!("--nu-grid step must be positive");
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let exp = lo + step * k as f64;
        if exp > hi + 1e-9 {
            break;
        }
        out.push(10f64.powf(exp));
        if hi == lo {
            break;
        }
        k += 1;
    }
    if out.is_empty() {
        bail!("--nu-grid {spec:?} produced no grid points");
    }
    Ok(out)
}

fn sign_value(v: i8) -> Value {
    json!(v as i64)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn result_json(
    result: &SelectionResult,
    command: &str,
    inputs: &[(&str, &Path)],
    config_echo: Value,
    wall_ms: u128,
) -> Result<Value> {
    let mut signs = Map::new();
    for (&i, &s) in &result.signs {
        signs.insert((i + 1).to_string(), sign_value(s));
    }
    let mut input_digests = Map::new();
    for (name, path) in inputs {
        input_digests.insert(name.to_string(), json!(io::file_digest(path)?));
    }
    let manifest = json!({
        "command": command,
        "version": splitknock::VERSION,
        "schema": SCHEMA,
        "seed": result.config.seed,
        "config": config_echo,
        "inputs": Value::Object(input_digests),
        "wall_clock_ms": wall_ms as u64,
    });
    let converged = result.diagnostics.converged.iter().filter(|&&c| c).count();
    Ok(json!({
        "schema": SCHEMA,
        "W": result.w,
        "Z": result.z,
        "Z_tilde": result.z_tilde,
        "r": result.r.iter().map(|&v| v as i64).collect::<Vec<_>>(),
        "T": finite_or_null(result.threshold),
        "selected": result.selected.iter().map(|&i| i + 1).collect::<Vec<_>>(),
        "signs": Value::Object(signs),
        "tested": result
            .tested
            .as_ref()
            .map(|t| json!(t.iter().map(|&i| i + 1).collect::<Vec<_>>()))
            .unwrap_or(Value::Null),
        "diagnostics": {
            "nu": result.diagnostics.nu,
            "s": result.diagnostics.s,
            "lambda_max": result.diagnostics.lambda_max,
            "n1": result.diagnostics.n1,
            "n2": result.diagnostics.n2,
            "converged_points": converged,
            "total_points": result.diagnostics.converged.len(),
        },
        "manifest": manifest,
    }))
}

fn summary_table(result: &SelectionResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "m = {}, T = {}, selected = {}\n",
        result.m(),
        if result.threshold.is_finite() {
            format!("{:.6}", result.threshold)
        } else {
            "inf".into()
        },
        result.selected.len()
    ));
    if !result.selected.is_empty() {
        out.push_str("index  sign  W\n");
        for &i in &result.selected {
            out.push_str(&format!(
                "{:>5}  {:>4}  {:.6}\n",
                i + 1,
                result.signs[&i],
                result.w[i.min(result.w.len() - 1)]
            ));
        }
    }
    out
}

fn cmd_filter(args: &FilterArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let x = io::read_matrix(&args.x)?;
    let y = io::read_vector(&args.y)?;
    let p = x.ncols();
    let n = x.nrows();
    let dataset = Dataset::new(x, y)?;
    let transform = args.transform.build(p)?;

    let n1 = args.n1.unwrap_or_else(|| default_n1(n));
    let mut config = SplitConfig::new(args.nu, args.q, n1);
    config.plus = args.plus;
    config.seed = args.seed;

    if args.hd && args.no_split {
        bail!("--hd and --no-split are mutually exclusive");
    }
    let result = if args.no_split {
        run_no_split(&dataset, &transform, &config)?
    } else if args.hd {
        let lb = args
            .lambda_beta
            .ok_or_else(|| anyhow!("--hd requires --lambda-beta"))?;
        let lg = args
            .lambda_gamma
            .ok_or_else(|| anyhow!("--hd requires --lambda-gamma"))?;
        run_hd_pipeline(&dataset, &transform, &config, lb, lg)?
    } else {
        run_split_knockoff(&dataset, &transform, &config)?
    };

    let mode = if args.no_split {
        "no-split"
    } else if args.hd {
        "hd"
    } else {
        "split"
    };
    let config_echo = json!({
        "nu": config.nu,
        "q": config.q,
        "plus": config.plus,
        "n1": config.n1,
        "mode": mode,
        "lambda_count": config.lambda_count,
        "lambda_min_ratio": config.lambda_min_ratio,
        "refine_bisection_steps": config.refine_bisection_steps,
        "lambda_beta": args.lambda_beta,
        "lambda_gamma": args.lambda_gamma,
    });
    let mut inputs: Vec<(&str, &Path)> = vec![("x", args.x.as_path()), ("y", args.y.as_path())];
    if let Some(d) = &args.transform.d {
        inputs.push(("d", d.as_path()));
    }
    if let Some(e) = &args.transform.edges {
        inputs.push(("edges", e.as_path()));
    }
    let value = result_json(&result, "filter", &inputs, config_echo, start.elapsed().as_millis())?;
    let text = jsonfmt::to_string(&value);
    match &args.out {
        Some(path) => {
            std::fs::write(path, text + "\n")
                .with_context(|| format!("cannot write {}", path.display()))?;
            print!("{}", summary_table(&result));
        }
        None => {
            println!("{text}");
            eprint!("{}", summary_table(&result));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn scenario_kind(name: &str) -> Result<TransformKind> {
    match name {
        "d1" => Ok(TransformKind::Identity),
        "d2" => Ok(TransformKind::LineDifference),
        "d3" => Ok(TransformKind::Stacked),
        other => bail!("unknown scenario {other:?} (expected d1, d2, or d3)"),
    }
}

fn mode_from(name: &str) -> Result<RunMode> {
    match name {
        "split" => Ok(RunMode::Split),
        "no-split" => Ok(RunMode::NoSplit),
        "hd" => Ok(RunMode::HighDimensional),
        other => bail!("unknown mode {other:?} (expected split, no-split, or hd)"),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("cannot configure worker pool")?;
    }
    let nus = parse_nu_grid(&args.nu_grid)?;
    let spec = ExperimentSpec {
        n: args.n,
        p: args.p,
        rho: args.rho,
        transform: scenario_kind(&args.scenario)?,
        pattern: BetaPattern::Mod3 { amplitude: 1.0 },
        sigma: args.sigma,
        q: args.q,
        nus,
        replicates: args.reps,
        base_seed: args.seed,
        mode: mode_from(&args.mode)?,
        n1: args.n1.unwrap_or_else(|| default_n1(args.n)),
        nu_selection: if args.cv_nu {
            NuSelection::CrossValidated { folds: args.folds }
        } else {
            NuSelection::Sweep
        },
        lambda_count: 200,
        lambda_min_ratio: 1e-3,
        refine_bisection_steps: 30,
    };
    let start = Instant::now();
    let report = run_experiment(&spec)?;

    let mut tidy = String::from(
        "scenario,mode,variant,log10_nu,replicate,fdp_dir,mfdp,power,n_selected,threshold\n",
    );
    for row in &report.rows {
        let Some(m) = &row.metrics else {
            continue;
        };
        tidy.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            args.scenario,
            args.mode,
            row.variant.label(),
            io::fmt_float(row.nu.log10()),
            row.replicate,
            io::fmt_float(m.fdp_dir),
            io::fmt_float(m.mfdp_dir),
            io::fmt_float(m.power),
            m.n_selected,
            io::fmt_float(m.threshold),
        ));
    }
    let mut agg = String::from(
        "scenario,mode,variant,log10_nu,used,failed,mean_fdp,sd_fdp,mean_power,sd_power,mean_mfdp,sd_mfdp,mean_selected,fdp_q10,fdp_q90,power_q10,power_q90\n",
    );
    for a in &report.aggregates {
        agg.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            args.scenario,
            args.mode,
            a.variant.label(),
            if a.nu.is_nan() {
                "cv".into()
            } else {
                io::fmt_float(a.nu.log10())
            },
            a.used,
            a.failed,
            io::fmt_float(a.mean_fdp),
            io::fmt_float(a.sd_fdp),
            io::fmt_float(a.mean_power),
            io::fmt_float(a.sd_power),
            io::fmt_float(a.mean_mfdp),
            io::fmt_float(a.sd_mfdp),
            io::fmt_float(a.mean_selected),
            io::fmt_float(a.fdp_q10),
            io::fmt_float(a.fdp_q90),
            io::fmt_float(a.power_q10),
            io::fmt_float(a.power_q90),
        ));
    }

    let manifest = json!({
        "command": "simulate",
        "version": splitknock::VERSION,
        "schema": SCHEMA,
        "scenario": args.scenario,
        "mode": args.mode,
        "q": args.q,
        "nu_grid": args.nu_grid,
        "reps": args.reps,
        "seed": args.seed,
        "cv_nu": args.cv_nu,
        "n": args.n,
        "p": args.p,
        "rho": args.rho,
        "sigma": args.sigma,
        "n1": spec.n1,
        "wall_clock_ms": start.elapsed().as_millis() as u64,
    });
    eprintln!("{}", jsonfmt::to_string(&manifest));

    match &args.out_csv {
        Some(path) => {
            std::fs::write(path, &tidy)
                .with_context(|| format!("cannot write {}", path.display()))?;
            let agg_path = agg_path_for(path);
            std::fs::write(&agg_path, &agg)
                .with_context(|| format!("cannot write {}", agg_path.display()))?;
            eprintln!(
                "wrote {} data rows to {: } and aggregates to {}",
                report.rows.len(),
                path.display(),
                agg_path.display()
            );
        }
        None => {
            print!("{tidy}");
            println!();
            print!("{agg}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn agg_path_for(tidy: &Path) -> PathBuf {
    let stem = tidy.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    tidy.with_file_name(format!("{stem}.agg.csv"))
}


fn cmd_cv_nu(args: &CvNuArgs) -> Result<ExitCode> {
    let x = io::read_matrix(&args.x)?;
    let y = io::read_vector(&args.y)?;
    let p = x.ncols();
    let n = x.nrows();
    let dataset = Dataset::new(x, y)?;
    let transform = args.transform.build(p)?;
    let nus = parse_nu_grid(&args.nu_grid)?;

    let split = splitknock::model::split_samples(n, args.n1, &mut Rng::new(args.seed))?;
    let d1 = dataset.restrict(&split.idx1)?;
    let (nu_star, table) = cv_select_nu(
        &d1,
        &transform,
        &nus,
        args.folds,
        &mut Rng::new(args.seed).child(3),
    )?;
    println!("nu_star,{}", io::fmt_float(nu_star));
    println!("nu,log10_nu,mean_mse");
    for entry in table {
        println!(
            "{},{},{}",
            io::fmt_float(entry.nu),
            io::fmt_float(entry.nu.log10()),
            io::fmt_float(entry.mean_mse)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_copy_check(args: &CopyCheckArgs) -> Result<ExitCode> {
    let (x2, transform) = match (&args.x, &args.random) {
        (Some(path), None) => {
            let x = io::read_matrix(path)?;
            let t = args.transform.build(x.ncols())?;
            (x, t)
        }
        (None, Some(dims)) => {
            let (p, m, n2) = (dims[0], dims[1], dims[2]);
            let mut rng = Rng::new(args.seed);
            let x = nalgebra::DMatrix::from_fn(n2, p, |_, _| rng.normal());
            let d = nalgebra::DMatrix::from_fn(m, p, |_, _| rng.normal());
            (x, LinearTransform::custom(d)?)
        }
        _ => bail!("provide either --x with a transform, or --random P M N2"),
    };
    let n2 = x2.nrows();
    let dataset = Dataset::new(x2, DVector::zeros(n2))?;
    let aug = build_augmented(&dataset, &transform, args.nu)?;
    let c_nu = compute_c_nu(&aug)?;
    let s = s_equicorrelated(&c_nu, args.nu)?;
    let copy = construct_copy(&aug, &s)?;
    let res = copy_residuals(&aug, &copy);

    println!("check,residual");
    println!("gram_copy,{}", io::fmt_float(res.gram_copy));
    println!("gram_cross_beta,{}", io::fmt_float(res.gram_cross_beta));
    println!("gram_cross_gamma,{}", io::fmt_float(res.gram_cross_gamma));
    println!("bottom_block,{}", io::fmt_float(res.bottom_block));
    println!("converts_x2,{}", io::fmt_float(res.converts_x2));
    println!("top_orthogonality,{}", io::fmt_float(res.top_orthogonality));
    let max = res.max();
    println!("max,{}", io::fmt_float(max));
    if max <= 1e-8 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: copy residual {max:.3e} exceeds 1e-8");
        Ok(ExitCode::from(EXIT_NUMERIC))
    }
}
