//! Command-line interface: simulate, weights, reduce, fit, predict,
//! evaluate, replicate.
//!
//! Exit codes: 0 on success, 2 on configuration/usage errors, 3 on
//! numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;

use crate::balancing::{self, kcb_weights_all, kcb_weights_auto, logistic_ipw};
use crate::data::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::io;
use crate::kernels::{median_heuristic, Bandwidth};
use crate::owl::{build_problem_from_values, fit_wsvm, predict_treatments, tune_lambda};
use crate::pipeline::{
    self, derive_seed, run_replications, MethodSpec, PipelineConfig,
};
use crate::pseudo::fit_g;
use crate::simgen::{generate, Setting};

#[derive(Parser, Debug)]
#[command(
    name = "itrkit",
    about = "Individualized treatment rules via kernel balancing, gradient subspace reduction, and weighted hinge-loss learning"
)]
pub struct Cli {
    /// Master seed for all randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Optional key=value configuration file; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for outputs whose paths are given as bare file names.
    #[arg(long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its oracle sidecar.
    Simulate(SimulateArgs),
    /// Estimate balancing weights and write them as CSV.
    Weights(WeightsArgs),
    /// Estimate the interaction subspace basis from a dataset and weights.
    Reduce(ReduceArgs),
    /// Fit a weighted hinge-loss decision rule.
    Fit(FitArgs),
    /// Apply a fitted rule to covariates.
    Predict(PredictArgs),
    /// Evaluate a fitted rule on a test set.
    Evaluate(EvaluateArgs),
    /// Monte Carlo replication harness over settings and methods.
    Replicate(ReplicateArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub setting: u32,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = false)]
    pub randomized: bool,
    /// Dataset CSV path; the oracle sidecar lands next to it with an
    /// `.oracle.json` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct WeightsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "kcb")]
    pub method: String,
    /// Fixed lambda2 for KCB; omitted = grid selection by held-out balance.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Kernel bandwidth; omitted = median heuristic.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReduceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Subspace dimension; with --cv this is the largest candidate.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Select (epsilon, dim) by cross-validated value instead of fixing them.
    #[arg(long, default_value_t = false)]
    pub cv: bool,
    #[arg(long = "out-basis")]
    pub out_basis: PathBuf,
    #[arg(long = "out-eigenvalues")]
    pub out_eigenvalues: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Basis CSV from `reduce`; omitted = identity (no reduction).
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Fixed penalty; omitted = two-fold cross-validated grid.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub rule: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub rule: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Oracle sidecar for the test set; enables accuracy and value-percent.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReplicateArgs {
    /// Comma-separated setting ids, e.g. 1,2,3.
    #[arg(long, default_value = "1")]
    pub settings: String,
    /// Comma-separated method tags, e.g. dol-o,aol-o.
    #[arg(long, default_value = "dol-l,aol-l")]
    pub methods: String,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long = "n-test", default_value_t = 10_000)]
    pub n_test: usize,
    #[arg(long, default_value_t = false)]
    pub randomized: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Run the parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_)
                | Error::InvalidParameter(_)
                | Error::Parse { .. }
                | Error::MissingValue { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_) => 2,
                _ => 3,
            }
        }
    }
}

fn resolve(out_dir: &Option<PathBuf>, path: &Path) -> PathBuf {
    match out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn apply_config_file(config: &mut PipelineConfig, path: &Path) -> Result<()> {
    for (key, value) in io::parse_config_file(path)? {
        match key.as_str() {
            "cv_folds" => {
                config.cv_folds = value
                    .parse()
                    .map_err(|e| Error::Config(format!("cv_folds: {e}")))?
            }
            "lambda2" => {
                config.lambda2 = Some(
                    value
                        .parse()
                        .map_err(|e| Error::Config(format!("lambda2: {e}")))?,
                )
            }
            "standardize_balance" => {
                config.standardize_balance = value
                    .parse()
                    .map_err(|e| Error::Config(format!("standardize_balance: {e}")))?
            }
            "standardize_reduce" => {
                config.standardize_reduce = value
                    .parse()
                    .map_err(|e| Error::Config(format!("standardize_reduce: {e}")))?
            }
            "reuse_nuisance" => {
                config.reuse_nuisance = value
                    .parse()
                    .map_err(|e| Error::Config(format!("reuse_nuisance: {e}")))?
            }
            "u_grid" => config.u_grid = parse_list(&value, "u_grid")?,
            "epsilon_grid" => config.epsilon_grid = parse_list(&value, "epsilon_grid")?,
            "lambda_grid" => config.lambda_grid = parse_list(&value, "lambda_grid")?,
            "solver_tol" => {
                config.solver_tol = value
                    .parse()
                    .map_err(|e| Error::Config(format!("solver_tol: {e}")))?
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|e| Error::Config(format!("{key}: {e}")))
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut config = PipelineConfig {
        seed: cli.seed,
        ..Default::default()
    };
    if let Some(path) = &cli.config {
        apply_config_file(&mut config, path)?;
    }
    match cli.command {
        Command::Simulate(args) => {
            let setting = Setting::from_id(args.setting)?;
            let (ds, oracle) = generate(setting, args.n, args.randomized, cli.seed)?;
            let out = resolve(&cli.out_dir, &args.out);
            save_dataset(&out, &ds)?;
            let sidecar = out.with_extension("oracle.json");
            io::save_oracle(&sidecar, &oracle)?;
            let (lo, hi) = oracle.propensity_range();
            eprintln!(
                "wrote {} ({} rows) and {} (propensity range [{lo:.4}, {hi:.4}])",
                out.display(),
                ds.n(),
                sidecar.display()
            );
            Ok(())
        }
        Command::Weights(args) => {
            let ds = load_dataset(&args.data)?;
            let weights = match args.method.as_str() {
                "kcb" => {
                    // balancing kernel view follows the pipeline default
                    let view = if config.standardize_balance {
                        let (mean, sd) = crate::kernels::column_moments(ds.x.view());
                        crate::data::Dataset {
                            x: crate::kernels::standardize(ds.x.view(), &mean, &sd),
                            a: ds.a.clone(),
                            y: ds.y.clone(),
                            seed: ds.seed,
                        }
                    } else {
                        ds.clone()
                    };
                    let bw = match args.sigma {
                        Some(s) => Bandwidth::new(s)?,
                        None => median_heuristic(view.x.view())?,
                    };
                    match args.lambda2 {
                        Some(l2) => kcb_weights_all(
                            &view,
                            balancing::default_lambda1(ds.n()),
                            l2,
                            bw,
                            1e-7,
                        )?,
                        None => {
                            kcb_weights_auto(&view, Some(bw), 1e-7, derive_seed(cli.seed, 1, 0))?
                        }
                    }
                }
                "ipw" => logistic_ipw(&ds, 100, 1e-8)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown weights method '{other}' (expected kcb or ipw)"
                    )))
                }
            };
            let out = resolve(&cli.out_dir, &args.out);
            io::save_weights(&out, &ds, &weights)?;
            eprintln!(
                "wrote {} (method {}, lambda2 {:.3e})",
                out.display(),
                weights.method,
                weights.lambda2
            );
            Ok(())
        }
        Command::Reduce(args) => {
            let ds = load_dataset(&args.data)?;
            let weights = io::load_weights(&args.weights, ds.n())?;
            let g = fit_g(&ds, &weights, 0.0)?;
            let g_values = g.evaluate_all(&ds.x);
            let basis = if args.cv {
                let mut cv_config = config.clone();
                cv_config.u_grid = (1..=args.dim.max(1)).collect();
                cv_config.epsilon_grid = vec![1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
                cv_config.weights_method = weights.method;
                let z = crate::pseudo::pseudo_outcomes_from_values(&ds, &weights, &g_values)?;
                let bw = match args.sigma {
                    Some(s) => Bandwidth::new(s)?,
                    None => median_heuristic(ds.x.view())?,
                };
                let lambda_grid = crate::owl::default_lambda_grid(ds.n());
                let fitter = |fold_basis: &crate::gkdr::SubspaceBasis,
                              train_idx: &[usize],
                              valid_idx: &[usize]|
                 -> Result<(f64, ())> {
                    let sub = ds.subset(train_idx);
                    let w_sub = crate::balancing::BalancingWeights {
                        w: Array1::from_iter(train_idx.iter().map(|&i| weights.w[i])),
                        ..weights.clone()
                    };
                    let gv = Array1::from_iter(train_idx.iter().map(|&i| g_values[i]));
                    let problem =
                        build_problem_from_values(&sub, &w_sub, &gv, fold_basis, None)?;
                    let mut best = f64::NEG_INFINITY;
                    for &lambda in &lambda_grid {
                        if let Ok(rule) = fit_wsvm(&problem, lambda, 1e-6) {
                            let dec = predict_treatments(
                                &rule,
                                ds.x.select(ndarray::Axis(0), valid_idx).view(),
                            )?;
                            let mut num = 0.0;
                            let mut den = 0.0;
                            for (pos, &i) in valid_idx.iter().enumerate() {
                                if ds.a[i] == dec[pos] {
                                    num += ds.y[i] * weights.w[i];
                                    den += weights.w[i];
                                }
                            }
                            if den > 0.0 {
                                best = best.max(num / den);
                            }
                        }
                    }
                    if best.is_finite() {
                        Ok((best, ()))
                    } else {
                        Err(Error::Numerical("no rule fit in this cell".into()))
                    }
                };
                let (basis, eps, u, _) = crate::gkdr::select_reduction(
                    &ds,
                    &z,
                    bw,
                    &cv_config.epsilon_grid,
                    &cv_config.u_grid,
                    cv_config.cv_folds,
                    derive_seed(cli.seed, 2, 0),
                    fitter,
                )?;
                eprintln!("selected epsilon {eps:.1e}, dimension {u}");
                basis
            } else {
                pipeline::estimate_basis_fixed(
                    &ds,
                    &weights,
                    &g_values,
                    args.epsilon,
                    args.dim,
                    args.sigma,
                    config.standardize_reduce,
                )?
            };
            let out_basis = resolve(&cli.out_dir, &args.out_basis);
            let out_eig = resolve(&cli.out_dir, &args.out_eigenvalues);
            io::save_matrix_csv(&out_basis, &basis.b)?;
            io::save_vector_csv(&out_eig, &basis.eigenvalues)?;
            eprintln!("wrote {} and {}", out_basis.display(), out_eig.display());
            Ok(())
        }
        Command::Fit(args) => {
            let ds = load_dataset(&args.data)?;
            let weights = io::load_weights(&args.weights, ds.n())?;
            let basis = match &args.basis {
                Some(path) => {
                    let b = io::load_matrix_csv(path)?;
                    crate::gkdr::SubspaceBasis {
                        eigenvalues: Array1::zeros(b.ncols()),
                        degenerate: false,
                        b,
                    }
                }
                None => crate::gkdr::SubspaceBasis::identity(ds.p()),
            };
            let g = fit_g(&ds, &weights, 0.0)?;
            let g_values = g.evaluate_all(&ds.x);
            let bw = args.sigma.map(Bandwidth::new).transpose()?;
            let problem = build_problem_from_values(&ds, &weights, &g_values, &basis, bw)?;
            let (rule, lambda) = match args.lambda {
                Some(l) => (fit_wsvm(&problem, l, 1e-7)?, l),
                None => tune_lambda(
                    &problem,
                    &crate::owl::default_lambda_grid(ds.n()),
                    config.cv_folds,
                    &ds,
                    &weights,
                    1e-6,
                    derive_seed(cli.seed, 3, 0),
                )?,
            };
            let out = resolve(&cli.out_dir, &args.out);
            io::save_rule(&out, &rule)?;
            eprintln!(
                "wrote {} (lambda {lambda:.3e}, kkt violation {:.2e})",
                out.display(),
                rule.kkt_violation
            );
            Ok(())
        }
        Command::Predict(args) => {
            let rule = io::load_rule(&args.rule)?;
            let ds = load_dataset(&args.data)?;
            let pred = predict_treatments(&rule, ds.x.view())?;
            let out = resolve(&cli.out_dir, &args.out);
            let mut writer = csv::Writer::from_path(&out)?;
            writer.write_record(["index", "treatment"])?;
            for (i, d) in pred.iter().enumerate() {
                writer.write_record(&[i.to_string(), format!("{}", *d as i64)])?;
            }
            writer.flush()?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let rule = io::load_rule(&args.rule)?;
            let test = load_dataset(&args.test)?;
            let oracle = args.oracle.as_ref().map(io::load_oracle).transpose()?;
            let reduced = rule.basis.u() < rule.basis.p();
            let report = pipeline::evaluate_rule(
                &rule,
                &rule.basis.clone(),
                &test,
                oracle.as_ref(),
                reduced,
            )?;
            let out = resolve(&cli.out_dir, &args.out);
            io::save_report(&out, &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Replicate(args) => {
            let settings: Vec<Setting> = args
                .settings
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u32>()
                        .map_err(|e| Error::Config(format!("settings: {e}")))
                        .and_then(Setting::from_id)
                })
                .collect::<Result<_>>()?;
            let methods: Vec<MethodSpec> = args
                .methods
                .split(',')
                .map(|m| MethodSpec::parse(m.trim()))
                .collect::<Result<_>>()?;
            let rows = run_replications(
                &config,
                args.reps,
                &settings,
                &methods,
                args.n,
                args.n_test,
                args.randomized,
                cli.seed,
            )?;
            let out = resolve(&cli.out_dir, &args.out);
            pipeline::save_replications(&out, &rows)?;
            for (setting, method, metric, mean, sd) in pipeline::summarize_replications(&rows) {
                println!("setting {setting} {method:8} {metric:10} mean {mean:8.4} sd {sd:7.4}");
            }
            let failures = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("wrote {} ({} rows, {failures} failed)", out.display(), rows.len());
            Ok(())
        }
    }
}
