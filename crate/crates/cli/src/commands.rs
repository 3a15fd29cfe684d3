use std::path::Path;

use serde::Serialize;

use robust_choice::diagnostics::{
    fisher_trace_mle, prediction_error_bound, robust_feature_trace_report, robust_label_trace_report, TraceReport,
};
use robust_choice::experiments::{
    evaluate_revenue, generate_synthetic_test, grid_search_tune, pricing_optimization, run_replications, PricingSetup,
    SyntheticProblem, ORACLE,
};
use robust_choice::io::{
    coefficient_table, pricing_csv, read_beta, read_dataset, replication_rows_csv, replication_summary_csv, to_json,
    tune_csv, write_dataset, write_json, write_text, BetaFile, FitReport, ModelSection, RunConfig,
};
use robust_choice::robust_feature::{exact_robust_objective, jensen_gap_bound, rf_objective, rf_upper_bound_objective};
use robust_choice::{accuracy, log_likelihood, ChoiceDataset, Error, Estimator, ModelSpec, NormOrder, OracleMethod};

use super::{Command, Failure, Preset};

pub const SEED_ENV: &str = "ROBUST_CHOICE_SEED";

type CmdResult = Result<(), Failure>;

pub fn run(command: Command, strict: bool) -> CmdResult {
    match command {
        Command::Fit { data, config, out } => fit(&data, &config, &out, strict),
        Command::Evaluate { data, beta } => evaluate(&data, &beta),
        Command::Synth { clean_test, config, out } => synth(&clean_test, &config, &out),
        Command::Experiment { train, clean_test, config, out } => {
            experiment(&train, &clean_test, &config, &out, strict)
        }
        Command::Tune { train, config, out } => tune(&train, &config, out.as_deref(), strict),
        Command::Price { data, beta, beta_true, config, clean } => {
            price(&data, &beta, &beta_true, &config, clean.as_deref())
        }
        Command::Diagnose {
            data,
            beta,
            config,
            beta_mle,
            subsample,
            lipschitz,
            perturbation_l2,
            baseline_error,
            out,
        } => diagnose(DiagnoseArgs {
            data: &data,
            beta: &beta,
            config: &config,
            beta_mle: beta_mle.as_deref(),
            subsample,
            lipschitz,
            perturbation_l2,
            baseline_error,
            out: out.as_deref(),
        }),
        Command::Simulate { preset, n, seed, out, model_out, beta_out } => {
            simulate(preset, n, seed, &out, model_out.as_deref(), beta_out.as_deref())
        }
    }
}

/// Seed from `ROBUST_CHOICE_SEED`, else 0.
fn default_seed() -> Result<u64, Error> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))
        }
        Err(_) => Ok(0),
    }
}

fn load(config: &Path) -> Result<(RunConfig, ModelSpec), Error> {
    let cfg = RunConfig::load(config)?;
    let spec = cfg.spec().map_err(|e| e.context(format!("config {}", config.display())))?;
    Ok((cfg, spec))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))
}

/// The beta file's model must be the config's model.
fn same_model(config_spec: &ModelSpec, beta: &BetaFile, path: &Path) -> Result<(), Error> {
    if *config_spec != beta.spec {
        return Err(Error::Spec(format!("the model in {} differs from the config's [model]", path.display())));
    }
    Ok(())
}

fn fit(data: &Path, config: &Path, out: &Path, strict: bool) -> CmdResult {
    let (cfg, spec) = load(config)?;
    let estimator = cfg.estimator.to_estimator()?;
    let train = read_dataset(data, &spec)?;
    let result = estimator.fit(&train, &spec, &cfg.fit)?;
    let report = FitReport::new(&spec, &estimator, result, &train)?;
    write_json(out, &report)?;
    println!("estimator: {}", estimator.label());
    println!("{}", coefficient_table(&spec, &report.beta));
    println!("objective: {}", report.objective);
    println!("training log-likelihood: {}", report.train_log_likelihood);
    println!("training accuracy: {}", report.train_accuracy);
    println!("iterations: {}  converged: {}", report.iterations, report.converged);
    if strict && !report.converged {
        return Err(Failure::NotConverged(format!("fit of {}", estimator.label())));
    }
    Ok(())
}

fn evaluate(data: &Path, beta: &Path) -> CmdResult {
    let file = read_beta(beta)?;
    let data = read_dataset(data, &file.spec)?;
    println!("observations: {}", data.len());
    println!("log-likelihood: {}", log_likelihood(&file.spec, &file.beta, &data)?);
    println!("accuracy: {}", accuracy(&file.spec, &file.beta, &data)?);
    Ok(())
}

fn synth(clean_test: &Path, config: &Path, out: &Path) -> CmdResult {
    let (cfg, spec) = load(config)?;
    let scheme = cfg.experiment.to_scheme(&spec, default_seed()?)?;
    let clean = read_dataset(clean_test, &spec)?;
    let test = generate_synthetic_test(&clean, &spec, &scheme, &cfg.fit)?;
    create_dir(out)?;
    write_json(out.join("beta_test.json"), &BetaFile::new(&spec, &test.beta_test)?)?;
    write_dataset(out.join("simulated.csv"), &spec, &test.simulated)?;
    write_dataset(out.join("perturbed.csv"), &spec, &test.perturbed)?;
    let flips = test.flipped.iter().filter(|f| **f).count();
    println!("test mechanism:\n{}", coefficient_table(&spec, &test.beta_test));
    println!("observations: {}  relabeled: {flips}  seed: {}", test.perturbed.len(), scheme.seed);
    println!("wrote beta_test.json, simulated.csv, perturbed.csv to {}", out.display());
    Ok(())
}

fn experiment(train: &Path, clean_test: &Path, config: &Path, out: &Path, strict: bool) -> CmdResult {
    let (cfg, spec) = load(config)?;
    let scheme = cfg.experiment.to_scheme(&spec, default_seed()?)?;
    let models = cfg.experiment_models()?;
    let train = read_dataset(train, &spec)?;
    let clean = read_dataset(clean_test, &spec)?;
    let pricing = match &cfg.pricing {
        Some(p) => Some(PricingSetup { product: p.product(&spec)?, alpha_grid: p.grid()? }),
        None => None,
    };
    let report = run_replications(
        &train,
        &clean,
        &spec,
        &models,
        &scheme,
        cfg.experiment.replications,
        &cfg.fit,
        pricing.as_ref(),
    )?;
    create_dir(out)?;
    write_json(out.join("report.json"), &report)?;
    write_text(out.join("rows.csv"), &replication_rows_csv(&report)?)?;
    write_text(out.join("summary.csv"), &replication_summary_csv(&report)?)?;
    if pricing.is_some() {
        write_text(out.join("pricing.csv"), &pricing_csv(&report)?)?;
    }
    println!("{:<28} {:>14} {:>14} {:>14} {:>14}", "model", "train acc", "train LL", "test acc", "test LL");
    for m in &report.models {
        let cell = |metric: &str| {
            report.aggregate(&m.model, metric).map_or_else(String::new, |a| format!("{:.4}±{:.4}", a.mean, a.std))
        };
        println!(
            "{:<28} {:>14} {:>14} {:>14} {:>14}",
            m.model,
            cell("train_accuracy"),
            cell("train_ll"),
            cell("test_accuracy"),
            cell("test_ll")
        );
    }
    if pricing.is_some() {
        for name in std::iter::once(ORACLE).chain(report.models.iter().map(|m| m.model.as_str())) {
            if let Some(a) = report.aggregate(name, "actual_revenue") {
                println!("revenue {:<20} {:.4}±{:.4}", name, a.mean, a.std);
            }
        }
    }
    println!("wrote report.json, rows.csv, summary.csv to {}", out.display());
    if strict {
        if let Some(m) = report.models.iter().find(|m| !m.converged) {
            return Err(Failure::NotConverged(format!("fit of {}", m.model)));
        }
    }
    Ok(())
}

fn tune(train: &Path, config: &Path, out: Option<&Path>, strict: bool) -> CmdResult {
    let (cfg, spec) = load(config)?;
    let train = read_dataset(train, &spec)?;
    let seed = match cfg.tune.seed {
        Some(s) => s,
        None => default_seed()?,
    };
    let result = grid_search_tune(
        &train,
        &spec,
        cfg.estimator.family(),
        &cfg.tune.grid,
        cfg.tune.validation_fraction,
        seed,
        &cfg.fit,
    )?;
    let table = tune_csv(&result)?;
    print!("{table}");
    println!("selected: {}", result.best_value);
    if let Some(path) = out {
        write_text(path, &table)?;
    }
    if strict {
        if let Some(row) = result.table.iter().find(|r| !r.converged) {
            return Err(Failure::NotConverged(format!("fit at grid value {}", row.value)));
        }
    }
    Ok(())
}

fn price(data: &Path, beta: &Path, beta_true: &Path, config: &Path, clean: Option<&Path>) -> CmdResult {
    let (cfg, spec) = load(config)?;
    let pricing = cfg.pricing.as_ref().ok_or_else(|| Error::Config("the config has no [pricing] section".into()))?;
    let hat = read_beta(beta)?;
    same_model(&spec, &hat, beta)?;
    let truth = read_beta(beta_true)?;
    same_model(&spec, &truth, beta_true)?;
    let product = pricing.product(&spec)?;
    let grid = pricing.grid()?;
    let eval_set = read_dataset(data, &spec)?;
    let clean_set = match clean {
        Some(path) => read_dataset(path, &spec)?,
        None => eval_set.clone(),
    };
    if clean_set.len() != eval_set.len() {
        return Err(Error::Dimension("clean and evaluation sets have different lengths".into()).into());
    }
    let (alpha, predicted) = pricing_optimization(&eval_set, &spec, &hat.beta, product, &grid)?;
    let actual = evaluate_revenue(&clean_set, &spec, &truth.beta, alpha, product)?;
    let (oracle_alpha, _) = pricing_optimization(&clean_set, &spec, &truth.beta, product, &grid)?;
    let oracle = evaluate_revenue(&clean_set, &spec, &truth.beta, oracle_alpha, product)?;
    println!("alpha*: {alpha}");
    println!("predicted revenue: {predicted}");
    println!("actual revenue: {actual}");
    println!("oracle alpha*: {oracle_alpha}");
    println!("oracle revenue: {oracle}");
    Ok(())
}

struct DiagnoseArgs<'a> {
    data: &'a Path,
    beta: &'a Path,
    config: &'a Path,
    beta_mle: Option<&'a Path>,
    subsample: usize,
    lipschitz: f64,
    perturbation_l2: Option<f64>,
    baseline_error: Option<f64>,
    out: Option<&'a Path>,
}

#[derive(Serialize)]
struct BoundInputs {
    beta_l2: f64,
    expected_perturbation_l2: f64,
    lipschitz: f64,
    baseline_error: f64,
    bound: f64,
}

#[derive(Serialize)]
struct Sandwich {
    observations: usize,
    method: String,
    rf_objective: f64,
    exact_objective: f64,
    upper_bound: f64,
    ordered: bool,
    jensen_gap_violations: usize,
}

#[derive(Serialize)]
struct DiagnoseReport {
    estimator: String,
    observations: usize,
    log_likelihood: f64,
    accuracy: f64,
    trace_mle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<TraceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_error: Option<String>,
    prediction_error: BoundInputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    sandwich: Option<Sandwich>,
}

/// `sqrt(E‖Δx‖²)` for uniform noise of half-width (or width) `m·|x̄_k|` on the
/// non-constant columns; bounds `E‖Δx‖₂` from above.
fn rms_perturbation(data: &ChoiceDataset, magnitude: f64) -> f64 {
    let means = data.column_means();
    let mut total = 0.0;
    for (k, mean) in means.iter().enumerate() {
        let first = data.observations().first().map(|o| o.x()[k]);
        if data.iter().all(|o| Some(o.x()[k]) == first) {
            continue;
        }
        let w = magnitude * mean.abs();
        total += w * w / 3.0;
    }
    total.sqrt()
}

fn diagnose(args: DiagnoseArgs<'_>) -> CmdResult {
    let (cfg, spec) = load(args.config)?;
    let estimator = cfg.estimator.to_estimator()?;
    let file = read_beta(args.beta)?;
    same_model(&spec, &file, args.beta)?;
    let beta = &file.beta;
    let data = read_dataset(args.data, &spec)?;
    let ll = log_likelihood(&spec, beta, &data)?;
    let acc = accuracy(&spec, beta, &data)?;
    let trace_mle = fisher_trace_mle(&spec, beta, &data)?;

    let (trace, trace_error) = match &estimator {
        Estimator::RobustFeature { uncertainty } => {
            let mle = match args.beta_mle {
                Some(path) => {
                    let f = read_beta(path)?;
                    same_model(&spec, &f, path)?;
                    f.beta
                }
                None => beta.clone(),
            };
            match robust_feature_trace_report(&spec, beta, &mle, &data, uncertainty) {
                Ok(r) => (Some(r), None),
                Err(e @ (Error::Degenerate(_) | Error::Unsupported(_))) => (None, Some(e.to_string())),
                Err(e) => return Err(e.into()),
            }
        }
        Estimator::RobustLabel { budget } => (Some(robust_label_trace_report(&spec, beta, &data, budget)?), None),
        _ => (None, None),
    };

    let expected = args.perturbation_l2.unwrap_or_else(|| rms_perturbation(&data, cfg.experiment.feature_magnitude));
    let baseline = args.baseline_error.unwrap_or(1.0 - acc);
    let bound = prediction_error_bound(beta, expected, args.lipschitz, baseline)?;

    let sandwich = match &estimator {
        Estimator::RobustFeature { uncertainty } if uncertainty.is_single() => {
            let c = &uncertainty.constraints()[0];
            let method = if c.p.is_infinite() {
                Some((OracleMethod::VertexEnumeration, "vertex enumeration"))
            } else if c.p == NormOrder::TWO {
                Some((OracleMethod::ProjectedAscent { samples: 200, seed: 0 }, "projected ascent"))
            } else {
                None
            };
            match method {
                Some((method, name)) => {
                    let n = args.subsample.min(data.len());
                    let idx: Vec<usize> = (0..n).collect();
                    let sub = data.subset(&idx);
                    let budget = match &c.rho {
                        robust_choice::Radius::Uniform(_) => uncertainty.clone(),
                        robust_choice::Radius::PerSample(r) => {
                            robust_choice::FeatureUncertainty::new(vec![robust_choice::NormConstraint {
                                p: c.p,
                                rho: robust_choice::Radius::PerSample(r[..n].to_vec()),
                            }])?
                        }
                    };
                    let lower = rf_objective(&spec, beta, &sub, &budget)?;
                    let exact = exact_robust_objective(&spec, beta, &sub, &budget, method)?;
                    let upper = rf_upper_bound_objective(&spec, beta, &sub, &budget)?;
                    let mut violations = 0;
                    for i in 0..n {
                        let one = sub.subset(&[i]);
                        let one_budget = match &budget.constraints()[0].rho {
                            robust_choice::Radius::Uniform(_) => budget.clone(),
                            robust_choice::Radius::PerSample(r) => {
                                robust_choice::FeatureUncertainty::new(vec![robust_choice::NormConstraint {
                                    p: c.p,
                                    rho: robust_choice::Radius::PerSample(vec![r[i]]),
                                }])?
                            }
                        };
                        let gap = exact_robust_objective(&spec, beta, &one, &one_budget, method)?
                            - rf_objective(&spec, beta, &one, &one_budget)?;
                        if gap > jensen_gap_bound(&spec, beta, &sub, &budget, i)? + 1e-9 {
                            violations += 1;
                        }
                    }
                    let tol = 1e-9 * exact.abs().max(1.0);
                    Some(Sandwich {
                        observations: n,
                        method: name.into(),
                        rf_objective: lower,
                        exact_objective: exact,
                        upper_bound: upper,
                        ordered: lower <= exact + tol && exact <= upper + tol,
                        jensen_gap_violations: violations,
                    })
                }
                None => None,
            }
        }
        _ => None,
    };

    let report = DiagnoseReport {
        estimator: estimator.label(),
        observations: data.len(),
        log_likelihood: ll,
        accuracy: acc,
        trace_mle,
        trace,
        trace_error,
        prediction_error: BoundInputs {
            beta_l2: beta.l2_norm(),
            expected_perturbation_l2: expected,
            lipschitz: args.lipschitz,
            baseline_error: baseline,
            bound,
        },
        sandwich,
    };
    let json = to_json(&report)?;
    print!("{json}");
    if let Some(path) = args.out {
        write_text(path, &json)?;
    }
    Ok(())
}

fn simulate(
    preset: Preset,
    n: usize,
    seed: Option<u64>,
    out: &Path,
    model_out: Option<&Path>,
    beta_out: Option<&Path>,
) -> CmdResult {
    let seed = match seed {
        Some(s) => s,
        None => default_seed()?,
    };
    let problem = match preset {
        Preset::Binary => SyntheticProblem::binary_mode(n, seed),
        Preset::ThreeMode => SyntheticProblem::three_mode(n, seed),
    };
    let data = problem.simulate()?;
    write_dataset(out, &problem.spec, &data)?;
    if let Some(path) = model_out {
        write_text(path, &ModelSection::from_spec(&problem.spec).to_toml()?)?;
    }
    if let Some(path) = beta_out {
        write_json(path, &BetaFile::new(&problem.spec, &problem.beta)?)?;
    }
    println!("wrote {} observations to {}", data.len(), out.display());
    Ok(())
}
