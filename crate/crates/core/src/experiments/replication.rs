//! Replication harness: fit every model once on the training data, then score it on
//! freshly perturbed test sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::perturb::{fit_test_mechanism, perturb_with_mechanism, PerturbationScheme};
use crate::experiments::pricing::{evaluate_revenue, pricing_optimization, PricedProduct};
use crate::model::{accuracy, log_likelihood_unchecked, ChoiceDataset, Coefficients, ModelSpec};
use crate::numeric::mean_std;
use crate::optimizer::{Estimator, FitConfig, FitResult};

/// Optional pricing evaluation run on every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingSetup {
    pub product: PricedProduct,
    pub alpha_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub model: String,
    pub replication: usize,
    pub train_accuracy: f64,
    pub train_ll: f64,
    pub test_accuracy: f64,
    pub test_ll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingRow {
    pub model: String,
    pub replication: usize,
    pub alpha_star: f64,
    pub predicted_revenue: f64,
    pub actual_revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub converged: bool,
    pub iterations: usize,
    pub beta: Coefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub beta_test: Coefficients,
    pub models: Vec<ModelSummary>,
    pub rows: Vec<ReplicationRow>,
    pub pricing: Vec<PricingRow>,
    pub aggregates: Vec<Aggregate>,
}

pub const ORACLE: &str = "oracle";
pub const METRICS: [&str; 4] = ["train_accuracy", "train_ll", "test_accuracy", "test_ll"];

impl ReplicationReport {
    /// Rows of one model in replication order.
    pub fn model_rows<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a ReplicationRow> + 'a {
        self.rows.iter().filter(move |r| r.model == model)
    }

    pub fn aggregate(&self, model: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.model == model && a.metric == metric)
    }

    /// Recomputes mean and standard deviation from the stored rows.
    pub fn recompute_aggregates(&self) -> Vec<Aggregate> {
        let mut out = Vec::new();
        for m in &self.models {
            let rows: Vec<&ReplicationRow> = self.model_rows(&m.model).collect();
            for metric in METRICS {
                let values: Vec<f64> = rows.iter().map(|r| metric_value(r, metric)).collect();
                let (mean, std) = mean_std(&values);
                out.push(Aggregate { model: m.model.clone(), metric: metric.into(), mean, std });
            }
        }
        let mut pricing_models: Vec<&str> = Vec::new();
        for row in &self.pricing {
            if !pricing_models.contains(&row.model.as_str()) {
                pricing_models.push(&row.model);
            }
        }
        for model in pricing_models {
            let values: Vec<f64> = self.pricing.iter().filter(|r| r.model == model).map(|r| r.actual_revenue).collect();
            let (mean, std) = mean_std(&values);
            out.push(Aggregate { model: model.into(), metric: "actual_revenue".into(), mean, std });
        }
        out
    }
}

fn metric_value(row: &ReplicationRow, metric: &str) -> f64 {
    match metric {
        "train_accuracy" => row.train_accuracy,
        "train_ll" => row.train_ll,
        "test_accuracy" => row.test_accuracy,
        _ => row.test_ll,
    }
}

/// Unique display names; repeated labels get a `#index` suffix.
fn model_names(models: &[Estimator]) -> Vec<String> {
    let labels: Vec<String> = models.iter().map(Estimator::label).collect();
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| if labels.iter().filter(|o| *o == l).count() > 1 { format!("{l}#{i}") } else { l.clone() })
        .collect()
}

/// Replication `r = 1..=replications` perturbs `clean_test` with seed `scheme.seed + r`.
///
/// The test mechanism is fitted once on `clean_test`; each model is fitted once on
/// `train` (the fit does not depend on the replication).
#[allow(clippy::too_many_arguments)]
pub fn run_replications(
    train: &ChoiceDataset,
    clean_test: &ChoiceDataset,
    spec: &ModelSpec,
    models: &[Estimator],
    scheme: &PerturbationScheme,
    replications: usize,
    config: &FitConfig,
    pricing: Option<&PricingSetup>,
) -> Result<ReplicationReport> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to evaluate".into()));
    }
    if replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is needed".into()));
    }
    scheme.validate(spec)?;
    train.check_spec(spec)?;
    let names = model_names(models);
    let beta_test = fit_test_mechanism(clean_test, spec, config)?;
    let fits: Vec<FitResult> = models
        .par_iter()
        .zip(&names)
        .map(|(m, name)| m.fit(train, spec, config).map_err(|e| e.context(format!("model {name}"))))
        .collect::<Result<_>>()?;
    for (name, fit) in names.iter().zip(&fits) {
        if !fit.converged {
            log::warn!("model {name} did not converge on the training data");
        }
    }
    let train_scores: Vec<(f64, f64)> = fits
        .iter()
        .map(|f| Ok((accuracy(spec, &f.beta, train)?, log_likelihood_unchecked(&f.beta, train))))
        .collect::<Result<_>>()?;

    let per_rep = (1..=replications)
        .into_par_iter()
        .map(|r| {
            let seed = scheme.seed.wrapping_add(r as u64);
            let test = perturb_with_mechanism(clean_test, spec, &beta_test, &scheme.with_seed(seed))
                .map_err(|e| e.context(format!("replication {r}")))?;
            let mut rows = Vec::with_capacity(models.len());
            for ((name, fit), &(train_accuracy, train_ll)) in names.iter().zip(&fits).zip(&train_scores) {
                rows.push(ReplicationRow {
                    model: name.clone(),
                    replication: r,
                    train_accuracy,
                    train_ll,
                    test_accuracy: accuracy(spec, &fit.beta, &test.perturbed)?,
                    test_ll: log_likelihood_unchecked(&fit.beta, &test.perturbed),
                });
            }
            let mut prices = Vec::new();
            if let Some(setup) = pricing {
                let (alpha, predicted) =
                    pricing_optimization(&test.simulated, spec, &beta_test, setup.product, &setup.alpha_grid)?;
                prices.push(PricingRow {
                    model: ORACLE.into(),
                    replication: r,
                    alpha_star: alpha,
                    predicted_revenue: predicted,
                    actual_revenue: evaluate_revenue(&test.simulated, spec, &beta_test, alpha, setup.product)?,
                });
                for (name, fit) in names.iter().zip(&fits) {
                    let (alpha, predicted) =
                        pricing_optimization(&test.perturbed, spec, &fit.beta, setup.product, &setup.alpha_grid)?;
                    prices.push(PricingRow {
                        model: name.clone(),
                        replication: r,
                        alpha_star: alpha,
                        predicted_revenue: predicted,
                        actual_revenue: evaluate_revenue(&test.simulated, spec, &beta_test, alpha, setup.product)?,
                    });
                }
            }
            Ok((rows, prices))
        })
        .collect::<Result<Vec<_>>>()?;

    // rayon preserves index order in collect, so the merge is deterministic
    let mut rows = Vec::new();
    let mut pricing_rows = Vec::new();
    for (r, p) in per_rep {
        rows.extend(r);
        pricing_rows.extend(p);
    }
    rows.sort_by(|a, b| {
        let ia = names.iter().position(|n| *n == a.model);
        let ib = names.iter().position(|n| *n == b.model);
        ia.cmp(&ib).then(a.replication.cmp(&b.replication))
    });
    let mut report = ReplicationReport {
        beta_test,
        models: names
            .into_iter()
            .zip(fits)
            .map(|(model, f)| ModelSummary { model, converged: f.converged, iterations: f.iterations, beta: f.beta })
            .collect(),
        rows,
        pricing: pricing_rows,
        aggregates: Vec::new(),
    };
    report.aggregates = report.recompute_aggregates();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::synthetic::SyntheticProblem;
    use crate::norms::NormOrder;
    use crate::robust_feature::FeatureUncertainty;
    use crate::robust_label::LabelBudget;

    fn setup() -> (ModelSpec, ChoiceDataset, ChoiceDataset) {
        let p = SyntheticProblem::binary_mode(300, 1);
        let train = p.simulate().unwrap();
        let test = p.with_seed(2).simulate().unwrap();
        (p.spec, train, test)
    }

    #[test]
    fn one_replication_one_row() {
        let (spec, train, test) = setup();
        let report = run_replications(
            &train,
            &test,
            &spec,
            &[Estimator::Nominal],
            &PerturbationScheme::default(),
            1,
            &FitConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.aggregates.len(), METRICS.len());
        assert_eq!(report.aggregates[0].std, 0.0);
    }

    #[test]
    fn zero_budgets_match_nominal() {
        let (spec, train, test) = setup();
        let models = [
            Estimator::Nominal,
            Estimator::RobustFeature { uncertainty: FeatureUncertainty::single(NormOrder::TWO, 0.0).unwrap() },
            Estimator::RobustLabel { budget: LabelBudget::new(0.0).unwrap() },
        ];
        let report = run_replications(
            &train,
            &test,
            &spec,
            &models,
            &PerturbationScheme::default(),
            3,
            &FitConfig::default(),
            None,
        )
        .unwrap();
        let by_model: Vec<Vec<&ReplicationRow>> =
            report.models.iter().map(|m| report.model_rows(&m.model).collect()).collect();
        for rows in &by_model[1..] {
            for (a, b) in rows.iter().zip(&by_model[0]) {
                assert!((a.test_ll - b.test_ll).abs() < 1e-6);
                assert!((a.train_ll - b.train_ll).abs() < 1e-6);
                assert!((a.test_accuracy - b.test_accuracy).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn aggregates_are_recomputable_and_deterministic() {
        let (spec, train, test) = setup();
        let run = || {
            run_replications(
                &train,
                &test,
                &spec,
                &[Estimator::Nominal, Estimator::RobustLabel { budget: LabelBudget::new(2.0).unwrap() }],
                &PerturbationScheme { seed: 5, ..Default::default() },
                4,
                &FitConfig::default(),
                Some(&PricingSetup {
                    product: PricedProduct { cost_feature: 3, alternative: 1 },
                    alpha_grid: crate::experiments::alpha_grid(0.1, 10.0).unwrap(),
                }),
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a.aggregates, a.recompute_aggregates());
        assert_eq!(a, run());
        for r in 1..=4 {
            let rows: Vec<&PricingRow> = a.pricing.iter().filter(|p| p.replication == r).collect();
            let oracle = rows.iter().find(|p| p.model == ORACLE).unwrap();
            assert!(rows.iter().all(|p| oracle.actual_revenue >= p.actual_revenue));
        }
    }

    #[test]
    fn duplicate_labels_are_disambiguated() {
        let names = model_names(&[Estimator::Nominal, Estimator::Nominal]);
        assert_eq!(names, vec!["nominal#0", "nominal#1"]);
    }
}
