//! TOML run configuration.
//!
//! ```toml
//! [model]
//! alternatives = ["walk", "bus"]
//! base = "walk"
//! features = [
//!   { name = "asc_bus", alternatives = ["bus"] },
//!   { name = "walk_time", alternatives = ["walk"] },
//! ]
//!
//! [estimator]
//! kind = "robust_feature"   # nominal | robust_feature | robust_label
//! p = 2                     # perturbation norm, number or "inf" (default 2)
//! rho = 0.1                 # or a list with one radius per observation
//! # norms = [{ p = 2, rho = 0.1 }, { p = "inf", rho = 0.05 }]   (several balls)
//! # gamma = 2.0             (robust_label)
//!
//! [fit]                     # optimizer settings, all optional
//! max_iters = 2000
//!
//! [experiment]
//! replications = 30
//! seed = 1
//! scheme = "independent"    # independent | over_report | under_report | social_desirability
//! feature_magnitude = 0.3
//! label_flip_prob = 0.1
//! time_features = ["walk_time"]
//! green_modes = ["walk"]
//! models = [{ kind = "nominal" }, { kind = "robust_label", gamma = 2 }]
//!
//! [tune]
//! grid = [0.0, 0.01, 0.1]
//! validation_fraction = 0.2
//! seed = 1
//!
//! [pricing]
//! feature = "sm_cost"
//! alternative = "sm"
//! step = 0.01
//! max = 10.0
//! ```
//!
//! Unknown keys are rejected everywhere. Seeds left out of the file fall back to
//! the caller's default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{alpha_grid, PerturbationScheme, PricedProduct, SchemeKind};
use crate::model::ModelSpec;
use crate::norms::NormOrder;
use crate::optimizer::{Estimator, EstimatorKind, FitConfig};
use crate::robust_feature::{FeatureUncertainty, NormConstraint, Radius};
use crate::robust_label::LabelBudget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub pricing: Option<PricingSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alternatives: Vec<String>,
    pub base: String,
    pub features: Vec<FeatureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub name: String,
    pub alternatives: Vec<String>,
}

impl ModelSection {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        ModelSection {
            alternatives: spec.alternatives().to_vec(),
            base: spec.alternatives()[spec.base()].clone(),
            features: spec
                .features()
                .iter()
                .enumerate()
                .map(|(k, name)| FeatureEntry {
                    name: name.clone(),
                    alternatives: (0..spec.n_alternatives())
                        .filter(|&i| spec.includes(i, k))
                        .map(|i| spec.alternatives()[i].clone())
                        .collect(),
                })
                .collect(),
        }
    }

    /// A config file holding just this `[model]` section.
    pub fn to_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Wrapper<'a> {
            model: &'a ModelSection,
        }
        toml::to_string(&Wrapper { model: self }).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_spec(&self) -> Result<ModelSpec> {
        let alts: Vec<&str> = self.alternatives.iter().map(String::as_str).collect();
        let entries: Vec<Vec<&str>> =
            self.features.iter().map(|f| f.alternatives.iter().map(String::as_str).collect()).collect();
        let features: Vec<(&str, &[&str])> =
            self.features.iter().zip(&entries).map(|(f, a)| (f.name.as_str(), a.as_slice())).collect();
        ModelSpec::from_feature_lists(&alts, &features, &self.base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    #[default]
    Nominal,
    RobustFeature,
    RobustLabel,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub kind: EstimatorName,
    #[serde(default)]
    pub p: Option<NormOrder>,
    #[serde(default)]
    pub rho: Option<Radius>,
    #[serde(default)]
    pub norms: Option<Vec<NormConstraint>>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl EstimatorSection {
    pub fn to_estimator(&self) -> Result<Estimator> {
        let unused = |what: &str, present: bool| {
            if present {
                Err(Error::Config(format!("`{what}` does not apply to a {:?} estimator", self.kind)))
            } else {
                Ok(())
            }
        };
        match self.kind {
            EstimatorName::Nominal => {
                unused("p", self.p.is_some())?;
                unused("rho", self.rho.is_some())?;
                unused("norms", self.norms.is_some())?;
                unused("gamma", self.gamma.is_some())?;
                Ok(Estimator::Nominal)
            }
            EstimatorName::RobustFeature => {
                unused("gamma", self.gamma.is_some())?;
                let uncertainty = match (&self.norms, &self.rho) {
                    (Some(_), _) if self.p.is_some() || self.rho.is_some() => {
                        return Err(Error::Config("give either `norms` or `p`/`rho`, not both".into()))
                    }
                    (Some(norms), _) => FeatureUncertainty::new(norms.clone())?,
                    (None, Some(rho)) => FeatureUncertainty::new(vec![NormConstraint {
                        p: self.p.unwrap_or(NormOrder::TWO),
                        rho: rho.clone(),
                    }])?,
                    (None, None) => return Err(Error::Config("robust_feature needs `rho` or `norms`".into())),
                };
                Ok(Estimator::RobustFeature { uncertainty })
            }
            EstimatorName::RobustLabel => {
                unused("p", self.p.is_some())?;
                unused("rho", self.rho.is_some())?;
                unused("norms", self.norms.is_some())?;
                let gamma = self.gamma.ok_or_else(|| Error::Config("robust_label needs `gamma`".into()))?;
                Ok(Estimator::RobustLabel { budget: LabelBudget::new(gamma)? })
            }
        }
    }

    /// The one-parameter family used for tuning (`rho` or `gamma` varies).
    pub fn family(&self) -> EstimatorKind {
        match self.kind {
            EstimatorName::Nominal => EstimatorKind::Nominal,
            EstimatorName::RobustFeature => EstimatorKind::RobustFeature { p: self.p.unwrap_or(NormOrder::TWO) },
            EstimatorName::RobustLabel => EstimatorKind::RobustLabel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub replications: usize,
    pub seed: Option<u64>,
    pub scheme: SchemeKind,
    pub feature_magnitude: f64,
    pub label_flip_prob: f64,
    pub time_features: Vec<String>,
    pub green_modes: Vec<String>,
    /// Models to compare; `[estimator]` alone when empty.
    pub models: Vec<EstimatorSection>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let scheme = PerturbationScheme::default();
        ExperimentSection {
            replications: 30,
            seed: None,
            scheme: scheme.kind,
            feature_magnitude: scheme.feature_magnitude,
            label_flip_prob: scheme.label_flip_prob,
            time_features: Vec::new(),
            green_modes: Vec::new(),
            models: Vec::new(),
        }
    }
}

impl ExperimentSection {
    pub fn to_scheme(&self, spec: &ModelSpec, default_seed: u64) -> Result<PerturbationScheme> {
        let time_feature_indices = self
            .time_features
            .iter()
            .map(|f| spec.feature_index(f).ok_or_else(|| Error::Config(format!("unknown time feature `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        let green_mode_indices = self
            .green_modes
            .iter()
            .map(|a| spec.alternative_index(a).ok_or_else(|| Error::Config(format!("unknown green mode `{a}`"))))
            .collect::<Result<Vec<_>>>()?;
        let scheme = PerturbationScheme {
            kind: self.scheme,
            feature_magnitude: self.feature_magnitude,
            label_flip_prob: self.label_flip_prob,
            time_feature_indices,
            green_mode_indices,
            seed: self.seed.unwrap_or(default_seed),
        };
        scheme.validate(spec)?;
        Ok(scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub grid: Vec<f64>,
    pub validation_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection { grid: Vec::new(), validation_fraction: 0.2, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    pub feature: String,
    pub alternative: String,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_max")]
    pub max: f64,
}

fn default_step() -> f64 {
    0.01
}

fn default_max() -> f64 {
    10.0
}

impl PricingSection {
    pub fn product(&self, spec: &ModelSpec) -> Result<PricedProduct> {
        Ok(PricedProduct {
            cost_feature: spec
                .feature_index(&self.feature)
                .ok_or_else(|| Error::Config(format!("unknown pricing feature `{}`", self.feature)))?,
            alternative: spec
                .alternative_index(&self.alternative)
                .ok_or_else(|| Error::Config(format!("unknown pricing alternative `{}`", self.alternative)))?,
        })
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        alpha_grid(self.step, self.max)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.fit.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        RunConfig::from_toml(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        self.model.to_spec()
    }

    /// `[experiment].models`, or `[estimator]` when that list is empty.
    pub fn experiment_models(&self) -> Result<Vec<Estimator>> {
        if self.experiment.models.is_empty() {
            Ok(vec![self.estimator.to_estimator()?])
        } else {
            self.experiment.models.iter().map(EstimatorSection::to_estimator).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
alternatives = ["walk", "bus"]
base = "walk"
features = [
  { name = "asc_bus", alternatives = ["bus"] },
  { name = "walk_time", alternatives = ["walk"] },
  { name = "bus_time", alternatives = ["bus"] },
]
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_toml(BASE).unwrap();
        let spec = c.spec().unwrap();
        assert_eq!(spec.features(), &["asc_bus", "walk_time", "bus_time"]);
        assert!(spec.includes(1, 0) && !spec.includes(0, 0));
        assert_eq!(c.estimator.to_estimator().unwrap(), Estimator::Nominal);
        assert_eq!(c.fit, FitConfig::default());
        assert_eq!(c.experiment.replications, 30);
        let scheme = c.experiment.to_scheme(&spec, 77).unwrap();
        assert_eq!(scheme.seed, 77);
        assert_eq!(scheme.feature_magnitude, 0.3);
    }

    #[test]
    fn estimator_variants() {
        let parse = |s: &str| {
            RunConfig::from_toml(&format!("{BASE}\n[estimator]\n{s}")).and_then(|c| c.estimator.to_estimator())
        };
        assert_eq!(parse("kind = \"robust_feature\"\nrho = 0.1").unwrap().label(), "rf(p=2, rho=0.1)");
        assert_eq!(parse("kind = \"robust_feature\"\np = \"inf\"\nrho = 0.1").unwrap().label(), "rf(p=inf, rho=0.1)");
        assert_eq!(parse("kind = \"robust_label\"\ngamma = 3").unwrap().label(), "rl(gamma=3)");
        let multi =
            parse("kind = \"robust_feature\"\nnorms = [{ p = 2, rho = 0.1 }, { p = \"inf\", rho = 0.05 }]").unwrap();
        match multi {
            Estimator::RobustFeature { uncertainty } => assert_eq!(uncertainty.constraints().len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(parse("kind = \"robust_feature\"").is_err());
        assert!(parse("kind = \"robust_label\"").is_err());
        assert!(parse("kind = \"nominal\"\ngamma = 1").is_err());
        assert!(parse("kind = \"robust_feature\"\nrho = -1").is_err());
        assert!(parse("kind = \"robust_feature\"\nrho = 0.1\nnorms = [{ p = 2, rho = 0.1 }]").is_err());
    }

    #[test]
    fn model_section_round_trip() {
        let spec = crate::experiments::SyntheticProblem::three_mode(1, 0).spec;
        let text = ModelSection::from_spec(&spec).to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap().spec().unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml(&format!("{BASE}\nextra = 1")).is_err());
        assert!(RunConfig::from_toml(&format!("{BASE}\n[fit]\nmax_iter = 5")).is_err());
        assert!(RunConfig::from_toml(&format!("{BASE}\n[experiment]\nreps = 5")).is_err());
        assert!(RunConfig::from_toml(&format!("{BASE}\n[estimator]\nrhoo = 5")).is_err());
    }

    #[test]
    fn experiment_and_pricing_sections() {
        let text = format!(
            "{BASE}\n[experiment]\nreplications = 2\nseed = 5\nscheme = \"over_report\"\n\
             time_features = [\"walk_time\"]\nmodels = [{{ kind = \"nominal\" }}, {{ kind = \"robust_label\", gamma = 2 }}]\n\
             [pricing]\nfeature = \"bus_time\"\nalternative = \"bus\"\nstep = 0.5\n"
        );
        let c = RunConfig::from_toml(&text).unwrap();
        let spec = c.spec().unwrap();
        let scheme = c.experiment.to_scheme(&spec, 0).unwrap();
        assert_eq!(scheme.seed, 5);
        assert_eq!(scheme.time_feature_indices, vec![1]);
        assert_eq!(c.experiment_models().unwrap().len(), 2);
        let pricing = c.pricing.unwrap();
        assert_eq!(pricing.product(&spec).unwrap(), PricedProduct { cost_feature: 2, alternative: 1 });
        assert_eq!(pricing.grid().unwrap().len(), 21);
        let bad = format!("{BASE}\n[experiment]\ntime_features = [\"nope\"]\n");
        let c = RunConfig::from_toml(&bad).unwrap();
        assert!(c.experiment.to_scheme(&c.spec().unwrap(), 0).is_err());
    }
}
