//! Nominal and robust logit estimation for discrete choice data.
//!
//! Three estimators share one model description ([`ModelSpec`]) and one data
//! layout ([`ChoiceDataset`]):
//!
//! * the nominal multinomial logit maximum-likelihood fit,
//! * a robust-feature fit, which guards against features perturbed inside an
//!   ℓp ball around each observation,
//! * a robust-label fit, which guards against up to `Γ` mislabeled choices.
//!
//! ```
//! use robust_choice::{experiments::SyntheticProblem, Estimator, FitConfig, FeatureUncertainty, NormOrder};
//!
//! let problem = SyntheticProblem::binary_mode(300, 1);
//! let data = problem.simulate().unwrap();
//! let robust = Estimator::RobustFeature {
//!     uncertainty: FeatureUncertainty::single(NormOrder::TWO, 0.1).unwrap(),
//! };
//! let fit = robust.fit(&data, &problem.spec, &FitConfig::default()).unwrap();
//! assert!(fit.converged);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod norms;
pub mod numeric;
pub mod optimizer;
pub mod robust_feature;
pub mod robust_label;

pub use error::{Error, Result};
pub use model::{
    accuracy, choice_probabilities, eval_log_likelihood, log_likelihood, log_likelihood_gradient,
    predicted_alternative, systematic_utilities, ChoiceDataset, ChoiceObservation, Coefficients, ModelSpec,
};
pub use norms::{dual_norm_value, worst_case_perturbation, NormOrder};
pub use optimizer::{
    fit_nominal, fit_robust_feature, fit_robust_label, Estimator, EstimatorKind, FitConfig, FitResult, LineSearch,
};
pub use robust_feature::{FeatureUncertainty, NormConstraint, NormSplit, OracleMethod, Radius};
pub use robust_label::{LabelBudget, Relabel, WorstCaseRelabeling};
