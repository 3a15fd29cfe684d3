//! Synthetic data, perturbation schemes, replications, tuning, and pricing.

mod perturb;
mod pricing;
mod replication;
mod synthetic;
mod tuning;

pub use perturb::{
    fit_test_mechanism, generate_synthetic_test, perturb_with_mechanism, PerturbationScheme, SchemeKind, SyntheticTest,
};
pub use pricing::{alpha_grid, evaluate_revenue, pricing_optimization, PricedProduct};
pub use replication::{
    run_replications, Aggregate, ModelSummary, PricingRow, PricingSetup, ReplicationReport, ReplicationRow, METRICS,
    ORACLE,
};
pub use synthetic::{simulate_choices, simulate_dataset, FeatureDistribution, SyntheticDesign, SyntheticProblem};
pub use tuning::{grid_search_tune, TuneResult, TuneRow};
