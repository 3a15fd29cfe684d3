//! Files in and out: CSV datasets, TOML run configurations, JSON artifacts, reports.

mod artifacts;
mod config;
mod csv;

pub use self::artifacts::{
    coefficient_table, parse_beta, pricing_csv, read_beta, replication_rows_csv, replication_summary_csv, to_json,
    tune_csv, write_json, write_text, BetaFile, FitReport,
};
pub use self::config::{
    EstimatorName, EstimatorSection, ExperimentSection, FeatureEntry, ModelSection, PricingSection, RunConfig,
    TuneSection,
};
pub use self::csv::{
    availability_column, read_dataset, read_dataset_from, write_dataset, write_dataset_to, CHOICE_COLUMN,
};
