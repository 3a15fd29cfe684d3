//! Hold-out grid search over a single hyper-parameter.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_likelihood_unchecked, ChoiceDataset, ModelSpec};
use crate::optimizer::{EstimatorKind, FitConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub value: f64,
    pub validation_ll: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_value: f64,
    pub table: Vec<TuneRow>,
}

/// Splits `train` at random into sub-train and validation parts (`validation_fraction`
/// of the rows, at least one in each), fits every grid value on the sub-train part and
/// picks the best validation log-likelihood. Ties go to the smaller value.
pub fn grid_search_tune(
    train: &ChoiceDataset,
    spec: &ModelSpec,
    kind: EstimatorKind,
    grid: &[f64],
    validation_fraction: f64,
    seed: u64,
    config: &FitConfig,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("hyper-parameter grid is empty".into()));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in (0, 1), got {validation_fraction}"
        )));
    }
    let n = train.len();
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} observations cannot be split with validation fraction {validation_fraction}"
        )));
    }
    train.check_spec(spec)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, fit_idx) = idx.split_at(n_val);
    let validation = train.subset(val_idx);
    let sub_train = train.subset(fit_idx);

    let table = grid
        .par_iter()
        .map(|&value| {
            let estimator = kind.instantiate(value)?;
            let fit = estimator.fit(&sub_train, spec, config).map_err(|e| e.context(format!("grid value {value}")))?;
            Ok(TuneRow {
                value,
                validation_ll: log_likelihood_unchecked(&fit.beta, &validation),
                converged: fit.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = &table[0];
    for row in &table[1..] {
        if row.validation_ll > best.validation_ll || (row.validation_ll == best.validation_ll && row.value < best.value)
        {
            best = row;
        }
    }
    Ok(TuneResult { best_value: best.value, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::synthetic::SyntheticProblem;
    use crate::norms::NormOrder;

    fn data() -> (ModelSpec, ChoiceDataset) {
        let p = SyntheticProblem::binary_mode(400, 5);
        (p.spec.clone(), p.simulate().unwrap())
    }

    #[test]
    fn single_value_grid() {
        let (spec, train) = data();
        let kind = EstimatorKind::RobustFeature { p: NormOrder::TWO };
        let out = grid_search_tune(&train, &spec, kind, &[0.2], 0.25, 1, &FitConfig::default()).unwrap();
        assert_eq!(out.best_value, 0.2);
        assert_eq!(out.table.len(), 1);
    }

    #[test]
    fn huge_radius_loses() {
        let (spec, train) = data();
        let kind = EstimatorKind::RobustFeature { p: NormOrder::TWO };
        let out = grid_search_tune(&train, &spec, kind, &[1e6, 0.0], 0.25, 1, &FitConfig::default()).unwrap();
        assert_eq!(out.best_value, 0.0);
        // the collapsed model predicts uniformly
        let uniform = 100.0 * 0.5f64.ln();
        assert!((out.table[0].validation_ll - uniform).abs() < 1e-3);
    }

    #[test]
    fn ties_go_to_the_smaller_value() {
        let (spec, train) = data();
        let out =
            grid_search_tune(&train, &spec, EstimatorKind::Nominal, &[3.0, 1.0, 2.0], 0.25, 1, &FitConfig::default())
                .unwrap();
        assert_eq!(out.best_value, 1.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (spec, train) = data();
        let c = FitConfig::default();
        assert!(grid_search_tune(&train, &spec, EstimatorKind::Nominal, &[], 0.25, 1, &c).is_err());
        assert!(grid_search_tune(&train, &spec, EstimatorKind::Nominal, &[0.0], 1.0, 1, &c).is_err());
        assert!(grid_search_tune(&train, &spec, EstimatorKind::Nominal, &[0.0], 0.0001, 1, &c).is_err());
    }

    #[test]
    fn deterministic_split() {
        let (spec, train) = data();
        let kind = EstimatorKind::RobustLabel;
        let a = grid_search_tune(&train, &spec, kind, &[0.0, 2.0], 0.3, 7, &FitConfig::default()).unwrap();
        let b = grid_search_tune(&train, &spec, kind, &[0.0, 2.0], 0.3, 7, &FitConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
