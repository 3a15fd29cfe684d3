//! Single-product pricing: scale one alternative's cost by `α` and maximize expected revenue.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_inputs, full_probabilities_unchecked, ChoiceDataset, Coefficients, ModelSpec};

/// Which cost feature of which alternative is priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricedProduct {
    pub cost_feature: usize,
    pub alternative: usize,
}

impl PricedProduct {
    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.alternative >= spec.n_alternatives() || self.cost_feature >= spec.n_features() {
            return Err(Error::InvalidArgument(format!("priced product {self:?} is outside the model")));
        }
        if !spec.includes(self.alternative, self.cost_feature) {
            return Err(Error::InvalidArgument(format!(
                "feature `{}` does not enter the utility of `{}`",
                spec.features()[self.cost_feature],
                spec.alternatives()[self.alternative]
            )));
        }
        Ok(())
    }
}

/// `0, step, 2·step, …` up to `max` inclusive.
pub fn alpha_grid(step: f64, max: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= 0.0) || !step.is_finite() || !max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha grid needs step > 0 and max >= 0, got step {step}, max {max}"
        )));
    }
    let n = (max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

/// `Σₙ α·x_n^{cost}·P_{n,alt}` with the cost feature rescaled to `α·x_n^{cost}`.
fn revenue(data: &ChoiceDataset, spec: &ModelSpec, beta: &Coefficients, alpha: f64, product: PricedProduct) -> f64 {
    let k = product.cost_feature;
    data.iter()
        .filter(|obs| obs.is_available(product.alternative))
        .map(|obs| {
            let mut x = obs.x().to_vec();
            x[k] *= alpha;
            let scaled = obs.with_x(x).expect("same length");
            let p = full_probabilities_unchecked(spec.n_alternatives(), beta, &scaled);
            alpha * obs.x()[k] * p[product.alternative]
        })
        .sum()
}

/// The grid point maximizing predicted revenue under `beta_hat` (smallest `α` on ties)
/// and that revenue.
pub fn pricing_optimization(
    eval_set: &ChoiceDataset,
    spec: &ModelSpec,
    beta_hat: &Coefficients,
    product: PricedProduct,
    alpha_grid: &[f64],
) -> Result<(f64, f64)> {
    check_inputs(spec, beta_hat, eval_set)?;
    product.validate(spec)?;
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &alpha in alpha_grid {
        let r = revenue(eval_set, spec, beta_hat, alpha, product);
        if r > best.1 || (r == best.1 && alpha < best.0) {
            best = (alpha, r);
        }
    }
    Ok(best)
}

/// Revenue at `alpha` under the true mechanism and the given (clean) attributes.
pub fn evaluate_revenue(
    eval_set: &ChoiceDataset,
    spec: &ModelSpec,
    beta_true: &Coefficients,
    alpha: f64,
    product: PricedProduct,
) -> Result<f64> {
    check_inputs(spec, beta_true, eval_set)?;
    product.validate(spec)?;
    Ok(revenue(eval_set, spec, beta_true, alpha, product))
}
