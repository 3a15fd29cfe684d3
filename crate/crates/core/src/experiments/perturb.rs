//! Synthetic perturbed test sets: fit a mechanism on clean data, re-simulate the
//! labels from it, then corrupt features and labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::synthetic::draw_choice;
use crate::model::{ChoiceDataset, ChoiceObservation, Coefficients, ModelSpec};
use crate::optimizer::{fit_nominal, FitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Two-sided feature noise; labels replaced by a random other available alternative.
    #[default]
    Independent,
    /// Time features only increase; other features and labels as `Independent`.
    OverReport,
    /// Time features only decrease; other features and labels as `Independent`.
    UnderReport,
    /// Two-sided feature noise; non-green choices switched to a random available green mode.
    SocialDesirability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationScheme {
    pub kind: SchemeKind,
    /// Noise half-width as a fraction of each feature's column mean.
    pub feature_magnitude: f64,
    pub label_flip_prob: f64,
    pub time_feature_indices: Vec<usize>,
    pub green_mode_indices: Vec<usize>,
    pub seed: u64,
}

impl Default for PerturbationScheme {
    fn default() -> Self {
        PerturbationScheme {
            kind: SchemeKind::Independent,
            feature_magnitude: 0.3,
            label_flip_prob: 0.1,
            time_feature_indices: Vec::new(),
            green_mode_indices: Vec::new(),
            seed: 0,
        }
    }
}

impl PerturbationScheme {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.feature_magnitude >= 0.0) || !self.feature_magnitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "feature magnitude must be finite and >= 0, got {}",
                self.feature_magnitude
            )));
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return Err(Error::InvalidArgument(format!(
                "label flip probability must lie in [0, 1], got {}",
                self.label_flip_prob
            )));
        }
        if let Some(k) = self.time_feature_indices.iter().find(|&&k| k >= spec.n_features()) {
            return Err(Error::InvalidArgument(format!("time feature index {k} out of range")));
        }
        if let Some(i) = self.green_mode_indices.iter().find(|&&i| i >= spec.n_alternatives()) {
            return Err(Error::InvalidArgument(format!("green mode index {i} out of range")));
        }
        if self.kind == SchemeKind::SocialDesirability && self.green_mode_indices.is_empty() {
            return Err(Error::InvalidArgument("social desirability needs at least one green mode".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PerturbationScheme { seed, ..self.clone() }
    }

    /// Noise interval for feature `k` with column mean `mean`.
    fn interval(&self, k: usize, mean: f64) -> (f64, f64) {
        let w = self.feature_magnitude * mean.abs();
        let is_time = self.time_feature_indices.contains(&k);
        match self.kind {
            SchemeKind::OverReport if is_time => (0.0, w),
            SchemeKind::UnderReport if is_time => (-w, 0.0),
            _ => (-w, w),
        }
    }
}

/// Output of [`generate_synthetic_test`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTest {
    /// Nominal fit on the clean test set; the true mechanism of the simulation.
    pub beta_test: Coefficients,
    /// Clean features with labels simulated from `beta_test`.
    pub simulated: ChoiceDataset,
    /// `simulated` after feature noise and label flips.
    pub perturbed: ChoiceDataset,
    /// Which observations had their label changed.
    pub flipped: Vec<bool>,
}

/// Fits the nominal model on `clean_test`; refuses a fit that does not converge.
pub fn fit_test_mechanism(clean_test: &ChoiceDataset, spec: &ModelSpec, config: &FitConfig) -> Result<Coefficients> {
    let fit = fit_nominal(clean_test, spec, config).map_err(|e| e.context("fitting the test mechanism"))?;
    if !fit.converged {
        return Err(Error::Fit(
            "nominal fit on the clean test set did not converge (separable or degenerate data?)".into(),
        ));
    }
    Ok(fit.beta)
}

/// Fit, simulate, perturb. Deterministic given `scheme.seed`.
pub fn generate_synthetic_test(
    clean_test: &ChoiceDataset,
    spec: &ModelSpec,
    scheme: &PerturbationScheme,
    config: &FitConfig,
) -> Result<SyntheticTest> {
    scheme.validate(spec)?;
    let beta_test = fit_test_mechanism(clean_test, spec, config)?;
    perturb_with_mechanism(clean_test, spec, &beta_test, scheme)
}

/// Simulation and perturbation steps for a known mechanism `beta_test`.
///
/// Column means are taken over `clean_test`. Constant columns (such as intercepts)
/// are left untouched.
pub fn perturb_with_mechanism(
    clean_test: &ChoiceDataset,
    spec: &ModelSpec,
    beta_test: &Coefficients,
    scheme: &PerturbationScheme,
) -> Result<SyntheticTest> {
    scheme.validate(spec)?;
    crate::model::check_inputs(spec, beta_test, clean_test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
    let n_alt = spec.n_alternatives();

    let simulated_obs = clean_test
        .iter()
        .map(|obs| obs.with_chosen(draw_choice(n_alt, beta_test, obs, &mut rng)))
        .collect::<Result<Vec<_>>>()?;
    let simulated = ChoiceDataset::new(clean_test.feature_names().to_vec(), simulated_obs)?;

    let means = clean_test.column_means();
    let constant: Vec<bool> = (0..clean_test.n_features())
        .map(|k| {
            let first = clean_test.observations().first().map(|o| o.x()[k]);
            clean_test.iter().all(|o| Some(o.x()[k]) == first)
        })
        .collect();
    let intervals: Vec<(f64, f64)> =
        means.iter().enumerate().map(|(k, &m)| if constant[k] { (0.0, 0.0) } else { scheme.interval(k, m) }).collect();

    let mut perturbed_obs = Vec::with_capacity(simulated.len());
    let mut flipped = Vec::with_capacity(simulated.len());
    for obs in simulated.iter() {
        let x: Vec<f64> = obs
            .x()
            .iter()
            .zip(&intervals)
            .map(|(&v, &(lo, hi))| if hi > lo { v + rng.random_range(lo..=hi) } else { v })
            .collect();
        let label = flip_label(obs, scheme, &mut rng);
        flipped.push(label != obs.chosen());
        perturbed_obs.push(ChoiceObservation::new(x, obs.available().to_vec(), label)?);
    }
    let perturbed = ChoiceDataset::new(clean_test.feature_names().to_vec(), perturbed_obs)?;
    Ok(SyntheticTest { beta_test: beta_test.clone(), simulated, perturbed, flipped })
}

fn flip_label(obs: &ChoiceObservation, scheme: &PerturbationScheme, rng: &mut impl Rng) -> usize {
    // one uniform draw per observation keeps the stream aligned across schemes
    let u: f64 = rng.random();
    let candidates: Vec<usize> = match scheme.kind {
        SchemeKind::SocialDesirability => {
            if scheme.green_mode_indices.contains(&obs.chosen()) {
                Vec::new()
            } else {
                obs.available().iter().copied().filter(|i| scheme.green_mode_indices.contains(i)).collect()
            }
        }
        _ => obs.available().iter().copied().filter(|&i| i != obs.chosen()).collect(),
    };
    if u < scheme.label_flip_prob && !candidates.is_empty() {
        candidates[rng.random_range(0..candidates.len())]
    } else {
        obs.chosen()
    }
}
