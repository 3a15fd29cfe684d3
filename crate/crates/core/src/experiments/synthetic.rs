//! Synthetic designs with known coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_beta, full_probabilities_unchecked, ChoiceDataset, ChoiceObservation, Coefficients, ModelSpec,
};

/// Normal feature distribution; `sd = 0` gives a constant column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDistribution {
    pub mean: f64,
    #[serde(default)]
    pub sd: f64,
}

impl FeatureDistribution {
    pub fn constant(value: f64) -> Self {
        FeatureDistribution { mean: value, sd: 0.0 }
    }

    pub fn normal(mean: f64, sd: f64) -> Self {
        FeatureDistribution { mean, sd }
    }
}

/// How to draw the features of a synthetic dataset. Every alternative is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDesign {
    pub n_obs: usize,
    pub features: Vec<FeatureDistribution>,
    #[serde(default)]
    pub seed: u64,
}

/// A model, its true coefficients, and a design to simulate from.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub spec: ModelSpec,
    pub beta: Coefficients,
    pub design: SyntheticDesign,
}

impl SyntheticProblem {
    /// Walk (base) versus bus with alternative-specific travel times and a bus fare.
    pub fn binary_mode(n_obs: usize, seed: u64) -> Self {
        let spec = ModelSpec::from_feature_lists(
            &["walk", "bus"],
            &[("asc_bus", &["bus"]), ("walk_time", &["walk"]), ("bus_time", &["bus"]), ("bus_cost", &["bus"])],
            "walk",
        )
        .expect("valid preset");
        let beta =
            Coefficients::from_rows(vec![vec![0.0, -0.8, 0.0, 0.0], vec![0.5, 0.0, -0.4, -0.6]]).expect("valid preset");
        let design = SyntheticDesign {
            n_obs,
            features: vec![
                FeatureDistribution::constant(1.0),
                FeatureDistribution::normal(1.5, 0.6),
                FeatureDistribution::normal(1.0, 0.4),
                FeatureDistribution::normal(1.0, 0.5),
            ],
            seed,
        };
        SyntheticProblem { spec, beta, design }
    }

    /// Train (base), Swissmetro, and car with per-mode time and cost.
    pub fn three_mode(n_obs: usize, seed: u64) -> Self {
        let spec = ModelSpec::from_feature_lists(
            &["train", "sm", "car"],
            &[
                ("asc_sm", &["sm"]),
                ("asc_car", &["car"]),
                ("train_time", &["train"]),
                ("train_cost", &["train"]),
                ("sm_time", &["sm"]),
                ("sm_cost", &["sm"]),
                ("car_time", &["car"]),
                ("car_cost", &["car"]),
            ],
            "train",
        )
        .expect("valid preset");
        let mut beta = Coefficients::zeros(&spec);
        beta.set(1, 0, 0.3);
        beta.set(2, 1, 0.1);
        beta.set(0, 2, -1.0);
        beta.set(0, 3, -0.8);
        beta.set(1, 4, -1.0);
        beta.set(1, 5, -1.2);
        beta.set(2, 6, -1.0);
        beta.set(2, 7, -0.8);
        let design = SyntheticDesign {
            n_obs,
            features: vec![
                FeatureDistribution::constant(1.0),
                FeatureDistribution::constant(1.0),
                FeatureDistribution::normal(1.2, 0.3),
                FeatureDistribution::normal(1.0, 0.3),
                FeatureDistribution::normal(0.8, 0.3),
                FeatureDistribution::normal(1.1, 0.3),
                FeatureDistribution::normal(1.0, 0.4),
                FeatureDistribution::normal(0.9, 0.3),
            ],
            seed,
        };
        SyntheticProblem { spec, beta, design }
    }

    /// `n_alt` alternatives over `n_features` standard-normal features, base 0 pinned,
    /// true coefficients drawn `N(0, 0.5²)` from `seed`.
    pub fn generic(n_alt: usize, n_features: usize, n_obs: usize, seed: u64) -> Result<Self> {
        let alts = (0..n_alt).map(|i| format!("alt{i}")).collect();
        let features = (0..n_features).map(|k| format!("x{k}")).collect();
        let mut mask = vec![vec![true; n_features]; n_alt];
        if let Some(row) = mask.first_mut() {
            row.iter_mut().for_each(|m| *m = false);
        }
        let spec = ModelSpec::new(alts, features, mask, 0)?;
        // offset so the coefficients do not share a stream with the features
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let free: Vec<f64> = (0..spec.n_free()).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let beta = Coefficients::from_free(&spec, &free);
        let design = SyntheticDesign { n_obs, features: vec![FeatureDistribution::normal(0.0, 1.0); n_features], seed };
        Ok(SyntheticProblem { spec, beta, design })
    }

    pub fn simulate(&self) -> Result<ChoiceDataset> {
        simulate_dataset(&self.spec, &self.beta, &self.design)
    }

    /// Same problem with a different design seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.design.seed = seed;
        out
    }
}

/// Draws features from `design` and choices from the logit model at `beta`.
pub fn simulate_dataset(spec: &ModelSpec, beta: &Coefficients, design: &SyntheticDesign) -> Result<ChoiceDataset> {
    check_beta(spec, beta)?;
    if design.features.len() != spec.n_features() {
        return Err(Error::Dimension(format!(
            "design has {} features, model has {}",
            design.features.len(),
            spec.n_features()
        )));
    }
    if let Some(f) = design.features.iter().find(|f| !(f.sd >= 0.0) || !f.mean.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid feature distribution {f:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let all: Vec<usize> = (0..spec.n_alternatives()).collect();
    let mut observations = Vec::with_capacity(design.n_obs);
    for _ in 0..design.n_obs {
        let x: Vec<f64> =
            design.features.iter().map(|f| f.mean + f.sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let obs = ChoiceObservation::new(x, all.clone(), 0)?;
        let chosen = draw_choice(spec.n_alternatives(), beta, &obs, &mut rng);
        observations.push(obs.with_chosen(chosen)?);
    }
    ChoiceDataset::new(spec.features().to_vec(), observations)
}

/// Samples an alternative from the logit probabilities at `beta`.
pub(crate) fn draw_choice(
    n_alternatives: usize,
    beta: &Coefficients,
    obs: &ChoiceObservation,
    rng: &mut impl Rng,
) -> usize {
    let p = full_probabilities_unchecked(n_alternatives, beta, obs);
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for &i in obs.available() {
        acc += p[i];
        if r < acc {
            return i;
        }
    }
    *obs.available().last().expect("non-empty availability")
}

/// Replaces every label in `data` by a draw from the logit model at `beta`.
pub fn simulate_choices(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    seed: u64,
) -> Result<ChoiceDataset> {
    check_beta(spec, beta)?;
    data.check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observations = data
        .iter()
        .map(|obs| obs.with_chosen(draw_choice(spec.n_alternatives(), beta, obs, &mut rng)))
        .collect::<Result<Vec<_>>>()?;
    ChoiceDataset::new(data.feature_names().to_vec(), observations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_is_deterministic() {
        let problem = SyntheticProblem::three_mode(200, 7);
        let a = problem.simulate().unwrap();
        let b = problem.simulate().unwrap();
        assert_eq!(a, b);
        let c = problem.with_seed(8).simulate().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_columns_stay_constant() {
        let data = SyntheticProblem::binary_mode(50, 1).simulate().unwrap();
        assert!(data.iter().all(|o| o.x()[0] == 1.0));
    }

    #[test]
    fn choice_frequencies_follow_probabilities() {
        // x fixed at the design mean, so every draw uses the same probabilities
        let mut problem = SyntheticProblem::binary_mode(20_000, 3);
        problem.design.features.iter_mut().for_each(|f| f.sd = 0.0);
        let data = problem.simulate().unwrap();
        let p = crate::model::choice_probabilities(&problem.spec, &problem.beta, &data.observations()[0]).unwrap();
        let share = data.iter().filter(|o| o.chosen() == 1).count() as f64 / 20_000.0;
        let se = (p[1] * (1.0 - p[1]) / 20_000.0).sqrt();
        assert!((share - p[1]).abs() < 4.0 * se, "share {share} vs {}", p[1]);
    }

    #[test]
    fn generic_problem_respects_mask() {
        let problem = SyntheticProblem::generic(3, 4, 10, 5).unwrap();
        assert!(problem.beta.respects_mask(&problem.spec));
        assert!(problem.beta.l2_norm() > 0.0);
    }
}
