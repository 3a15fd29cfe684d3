//! Choice data, model specification, and the nominal multinomial logit.
//!
//! Every observation carries one shared feature vector `x`. Alternative-specific
//! attributes are encoded as separate features that enter only their own
//! alternative's utility through the inclusion mask of [`ModelSpec`]; a
//! coefficient whose mask entry is `false` is pinned to zero.
//!
//! All probability and log-likelihood computations are max-shift stabilized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, log_sum_exp, softmax_into};

/// Alternatives, features, and the parameter domain (which coefficients are free).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    alternatives: Vec<String>,
    features: Vec<String>,
    mask: Vec<Vec<bool>>,
    base: usize,
    free: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    alternatives: Vec<String>,
    features: Vec<String>,
    mask: Vec<Vec<bool>>,
    base: usize,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = Error;
    fn try_from(raw: RawModelSpec) -> Result<Self> {
        ModelSpec::new(raw.alternatives, raw.features, raw.mask, raw.base)
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(spec: ModelSpec) -> Self {
        RawModelSpec { alternatives: spec.alternatives, features: spec.features, mask: spec.mask, base: spec.base }
    }
}

impl ModelSpec {
    /// `mask[i][k]` is true when feature `k` enters alternative `i`'s utility.
    pub fn new(alternatives: Vec<String>, features: Vec<String>, mask: Vec<Vec<bool>>, base: usize) -> Result<Self> {
        let n_alt = alternatives.len();
        let n_feat = features.len();
        if n_alt < 2 {
            return Err(Error::Spec("at least two alternatives are required".into()));
        }
        if n_feat == 0 {
            return Err(Error::Spec("at least one feature is required".into()));
        }
        if base >= n_alt {
            return Err(Error::Spec(format!("base alternative index {base} out of range for {n_alt} alternatives")));
        }
        if mask.len() != n_alt || mask.iter().any(|row| row.len() != n_feat) {
            return Err(Error::Spec(format!("inclusion mask must be {n_alt}x{n_feat}")));
        }
        for (list, what) in [(&alternatives, "alternative"), (&features, "feature")] {
            let mut seen = std::collections::HashSet::new();
            for name in list.iter() {
                if !seen.insert(name.as_str()) {
                    return Err(Error::Spec(format!("duplicate {what} name `{name}`")));
                }
            }
        }
        for (k, name) in features.iter().enumerate() {
            let count = mask.iter().filter(|row| row[k]).count();
            if count == 0 {
                return Err(Error::Spec(format!("feature `{name}` does not enter any alternative")));
            }
            // Identification: some alternative must have this coefficient pinned.
            if count == n_alt {
                return Err(Error::Spec(format!(
                    "feature `{name}` enters every alternative; pin it in at least one (e.g. the base)"
                )));
            }
        }
        let free = (0..n_alt)
            .flat_map(|i| (0..n_feat).map(move |k| (i, k)))
            .filter(|&(i, k)| mask[i][k])
            .map(|(i, k)| i * n_feat + k)
            .collect();
        Ok(ModelSpec { alternatives, features, mask, base, free })
    }

    /// Convenience constructor from `(feature, [alternatives it enters])` pairs.
    pub fn from_feature_lists(alternatives: &[&str], features: &[(&str, &[&str])], base: &str) -> Result<Self> {
        let alts: Vec<String> = alternatives.iter().map(|s| s.to_string()).collect();
        let base = alts
            .iter()
            .position(|a| a == base)
            .ok_or_else(|| Error::Spec(format!("unknown base alternative `{base}`")))?;
        let mut mask = vec![vec![false; features.len()]; alts.len()];
        for (k, (fname, enters)) in features.iter().enumerate() {
            for alt in enters.iter() {
                let i = alts
                    .iter()
                    .position(|a| a == alt)
                    .ok_or_else(|| Error::Spec(format!("feature `{fname}` names unknown alternative `{alt}`")))?;
                mask[i][k] = true;
            }
        }
        let feats = features.iter().map(|(f, _)| f.to_string()).collect();
        ModelSpec::new(alts, feats, mask, base)
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternatives.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn alternatives(&self) -> &[String] {
        &self.alternatives
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn includes(&self, alternative: usize, feature: usize) -> bool {
        self.mask[alternative][feature]
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    /// Flat (row-major) indices of the free coefficients.
    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn alternative_index(&self, name: &str) -> Option<usize> {
        self.alternatives.iter().position(|a| a == name)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }
}

/// One decision maker: shared features, the alternatives they could choose, and the choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceObservation {
    x: Vec<f64>,
    available: Vec<usize>,
    chosen: usize,
}

impl ChoiceObservation {
    /// `available` is sorted and deduplicated; it must hold at least two
    /// alternatives including `chosen`.
    pub fn new(x: Vec<f64>, mut available: Vec<usize>, chosen: usize) -> Result<Self> {
        available.sort_unstable();
        available.dedup();
        if available.len() < 2 {
            return Err(Error::InvalidArgument("an observation needs at least two available alternatives".into()));
        }
        if !available.contains(&chosen) {
            return Err(Error::InvalidArgument(format!("chosen alternative {chosen} is not available")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        Ok(ChoiceObservation { x, available, chosen })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn available(&self) -> &[usize] {
        &self.available
    }

    pub fn chosen(&self) -> usize {
        self.chosen
    }

    pub fn is_available(&self, alternative: usize) -> bool {
        self.available.binary_search(&alternative).is_ok()
    }

    /// Position of the chosen alternative inside `available()`.
    pub fn chosen_slot(&self) -> usize {
        self.available.binary_search(&self.chosen).expect("chosen alternative is available by construction")
    }

    pub fn with_chosen(&self, chosen: usize) -> Result<Self> {
        ChoiceObservation::new(self.x.clone(), self.available.clone(), chosen)
    }

    pub fn with_x(&self, x: Vec<f64>) -> Result<Self> {
        if x.len() != self.x.len() {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.x.len(), x.len())));
        }
        ChoiceObservation::new(x, self.available.clone(), self.chosen)
    }
}

/// An ordered collection of observations sharing one feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    feature_names: Vec<String>,
    observations: Vec<ChoiceObservation>,
}

impl ChoiceDataset {
    pub fn new(feature_names: Vec<String>, observations: Vec<ChoiceObservation>) -> Result<Self> {
        let k = feature_names.len();
        if let Some((n, obs)) = observations.iter().enumerate().find(|(_, o)| o.x.len() != k) {
            return Err(Error::Dimension(format!("observation {n} has {} features, expected {k}", obs.x.len())));
        }
        Ok(ChoiceDataset { feature_names, observations })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn observations(&self) -> &[ChoiceObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ChoiceObservation> {
        self.observations.iter()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> ChoiceDataset {
        ChoiceDataset {
            feature_names: self.feature_names.clone(),
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
        }
    }

    /// Column means of the feature matrix (zero vector for an empty dataset).
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_features()];
        if self.is_empty() {
            return means;
        }
        for obs in &self.observations {
            for (m, v) in means.iter_mut().zip(&obs.x) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Checks the dataset layout against a model specification.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.n_features() != spec.n_features() {
            return Err(Error::Dimension(format!(
                "dataset has {} features, model has {}",
                self.n_features(),
                spec.n_features()
            )));
        }
        let c = spec.n_alternatives();
        for (n, obs) in self.observations.iter().enumerate() {
            if obs.available.iter().any(|&i| i >= c) {
                return Err(Error::Dimension(format!(
                    "observation {n} references an alternative beyond the {c} in the model"
                )));
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a ChoiceDataset {
    type Item = &'a ChoiceObservation;
    type IntoIter = std::slice::Iter<'a, ChoiceObservation>;
    fn into_iter(self) -> Self::IntoIter {
        self.observations.iter()
    }
}

/// Per-alternative coefficient vectors stored as a row-major `|C| x |K|` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Coefficients {
    n_alternatives: usize,
    n_features: usize,
    values: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Coefficients {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Coefficients::from_rows(rows)
    }
}

impl From<Coefficients> for Vec<Vec<f64>> {
    fn from(beta: Coefficients) -> Self {
        beta.rows()
    }
}

impl Coefficients {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Coefficients::zeros_shape(spec.n_alternatives(), spec.n_features())
    }

    pub fn zeros_shape(n_alternatives: usize, n_features: usize) -> Self {
        Coefficients { n_alternatives, n_features, values: vec![0.0; n_alternatives * n_features] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_alternatives = rows.len();
        let n_features = rows.first().map_or(0, Vec::len);
        if n_alternatives == 0 || n_features == 0 || rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::Dimension("coefficient rows must be non-empty and of equal length".into()));
        }
        Ok(Coefficients { n_alternatives, n_features, values: rows.into_iter().flatten().collect() })
    }

    /// Builds coefficients from the packed free-coordinate vector of `spec`.
    pub fn from_free(spec: &ModelSpec, free: &[f64]) -> Self {
        let mut beta = Coefficients::zeros(spec);
        for (&idx, &v) in spec.free_indices().iter().zip(free) {
            beta.values[idx] = v;
        }
        beta
    }

    /// Packs the free coordinates of `spec` into a vector.
    pub fn free_values(&self, spec: &ModelSpec) -> Vec<f64> {
        spec.free_indices().iter().map(|&i| self.values[i]).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_alternatives, self.n_features)
    }

    pub fn get(&self, alternative: usize, feature: usize) -> f64 {
        self.values[alternative * self.n_features + feature]
    }

    pub fn set(&mut self, alternative: usize, feature: usize, value: f64) {
        self.values[alternative * self.n_features + feature] = value;
    }

    pub fn row(&self, alternative: usize) -> &[f64] {
        let k = self.n_features;
        &self.values[alternative * k..(alternative + 1) * k]
    }

    pub fn row_mut(&mut self, alternative: usize) -> &mut [f64] {
        let k = self.n_features;
        &mut self.values[alternative * k..(alternative + 1) * k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_alternatives).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Frobenius norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        crate::numeric::l2_norm(&self.values)
    }

    pub fn max_abs_diff(&self, other: &Coefficients) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        crate::numeric::max_abs(&self.values)
    }

    /// `beta_j - beta_i` written into `out`.
    pub fn difference_into(&self, j: usize, i: usize, out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(self.row(j)).zip(self.row(i)) {
            *o = a - b;
        }
    }

    /// Zeroes every coordinate pinned by the mask.
    pub fn apply_mask(&mut self, spec: &ModelSpec) {
        for i in 0..self.n_alternatives {
            for k in 0..self.n_features {
                if !spec.includes(i, k) {
                    self.set(i, k, 0.0);
                }
            }
        }
    }

    pub fn respects_mask(&self, spec: &ModelSpec) -> bool {
        (0..self.n_alternatives).all(|i| (0..self.n_features).all(|k| spec.includes(i, k) || self.get(i, k) == 0.0))
    }

    pub fn scaled(&self, factor: f64) -> Coefficients {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

pub(crate) fn check_beta(spec: &ModelSpec, beta: &Coefficients) -> Result<()> {
    if beta.shape() != (spec.n_alternatives(), spec.n_features()) {
        return Err(Error::Dimension(format!(
            "coefficients are {:?}, model is {}x{}",
            beta.shape(),
            spec.n_alternatives(),
            spec.n_features()
        )));
    }
    if !beta.respects_mask(spec) {
        return Err(Error::InvalidArgument("coefficients are non-zero on masked coordinates".into()));
    }
    Ok(())
}

pub(crate) fn check_observation(spec: &ModelSpec, obs: &ChoiceObservation) -> Result<()> {
    if obs.x.len() != spec.n_features() {
        return Err(Error::Dimension(format!(
            "observation has {} features, model has {}",
            obs.x.len(),
            spec.n_features()
        )));
    }
    if obs.available.iter().any(|&i| i >= spec.n_alternatives()) {
        return Err(Error::Dimension("observation references an unknown alternative".into()));
    }
    Ok(())
}

pub(crate) fn check_inputs(spec: &ModelSpec, beta: &Coefficients, data: &ChoiceDataset) -> Result<()> {
    check_beta(spec, beta)?;
    data.check_spec(spec)
}

/// Utilities `beta_i^T x` for the available alternatives, in availability order.
/// Unchecked; callers validate dimensions.
pub(crate) fn utilities_unchecked(beta: &Coefficients, obs: &ChoiceObservation) -> Vec<f64> {
    obs.available.iter().map(|&i| dot(beta.row(i), &obs.x)).collect()
}

/// Log-probabilities over the available alternatives, in availability order.
pub(crate) fn log_probabilities_unchecked(beta: &Coefficients, obs: &ChoiceObservation) -> Vec<f64> {
    let mut u = utilities_unchecked(beta, obs);
    let lse = log_sum_exp(&u);
    u.iter_mut().for_each(|v| *v -= lse);
    u
}

pub fn systematic_utilities(spec: &ModelSpec, beta: &Coefficients, obs: &ChoiceObservation) -> Result<Vec<f64>> {
    check_beta(spec, beta)?;
    check_observation(spec, obs)?;
    Ok(utilities_unchecked(beta, obs))
}

/// Logit probabilities over all `|C|` alternatives; unavailable ones are exactly 0.
pub fn choice_probabilities(spec: &ModelSpec, beta: &Coefficients, obs: &ChoiceObservation) -> Result<Vec<f64>> {
    check_beta(spec, beta)?;
    check_observation(spec, obs)?;
    Ok(full_probabilities_unchecked(spec.n_alternatives(), beta, obs))
}

pub(crate) fn full_probabilities_unchecked(
    n_alternatives: usize,
    beta: &Coefficients,
    obs: &ChoiceObservation,
) -> Vec<f64> {
    let u = utilities_unchecked(beta, obs);
    let mut p = vec![0.0; u.len()];
    softmax_into(&u, &mut p);
    let mut full = vec![0.0; n_alternatives];
    for (&i, pi) in obs.available.iter().zip(p) {
        full[i] = pi;
    }
    full
}

pub fn log_likelihood(spec: &ModelSpec, beta: &Coefficients, data: &ChoiceDataset) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    Ok(log_likelihood_unchecked(beta, data))
}

/// Identical to [`log_likelihood`]; the metric used to score fitted models on any dataset.
pub fn eval_log_likelihood(spec: &ModelSpec, beta: &Coefficients, data: &ChoiceDataset) -> Result<f64> {
    log_likelihood(spec, beta, data)
}

pub(crate) fn log_likelihood_unchecked(beta: &Coefficients, data: &ChoiceDataset) -> f64 {
    data.iter()
        .map(|obs| {
            let u = utilities_unchecked(beta, obs);
            u[obs.chosen_slot()] - log_sum_exp(&u)
        })
        .sum()
}

/// Score of the log-likelihood; masked coordinates are exactly zero.
pub fn log_likelihood_gradient(spec: &ModelSpec, beta: &Coefficients, data: &ChoiceDataset) -> Result<Coefficients> {
    check_inputs(spec, beta, data)?;
    let mut grad = Coefficients::zeros(spec);
    log_likelihood_gradient_into(beta, data, &mut grad);
    grad.apply_mask(spec);
    Ok(grad)
}

/// Accumulates the (unmasked) score into `grad`.
pub(crate) fn log_likelihood_gradient_into(beta: &Coefficients, data: &ChoiceDataset, grad: &mut Coefficients) {
    let mut p = Vec::new();
    for obs in data {
        let u = utilities_unchecked(beta, obs);
        p.resize(u.len(), 0.0);
        softmax_into(&u, &mut p);
        for (slot, &i) in obs.available.iter().enumerate() {
            let coef = if i == obs.chosen { 1.0 } else { 0.0 } - p[slot];
            for (g, x) in grad.row_mut(i).iter_mut().zip(&obs.x) {
                *g += coef * x;
            }
        }
    }
}

/// Predicted alternative: highest probability, ties to the lowest alternative index.
pub fn predicted_alternative(beta: &Coefficients, obs: &ChoiceObservation) -> usize {
    let u = utilities_unchecked(beta, obs);
    let mut best = 0;
    for slot in 1..u.len() {
        // Availability is sorted, so strict comparison keeps the lowest index on ties.
        if u[slot] > u[best] {
            best = slot;
        }
    }
    obs.available[best]
}

/// Fraction of observations whose predicted alternative equals the chosen one.
pub fn accuracy(spec: &ModelSpec, beta: &Coefficients, data: &ChoiceDataset) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits = data.iter().filter(|obs| predicted_alternative(beta, obs) == obs.chosen).count();
    Ok(hits as f64 / data.len() as f64)
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn zero_beta_gives_zero_utilities() {
        let spec = generic_spec(3, 2);
        let beta = Coefficients::zeros(&spec);
        let u = systematic_utilities(&spec, &beta, &obs(&[3.0, -1.0], &[0, 1, 2], 1)).unwrap();
        assert_eq!(u, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn utilities_are_dot_products() {
        let spec = ModelSpec::new(
            vec!["a".into(), "b".into()],
            vec!["x0".into(), "x1".into()],
            vec![vec![true, false], vec![false, true]],
            1,
        )
        .unwrap();
        let beta = Coefficients::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let u = systematic_utilities(&spec, &beta, &obs(&[1.0, 1.0], &[0, 1], 0)).unwrap();
        assert_eq!(u, vec![1.0, 0.0]);

        // beta = (2, -1) on the free alternative, x = (0.5, 1) -> utility 0
        let free = generic_spec(2, 2);
        let b = Coefficients::from_rows(vec![vec![0.0, 0.0], vec![2.0, -1.0]]).unwrap();
        let u = systematic_utilities(&free, &b, &obs(&[0.5, 1.0], &[0, 1], 0)).unwrap();
        assert_eq!(u[1], 0.0);
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let spec = generic_spec(3, 2);
        let beta = Coefficients::zeros(&spec);
        let err = systematic_utilities(&spec, &beta, &obs(&[1.0, 2.0, 3.0], &[0, 1], 0));
        assert!(matches!(err, Err(Error::Dimension(_))));
        let wrong = Coefficients::zeros_shape(2, 2);
        assert!(matches!(systematic_utilities(&spec, &wrong, &obs(&[1.0, 2.0], &[0, 1], 0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn masked_nonzero_beta_is_rejected() {
        let spec = generic_spec(2, 1);
        let beta = Coefficients::from_rows(vec![vec![1.0], vec![0.0]]).unwrap();
        assert!(matches!(
            log_likelihood(&spec, &beta, &dataset(1, vec![obs(&[1.0], &[0, 1], 0)])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn probabilities_examples() {
        let spec = generic_spec(3, 1);
        let beta = Coefficients::zeros(&spec);
        let p = choice_probabilities(&spec, &beta, &obs(&[2.0], &[0, 1, 2], 0)).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let spec = binary_spec(1);
        let beta = Coefficients::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        let p = choice_probabilities(&spec, &beta, &obs(&[1.0], &[0, 1], 0)).unwrap();
        let e = std::f64::consts::E;
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - 0.73106).abs() < 1e-5);
        assert!((p[0] - 0.26894).abs() < 1e-5);

        let spec = generic_spec(3, 1);
        let beta = Coefficients::from_rows(vec![vec![0.0], vec![0.4], vec![2.0]]).unwrap();
        let p = choice_probabilities(&spec, &beta, &obs(&[1.0], &[0, 1], 0)).unwrap();
        assert_eq!(p[2], 0.0);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_examples() {
        let spec = binary_spec(1);
        let beta = Coefficients::zeros(&spec);
        let data = dataset(1, vec![obs(&[1.0], &[0, 1], 0)]);
        assert!((log_likelihood(&spec, &beta, &data).unwrap() - 0.5f64.ln()).abs() < 1e-15);

        let spec3 = generic_spec(3, 1);
        let data3 = dataset(1, vec![obs(&[1.0], &[0, 1, 2], 0), obs(&[-2.0], &[0, 1, 2], 2)]);
        let ll = log_likelihood(&spec3, &Coefficients::zeros(&spec3), &data3).unwrap();
        assert!((ll - (-2.19722)).abs() < 1e-5);

        let beta = Coefficients::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        let data = dataset(1, vec![obs(&[1.0], &[0, 1], 1)]);
        assert!((log_likelihood(&spec, &beta, &data).unwrap() - (-0.31326)).abs() < 1e-5);
    }

    #[test]
    fn log_likelihood_stays_finite_for_huge_utilities() {
        let spec = binary_spec(1);
        let beta = Coefficients::from_rows(vec![vec![0.0], vec![500.0]]).unwrap();
        let data = dataset(1, vec![obs(&[10.0], &[0, 1], 0)]);
        let ll = log_likelihood(&spec, &beta, &data).unwrap();
        assert!(ll.is_finite());
        assert!((ll + 5000.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_example_and_mask() {
        let spec = binary_spec(1);
        let data = dataset(1, vec![obs(&[1.0], &[0, 1], 1)]);
        let g = log_likelihood_gradient(&spec, &Coefficients::zeros(&spec), &data).unwrap();
        assert_eq!(g.get(1, 0), 0.5);
        assert_eq!(g.get(0, 0), 0.0);
    }

    #[test]
    fn accuracy_tie_break_and_hand_example() {
        // Probabilities (0.7, 0.3), (0.4, 0.6), (0.5, 0.5) with chosen (first, first, second).
        let spec = binary_spec(3);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let beta = Coefficients::from_rows(vec![vec![0.0; 3], vec![1.0, 1.0, 1.0]]).unwrap();
        let data = dataset(
            3,
            vec![
                obs(&[logit(0.3), 0.0, 0.0], &[0, 1], 0),
                obs(&[0.0, logit(0.6), 0.0], &[0, 1], 0),
                obs(&[0.0, 0.0, 0.0], &[0, 1], 1),
            ],
        );
        // obs 1 correct, obs 2 wrong, obs 3 wrong (tie goes to alternative 0).
        let acc = accuracy(&spec, &beta, &data).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);

        let zero = Coefficients::zeros(&spec);
        let data = dataset(
            3,
            vec![
                obs(&[1.0, 0.0, 0.0], &[0, 1], 0),
                obs(&[1.0, 0.0, 0.0], &[0, 1], 1),
                obs(&[1.0, 0.0, 0.0], &[0, 1], 0),
                obs(&[1.0, 0.0, 0.0], &[0, 1], 1),
            ],
        );
        assert_eq!(accuracy(&spec, &zero, &data).unwrap(), 0.5);
    }

    #[test]
    fn perfect_ranking_gives_accuracy_one() {
        let spec = binary_spec(1);
        let beta = Coefficients::from_rows(vec![vec![0.0], vec![3.0]]).unwrap();
        let data = dataset(1, vec![obs(&[1.0], &[0, 1], 1), obs(&[-1.0], &[0, 1], 0), obs(&[0.2], &[0, 1], 1)]);
        assert_eq!(accuracy(&spec, &beta, &data).unwrap(), 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(vec!["a".into()], vec!["x".into()], vec![vec![true]], 0).is_err());
        // feature entering every alternative is not identified
        assert!(
            ModelSpec::new(vec!["a".into(), "b".into()], vec!["x".into()], vec![vec![true], vec![true]], 0).is_err()
        );
        // feature entering none
        assert!(ModelSpec::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![vec![false, false], vec![true, false]],
            0
        )
        .is_err());
        let spec =
            ModelSpec::from_feature_lists(&["walk", "bus"], &[("walk_time", &["walk"]), ("asc_bus", &["bus"])], "walk")
                .unwrap();
        assert_eq!(spec.n_free(), 2);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn observation_validation() {
        assert!(ChoiceObservation::new(vec![1.0], vec![0], 0).is_err());
        assert!(ChoiceObservation::new(vec![1.0], vec![0, 1], 2).is_err());
        assert!(ChoiceObservation::new(vec![f64::NAN], vec![0, 1], 1).is_err());
        let o = ChoiceObservation::new(vec![1.0], vec![2, 0, 2], 2).unwrap();
        assert_eq!(o.available(), &[0, 2]);
        assert_eq!(o.chosen_slot(), 1);
    }
}
