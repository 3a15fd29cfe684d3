//! Robust counterparts under bounded feature perturbations.
//!
//! Each observation's features may move inside an ℓp ball of radius `rho_n`
//! (or an intersection of several balls). The worst case of a linear utility
//! difference over the ball is `rho_n · ‖β_j − β_I‖_q` with `q` the dual order,
//! which turns the max-min estimation problem into
//!
//! ```text
//! Σ_n −log Σ_{j∈C_n} exp((β_j − β_{I_n})ᵀ x_n + rho_n ‖β_j − β_{I_n}‖_q)
//! ```
//!
//! For two alternatives this is the exact robust counterpart; with more
//! alternatives it is a lower bound of the exact robust objective (the penalty
//! is pushed inside the log-sum-exp). [`exact_worst_case_oracle`] evaluates the
//! exact inner maximization for validation, and [`rf_upper_bound_objective`]
//! closes the sandwich from above.
//!
//! With several constraints the dual norm becomes an infimal convolution and
//! the utility difference is split into pieces `w^{(m)}` with
//! `Σ_m w^{(m)} = β_j − β_I`; see [`NormSplit`]. The best split for a given β
//! comes from [`optimal_split`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_beta, check_inputs, check_observation, utilities_unchecked, ChoiceDataset, ChoiceObservation, Coefficients,
    ModelSpec,
};
use crate::norms::{check_radius, NormOrder};
use crate::numeric::{dot, log_sum_exp, softmax_into};

mod intersection;

/// Per-sample perturbation radius: one broadcast value or one value per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Radius {
    Uniform(f64),
    PerSample(Vec<f64>),
}

impl Radius {
    pub fn at(&self, n: usize) -> f64 {
        match self {
            Radius::Uniform(r) => *r,
            Radius::PerSample(v) => v[n],
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |r: f64| {
            check_radius(r)?;
            if r.is_infinite() {
                return Err(Error::InvalidArgument("radius must be finite".into()));
            }
            Ok(())
        };
        match self {
            Radius::Uniform(r) => check(*r),
            Radius::PerSample(v) => v.iter().try_for_each(|r| check(*r)),
        }
    }

    fn check_len(&self, n_obs: usize) -> Result<()> {
        match self {
            Radius::PerSample(v) if v.len() != n_obs => {
                Err(Error::Dimension(format!("{} per-sample radii for {n_obs} observations", v.len())))
            }
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Radius::Uniform(r) => *r == 0.0,
            Radius::PerSample(v) => v.iter().all(|r| *r == 0.0),
        }
    }
}

/// `‖Δx_n‖_p <= rho_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormConstraint {
    pub p: NormOrder,
    pub rho: Radius,
}

impl NormConstraint {
    /// Order of the dual norm that appears in the penalty.
    pub fn q(&self) -> NormOrder {
        self.p.dual()
    }
}

/// The feature-side uncertainty set: one or more norm-ball constraints per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NormConstraint>", into = "Vec<NormConstraint>")]
pub struct FeatureUncertainty {
    constraints: Vec<NormConstraint>,
}

impl TryFrom<Vec<NormConstraint>> for FeatureUncertainty {
    type Error = Error;
    fn try_from(constraints: Vec<NormConstraint>) -> Result<Self> {
        FeatureUncertainty::new(constraints)
    }
}

impl From<FeatureUncertainty> for Vec<NormConstraint> {
    fn from(u: FeatureUncertainty) -> Self {
        u.constraints
    }
}

impl FeatureUncertainty {
    pub fn new(constraints: Vec<NormConstraint>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::InvalidArgument("feature uncertainty needs at least one norm constraint".into()));
        }
        constraints.iter().try_for_each(|c| c.rho.validate())?;
        Ok(FeatureUncertainty { constraints })
    }

    /// A single ℓp ball with the same radius for every sample.
    pub fn single(p: NormOrder, rho: f64) -> Result<Self> {
        FeatureUncertainty::new(vec![NormConstraint { p, rho: Radius::Uniform(rho) }])
    }

    pub fn constraints(&self) -> &[NormConstraint] {
        &self.constraints
    }

    pub fn is_single(&self) -> bool {
        self.constraints.len() == 1
    }

    pub fn is_zero(&self) -> bool {
        self.constraints.iter().all(|c| c.rho.is_zero())
    }

    pub(crate) fn check_len(&self, n_obs: usize) -> Result<()> {
        self.constraints.iter().try_for_each(|c| c.rho.check_len(n_obs))
    }

    pub(crate) fn single_constraint(&self) -> Result<&NormConstraint> {
        if !self.is_single() {
            return Err(Error::InvalidArgument(format!(
                "{} norm constraints given; use the multi-norm objective",
                self.constraints.len()
            )));
        }
        Ok(&self.constraints[0])
    }
}

/// Split of every utility difference `β_j − β_{I_n}` into one piece per norm constraint.
///
/// Indexed `[n][slot][m][k]`, where `slot` enumerates the available alternatives
/// of observation `n` other than the chosen one, in increasing index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSplit {
    pieces: Vec<Vec<Vec<Vec<f64>>>>,
}

impl NormSplit {
    /// Every piece equals `(β_j − β_{I_n}) / n_constraints`.
    pub fn equal_split(beta: &Coefficients, data: &ChoiceDataset, n_constraints: usize) -> Self {
        let k = beta.shape().1;
        let share = 1.0 / n_constraints as f64;
        let pieces = data
            .iter()
            .map(|obs| {
                others(obs)
                    .map(|(_, j)| {
                        let mut v = vec![0.0; k];
                        beta.difference_into(j, obs.chosen(), &mut v);
                        v.iter_mut().for_each(|x| *x *= share);
                        vec![v; n_constraints]
                    })
                    .collect()
            })
            .collect();
        NormSplit { pieces }
    }

    pub fn from_pieces(pieces: Vec<Vec<Vec<Vec<f64>>>>) -> Self {
        NormSplit { pieces }
    }

    pub fn pieces(&self) -> &[Vec<Vec<Vec<f64>>>] {
        &self.pieces
    }

    #[cfg(test)]
    pub(crate) fn pieces_mut(&mut self) -> &mut [Vec<Vec<Vec<f64>>>] {
        &mut self.pieces
    }

    pub fn piece(&self, n: usize, slot: usize, m: usize) -> &[f64] {
        &self.pieces[n][slot][m]
    }

    /// Largest absolute violation of `Σ_m w^{(m)} = β_j − β_{I_n}`.
    pub fn max_violation(&self, beta: &Coefficients, data: &ChoiceDataset) -> f64 {
        let k = beta.shape().1;
        let mut v = vec![0.0; k];
        let mut worst: f64 = 0.0;
        for (obs, per_obs) in data.iter().zip(&self.pieces) {
            for ((_, j), per_slot) in others(obs).zip(per_obs) {
                beta.difference_into(j, obs.chosen(), &mut v);
                for (kk, target) in v.iter().enumerate() {
                    let sum: f64 = per_slot.iter().map(|w| w[kk]).sum();
                    worst = worst.max((sum - target).abs());
                }
            }
        }
        worst
    }

    fn check_shape(&self, data: &ChoiceDataset, n_constraints: usize, k: usize) -> Result<()> {
        let ok = self.pieces.len() == data.len()
            && data.iter().zip(&self.pieces).all(|(obs, per_obs)| {
                per_obs.len() == obs.available().len() - 1
                    && per_obs.iter().all(|s| s.len() == n_constraints && s.iter().all(|w| w.len() == k))
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("norm split does not match the dataset, constraint count, or feature count".into()))
        }
    }
}

/// `(slot in availability, alternative)` for every available alternative except the chosen one.
pub(crate) fn others(obs: &ChoiceObservation) -> impl Iterator<Item = (usize, usize)> + '_ {
    let chosen = obs.chosen();
    obs.available().iter().copied().enumerate().filter(move |&(_, j)| j != chosen)
}

/// Nominal per-observation log-probability of the chosen alternative and its score.
fn nominal_term(beta: &Coefficients, obs: &ChoiceObservation, grad: Option<&mut Coefficients>) -> f64 {
    let u = utilities_unchecked(beta, obs);
    let lse = log_sum_exp(&u);
    if let Some(grad) = grad {
        for (slot, &i) in obs.available().iter().enumerate() {
            let coef = if i == obs.chosen() { 1.0 } else { 0.0 } - (u[slot] - lse).exp();
            for (g, x) in grad.row_mut(i).iter_mut().zip(obs.x()) {
                *g += coef * x;
            }
        }
    }
    u[obs.chosen_slot()] - lse
}

/// One observation's single-norm robust term `−log Σ_j exp(a_j)`; accumulates its
/// supergradient into `grad` when given. `rho == 0` is evaluated as the nominal term.
pub(crate) fn rf_term(
    beta: &Coefficients,
    obs: &ChoiceObservation,
    q: NormOrder,
    rho: f64,
    grad: Option<&mut Coefficients>,
) -> f64 {
    if rho == 0.0 {
        return nominal_term(beta, obs, grad);
    }
    let k = obs.x().len();
    let u = utilities_unchecked(beta, obs);
    let chosen_slot = obs.chosen_slot();
    let mut a = vec![0.0; u.len()];
    let mut diffs = vec![vec![0.0; k]; u.len()];
    for (slot, j) in others(obs) {
        beta.difference_into(j, obs.chosen(), &mut diffs[slot]);
        a[slot] = u[slot] - u[chosen_slot] + rho * q.norm(&diffs[slot]);
    }
    let mut p = vec![0.0; a.len()];
    let lse = softmax_into(&a, &mut p);
    if let Some(grad) = grad {
        let mut g = vec![0.0; k];
        for (slot, j) in others(obs) {
            q.gradient_into(&diffs[slot], &mut g);
            let c = -p[slot];
            for (kk, (x, gk)) in obs.x().iter().zip(&g).enumerate() {
                let d = c * (x + rho * gk);
                grad.row_mut(j)[kk] += d;
                grad.row_mut(obs.chosen())[kk] -= d;
            }
        }
    }
    -lse
}

/// One observation's multi-norm term with explicit pieces `pieces[slot][m]`.
fn rf_multi_term(
    beta: &Coefficients,
    obs: &ChoiceObservation,
    pieces: &[Vec<Vec<f64>>],
    orders: &[NormOrder],
    radii: &[f64],
) -> f64 {
    if radii.iter().all(|r| *r == 0.0) {
        return nominal_term(beta, obs, None);
    }
    let u = utilities_unchecked(beta, obs);
    let chosen_slot = obs.chosen_slot();
    let mut a = vec![0.0; u.len()];
    for (idx, (slot, _)) in others(obs).enumerate() {
        let penalty: f64 = pieces[idx].iter().zip(orders).zip(radii).map(|((w, q), r)| r * q.norm(w)).sum();
        a[slot] = u[slot] - u[chosen_slot] + penalty;
    }
    -log_sum_exp(&a)
}

/// Robust-feature objective for a single norm constraint.
pub fn rf_objective(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let c = budget.single_constraint()?;
    let q = c.q();
    Ok(data.iter().enumerate().map(|(n, obs)| rf_term(beta, obs, q, c.rho.at(n), None)).sum())
}

/// Supergradient of [`rf_objective`]; the norm subgradient at the origin is zero.
pub fn rf_subgradient(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<Coefficients> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let c = budget.single_constraint()?;
    let q = c.q();
    let mut grad = Coefficients::zeros(spec);
    for (n, obs) in data.iter().enumerate() {
        rf_term(beta, obs, q, c.rho.at(n), Some(&mut grad));
    }
    grad.apply_mask(spec);
    Ok(grad)
}

/// Robust-feature objective with several norm constraints and an explicit split.
pub fn rf_objective_multi(
    spec: &ModelSpec,
    beta: &Coefficients,
    split: &NormSplit,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let m = budget.constraints().len();
    split.check_shape(data, m, spec.n_features())?;
    let tol = 1e-9 * beta.max_abs().max(1.0);
    let violation = split.max_violation(beta, data);
    if violation > tol {
        return Err(Error::InvalidArgument(format!(
            "norm split violates the decomposition constraint by {violation:e}"
        )));
    }
    let orders: Vec<NormOrder> = budget.constraints().iter().map(NormConstraint::q).collect();
    let mut radii = vec![0.0; m];
    Ok(data
        .iter()
        .enumerate()
        .map(|(n, obs)| {
            for (r, c) in radii.iter_mut().zip(budget.constraints()) {
                *r = c.rho.at(n);
            }
            rf_multi_term(beta, obs, &split.pieces[n], &orders, &radii)
        })
        .sum())
}

impl FeatureUncertainty {
    /// `(p_m, ρ_{n,m})` for observation `n`.
    pub(crate) fn balls_at(&self, n: usize) -> Vec<(NormOrder, f64)> {
        self.constraints.iter().map(|c| (c.p, c.rho.at(n))).collect()
    }
}

/// One observation's multi-norm term with the best split for every difference.
pub(crate) fn rf_multi_optimal_term(
    beta: &Coefficients,
    obs: &ChoiceObservation,
    balls: &[(NormOrder, f64)],
    grad: Option<&mut Coefficients>,
) -> f64 {
    if balls.iter().any(|b| b.1 == 0.0) {
        return nominal_term(beta, obs, grad);
    }
    let k = obs.x().len();
    let u = utilities_unchecked(beta, obs);
    let chosen_slot = obs.chosen_slot();
    let mut a = vec![0.0; u.len()];
    let mut lambdas = vec![Vec::new(); u.len()];
    let mut diff = vec![0.0; k];
    for (slot, j) in others(obs) {
        beta.difference_into(j, obs.chosen(), &mut diff);
        let s = intersection::support(&diff, balls);
        a[slot] = u[slot] - u[chosen_slot] + s.value;
        lambdas[slot] = s.lambda;
    }
    let mut p = vec![0.0; a.len()];
    let lse = softmax_into(&a, &mut p);
    if let Some(grad) = grad {
        for (slot, j) in others(obs) {
            for (kk, (x, l)) in obs.x().iter().zip(&lambdas[slot]).enumerate() {
                let d = -p[slot] * (x + l);
                grad.row_mut(j)[kk] += d;
                grad.row_mut(obs.chosen())[kk] -= d;
            }
        }
    }
    -lse
}

/// The split minimizing every penalty `Σ_m ρ_m ‖w^{(m)}‖_{q_m}` for the given β.
///
/// Computed from the dual problem (maximize `λᵀ(β_j − β_I)` over the intersection
/// of the uncertainty balls); whenever one constraint dominates, the whole
/// difference is placed on its piece exactly.
pub fn optimal_split(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<NormSplit> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let mut diff = vec![0.0; spec.n_features()];
    let pieces = data
        .iter()
        .enumerate()
        .map(|(n, obs)| {
            let balls = budget.balls_at(n);
            others(obs)
                .map(|(_, j)| {
                    beta.difference_into(j, obs.chosen(), &mut diff);
                    intersection::support(&diff, &balls).pieces
                })
                .collect()
        })
        .collect();
    Ok(NormSplit { pieces })
}

/// Multi-norm objective maximized over the split, i.e. evaluated at [`optimal_split`].
pub fn rf_objective_multi_optimal(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    Ok(data.iter().enumerate().map(|(n, obs)| rf_multi_optimal_term(beta, obs, &budget.balls_at(n), None)).sum())
}

/// First-order expansion of the binary robust objective in the penalty:
/// `Σ log P_{n,I} − Σ (1 − P_{n,I}) · rho_n · ‖β_I − β_J‖_q`.
pub fn taylor_regularization_view(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let c = budget.single_constraint()?;
    let q = c.q();
    let mut diff = vec![0.0; spec.n_features()];
    let mut total = 0.0;
    for (n, obs) in data.iter().enumerate() {
        if obs.available().len() != 2 {
            return Err(Error::Unsupported(format!(
                "the regularization view is binary-only; observation {n} has {} alternatives",
                obs.available().len()
            )));
        }
        let log_p = nominal_term(beta, obs, None);
        let (_, other) = others(obs).next().expect("binary observation");
        beta.difference_into(obs.chosen(), other, &mut diff);
        total += log_p - (1.0 - log_p.exp()) * c.rho.at(n) * q.norm(&diff);
    }
    Ok(total)
}

/// Upper bound on the per-observation Jensen gap:
/// `|C_n| · rho_n · max_{i∈C_n} ‖β_i − β_{I_n}‖_q`.
pub fn jensen_gap_bound(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
    n: usize,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let c = budget.single_constraint()?;
    let obs = data
        .observations()
        .get(n)
        .ok_or_else(|| Error::InvalidArgument(format!("observation index {n} out of range")))?;
    let q = c.q();
    let mut diff = vec![0.0; spec.n_features()];
    let max_norm = others(obs).fold(0.0f64, |m, (_, j)| {
        beta.difference_into(j, obs.chosen(), &mut diff);
        m.max(q.norm(&diff))
    });
    Ok(obs.available().len() as f64 * c.rho.at(n) * max_norm)
}

/// `−max_{i∈C} Σ_{n: i∈C_n} [(β_i − β_{I_n})ᵀ x_n + rho_n ‖β_i − β_{I_n}‖_q]`,
/// an upper bound on the exact robust objective for every β.
pub fn rf_upper_bound_objective(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let c = budget.single_constraint()?;
    let q = c.q();
    let mut diff = vec![0.0; spec.n_features()];
    let mut sums = vec![0.0; spec.n_alternatives()];
    for (n, obs) in data.iter().enumerate() {
        for (_, i) in others(obs) {
            beta.difference_into(i, obs.chosen(), &mut diff);
            sums[i] += dot(&diff, obs.x()) + c.rho.at(n) * q.norm(&diff);
        }
    }
    // i = I_n contributes exactly zero for that observation
    let worst = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(-worst)
}

/// How [`exact_worst_case_oracle`] searches the perturbation ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMethod {
    /// Exact for the ℓ∞ ball: the convex inner function peaks at a vertex.
    VertexEnumeration,
    /// ℓ2 ball: random boundary samples and analytic starts refined by projected
    /// gradient ascent. Returns a lower bound on the true maximum.
    ProjectedAscent { samples: usize, seed: u64 },
}

const MAX_VERTEX_DIM: usize = 20;

/// `max_{‖Δ‖_p <= rho} log Σ_{j∈C_n} exp((β_j − β_{I_n})ᵀ (x + Δ))`.
pub fn exact_worst_case_oracle(
    spec: &ModelSpec,
    beta: &Coefficients,
    obs: &ChoiceObservation,
    p: NormOrder,
    rho: f64,
    method: OracleMethod,
) -> Result<f64> {
    check_beta(spec, beta)?;
    check_observation(spec, obs)?;
    check_radius(rho)?;
    let k = spec.n_features();
    let diffs: Vec<Vec<f64>> = obs
        .available()
        .iter()
        .map(|&j| {
            let mut v = vec![0.0; k];
            beta.difference_into(j, obs.chosen(), &mut v);
            v
        })
        .collect();
    let base: Vec<f64> = diffs.iter().map(|v| dot(v, obs.x())).collect();
    match method {
        OracleMethod::VertexEnumeration => {
            if !p.is_infinite() {
                return Err(Error::InvalidArgument(format!(
                    "vertex enumeration is exact only for the l-infinity ball, got p = {p}"
                )));
            }
            // coordinates where every difference vanishes do not move the objective
            let active: Vec<usize> = (0..k).filter(|&kk| diffs.iter().any(|v| v[kk] != 0.0)).collect();
            if active.len() > MAX_VERTEX_DIM {
                return Err(Error::TooLarge(format!(
                    "{} active coordinates exceed the vertex-enumeration limit of {MAX_VERTEX_DIM}",
                    active.len()
                )));
            }
            Ok(vertex_max(&diffs, &base, &active, rho))
        }
        OracleMethod::ProjectedAscent { samples, seed } => {
            if p != NormOrder::TWO {
                return Err(Error::InvalidArgument(format!(
                    "projected ascent is implemented for the l2 ball, got p = {p}"
                )));
            }
            Ok(l2_ascent_max(&diffs, &base, rho, samples, seed))
        }
    }
}

/// Exact robust objective `−Σ_n oracle_n` for a single-constraint budget.
pub fn exact_robust_objective(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
    method: OracleMethod,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    budget.check_len(data.len())?;
    let c = budget.single_constraint()?;
    let mut total = 0.0;
    for (n, obs) in data.iter().enumerate() {
        total -= exact_worst_case_oracle(spec, beta, obs, c.p, c.rho.at(n), method)?;
    }
    Ok(total)
}

/// Gray-code walk over the sign vertices of the box restricted to `active`.
fn vertex_max(diffs: &[Vec<f64>], base: &[f64], active: &[usize], rho: f64) -> f64 {
    // start at Δ = −rho on every active coordinate
    let mut shift: Vec<f64> = diffs.iter().map(|v| -rho * active.iter().map(|&kk| v[kk]).sum::<f64>()).collect();
    let mut signs = vec![-1.0; active.len()];
    let mut scores: Vec<f64> = base.iter().zip(&shift).map(|(b, s)| b + s).collect();
    let mut best = log_sum_exp(&scores);
    let total: u64 = 1 << active.len();
    for step in 1..total {
        let flip = step.trailing_zeros() as usize;
        let kk = active[flip];
        signs[flip] = -signs[flip];
        for (j, v) in diffs.iter().enumerate() {
            shift[j] += 2.0 * signs[flip] * rho * v[kk];
        }
        for ((s, b), sh) in scores.iter_mut().zip(base).zip(&shift) {
            *s = b + sh;
        }
        best = best.max(log_sum_exp(&scores));
    }
    best
}

fn l2_ascent_max(diffs: &[Vec<f64>], base: &[f64], rho: f64, samples: usize, seed: u64) -> f64 {
    let k = diffs.first().map_or(0, Vec::len);
    let value = |delta: &[f64]| -> f64 {
        let scores: Vec<f64> = diffs.iter().zip(base).map(|(v, b)| b + dot(v, delta)).collect();
        log_sum_exp(&scores)
    };
    if rho == 0.0 || k == 0 {
        return value(&vec![0.0; k]);
    }
    let project = |delta: &mut [f64]| {
        let norm = crate::numeric::l2_norm(delta);
        if norm > rho {
            delta.iter_mut().for_each(|d| *d *= rho / norm);
        }
    };
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; k]];
    for v in diffs {
        let norm = crate::numeric::l2_norm(v);
        if norm > 0.0 {
            starts.push(v.iter().map(|x| rho * x / norm).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let mut d: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let norm = crate::numeric::l2_norm(&d).max(f64::MIN_POSITIVE);
        d.iter_mut().for_each(|x| *x *= rho / norm);
        starts.push(d);
    }
    let mut ranked: Vec<(f64, Vec<f64>)> = starts.into_iter().map(|s| (value(&s), s)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = ranked[0].0;
    for (mut f, mut delta) in ranked.into_iter().take(4) {
        let mut step = rho;
        for _ in 0..500 {
            let scores: Vec<f64> = diffs.iter().zip(base).map(|(v, b)| b + dot(v, &delta)).collect();
            let mut w = vec![0.0; scores.len()];
            softmax_into(&scores, &mut w);
            let mut grad = vec![0.0; k];
            for (wj, v) in w.iter().zip(diffs) {
                for (g, x) in grad.iter_mut().zip(v) {
                    *g += wj * x;
                }
            }
            let gnorm = crate::numeric::l2_norm(&grad);
            if gnorm == 0.0 {
                break;
            }
            let mut improved = false;
            while step > 1e-12 * rho {
                let mut cand: Vec<f64> = delta.iter().zip(&grad).map(|(d, g)| d + step * g / gnorm).collect();
                project(&mut cand);
                let fc = value(&cand);
                if fc > f + 1e-15 {
                    delta = cand;
                    f = fc;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
            step = (step * 2.0).min(rho);
        }
        best = best.max(f);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::*;
    use crate::model::{log_likelihood, log_likelihood_gradient};

    fn l2(rho: f64) -> FeatureUncertainty {
        FeatureUncertainty::single(NormOrder::TWO, rho).unwrap()
    }

    fn sample_problem() -> (ModelSpec, Coefficients, ChoiceDataset) {
        let spec = generic_spec(3, 2);
        let beta = Coefficients::from_rows(vec![vec![0.0, 0.0], vec![0.7, -0.4], vec![-0.2, 1.1]]).unwrap();
        let data = dataset(
            2,
            vec![obs(&[1.0, 0.5], &[0, 1, 2], 1), obs(&[-0.3, 2.0], &[0, 1, 2], 0), obs(&[0.8, -1.0], &[0, 2], 2)],
        );
        (spec, beta, data)
    }

    #[test]
    fn zero_radius_reduces_to_log_likelihood() {
        let (spec, beta, data) = sample_problem();
        let ll = log_likelihood(&spec, &beta, &data).unwrap();
        assert_eq!(rf_objective(&spec, &beta, &data, &l2(0.0)).unwrap(), ll);
        let g = rf_subgradient(&spec, &beta, &data, &l2(0.0)).unwrap();
        assert_eq!(g, log_likelihood_gradient(&spec, &beta, &data).unwrap());
        assert_eq!(
            taylor_regularization_view(
                &binary_spec(2),
                &Coefficients::zeros(&binary_spec(2)),
                &dataset(2, vec![obs(&[1.0, 1.0], &[0, 1], 0)]),
                &l2(0.0)
            )
            .unwrap(),
            0.5f64.ln()
        );
    }

    #[test]
    fn binary_example_value() {
        // β_I − β_J = (1, 0), x = (1, 1), rho = 0.5, q = 2
        let spec = binary_spec(2);
        let beta = Coefficients::from_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let data = dataset(2, vec![obs(&[1.0, 1.0], &[0, 1], 1)]);
        let v = rf_objective(&spec, &beta, &data, &l2(0.5)).unwrap();
        let expected = -(1.0 + (-0.5f64).exp()).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - (-0.47408)).abs() < 1e-5);
    }

    #[test]
    fn binary_example_matches_dense_grid_over_ball() {
        // brute-force the inner minimum of log(1/(1+exp(-(1,0)·(x+Δ)))) over the ℓ2 ball
        let rho = 0.5;
        let mut worst = f64::INFINITY;
        let steps = 2000;
        for a in 0..steps {
            let theta = 2.0 * std::f64::consts::PI * a as f64 / steps as f64;
            for r in [rho, rho * 0.5, 0.0] {
                let dx = r * theta.cos();
                let s = 1.0 + dx; // (1,0)·((1,1) + Δ)
                worst = worst.min(-(1.0 + (-s).exp()).ln());
            }
        }
        assert!((worst - (-(1.0 + (-0.5f64).exp()).ln())).abs() < 1e-6);
    }

    #[test]
    fn equal_coefficients_give_minus_log_three() {
        let spec = generic_spec(3, 2);
        let beta = Coefficients::zeros(&spec);
        let data = dataset(2, vec![obs(&[4.0, -2.0], &[0, 1, 2], 2)]);
        for rho in [0.0, 0.3, 10.0] {
            let v = rf_objective(&spec, &beta, &data, &l2(rho)).unwrap();
            assert!((v + 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn multiple_constraints_require_multi_objective() {
        let (spec, beta, data) = sample_problem();
        let budget = FeatureUncertainty::new(vec![
            NormConstraint { p: NormOrder::TWO, rho: Radius::Uniform(0.1) },
            NormConstraint { p: NormOrder::INFINITY, rho: Radius::Uniform(0.1) },
        ])
        .unwrap();
        assert!(matches!(rf_objective(&spec, &beta, &data, &budget), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn penalty_is_nonincreasing_in_radius() {
        let (spec, beta, data) = sample_problem();
        let mut prev = f64::INFINITY;
        for rho in [0.0, 0.01, 0.1, 0.5, 2.0] {
            let v = rf_objective(&spec, &beta, &data, &l2(rho)).unwrap();
            assert!(v <= prev);
            assert!(v <= log_likelihood(&spec, &beta, &data).unwrap() + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn degenerate_split_matches_single_objective() {
        let (spec, beta, data) = sample_problem();
        let budget = l2(0.4);
        let split = NormSplit::equal_split(&beta, &data, 1);
        let multi = rf_objective_multi(&spec, &beta, &split, &data, &budget).unwrap();
        let single = rf_objective(&spec, &beta, &data, &budget).unwrap();
        assert!((multi - single).abs() < 1e-14);
    }

    #[test]
    fn infeasible_split_is_rejected() {
        let (spec, beta, data) = sample_problem();
        let budget = FeatureUncertainty::new(vec![
            NormConstraint { p: NormOrder::TWO, rho: Radius::Uniform(0.1) },
            NormConstraint { p: NormOrder::INFINITY, rho: Radius::Uniform(0.1) },
        ])
        .unwrap();
        let mut split = NormSplit::equal_split(&beta, &data, 2);
        split.pieces_mut()[0][0][0][0] += 1e-6;
        assert!(matches!(rf_objective_multi(&spec, &beta, &split, &data, &budget), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_radii_multi_is_nominal() {
        let (spec, beta, data) = sample_problem();
        let budget = FeatureUncertainty::new(vec![
            NormConstraint { p: NormOrder::TWO, rho: Radius::Uniform(0.0) },
            NormConstraint { p: NormOrder::ONE, rho: Radius::Uniform(0.0) },
        ])
        .unwrap();
        let split = NormSplit::equal_split(&beta, &data, 2);
        assert_eq!(
            rf_objective_multi(&spec, &beta, &split, &data, &budget).unwrap(),
            log_likelihood(&spec, &beta, &data).unwrap()
        );
    }

    fn ball_box(rho: f64, box_rho: f64) -> FeatureUncertainty {
        FeatureUncertainty::new(vec![
            NormConstraint { p: NormOrder::TWO, rho: Radius::Uniform(rho) },
            NormConstraint { p: NormOrder::INFINITY, rho: Radius::Uniform(box_rho) },
        ])
        .unwrap()
    }

    #[test]
    fn slack_box_split_matches_single_ball() {
        let (spec, beta, data) = sample_problem();
        let budget = ball_box(0.3, 1e3);
        let split = optimal_split(&spec, &beta, &data, &budget).unwrap();
        assert!(split.max_violation(&beta, &data) <= 1e-12);
        let multi = rf_objective_multi(&spec, &beta, &split, &data, &budget).unwrap();
        let single = rf_objective(&spec, &beta, &data, &l2(0.3)).unwrap();
        assert!((multi - single).abs() <= 1e-6);
        let best = rf_objective_multi_optimal(&spec, &beta, &data, &budget).unwrap();
        assert!((best - multi).abs() <= 1e-12);
        // the equal split is feasible but never better
        let equal = NormSplit::equal_split(&beta, &data, 2);
        assert!(rf_objective_multi(&spec, &beta, &equal, &data, &budget).unwrap() <= best + 1e-12);
    }

    #[test]
    fn optimal_multi_gradient_matches_finite_differences() {
        let (spec, beta, data) = sample_problem();
        let budget = ball_box(0.5, 0.2);
        let mut g = Coefficients::zeros(&spec);
        for (n, o) in data.iter().enumerate() {
            rf_multi_optimal_term(&beta, o, &budget.balls_at(n), Some(&mut g));
        }
        let h = 1e-5;
        for &idx in spec.free_indices() {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up.as_mut_slice()[idx] += h;
            dn.as_mut_slice()[idx] -= h;
            let fd = (rf_objective_multi_optimal(&spec, &up, &data, &budget).unwrap()
                - rf_objective_multi_optimal(&spec, &dn, &data, &budget).unwrap())
                / (2.0 * h);
            let an = g.as_slice()[idx];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "idx={idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn subgradient_at_zero_is_score() {
        let (spec, _, data) = sample_problem();
        let zero = Coefficients::zeros(&spec);
        let g = rf_subgradient(&spec, &zero, &data, &l2(0.7)).unwrap();
        let score = log_likelihood_gradient(&spec, &zero, &data).unwrap();
        assert!(g.max_abs_diff(&score) < 1e-15);
    }

    #[test]
    fn subgradient_matches_finite_differences() {
        let (spec, beta, data) = sample_problem();
        for p in [NormOrder::ONE, NormOrder::TWO, NormOrder::new(3.0).unwrap(), NormOrder::INFINITY] {
            let budget = FeatureUncertainty::single(p, 0.3).unwrap();
            let g = rf_subgradient(&spec, &beta, &data, &budget).unwrap();
            let h = 1e-5;
            for &idx in spec.free_indices() {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up.as_mut_slice()[idx] += h;
                dn.as_mut_slice()[idx] -= h;
                let fd = (rf_objective(&spec, &up, &data, &budget).unwrap()
                    - rf_objective(&spec, &dn, &data, &budget).unwrap())
                    / (2.0 * h);
                let an = g.as_slice()[idx];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "p={p} idx={idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn taylor_view_examples() {
        let spec = binary_spec(2);
        let data = dataset(2, vec![obs(&[1.0, -0.5], &[0, 1], 1), obs(&[0.2, 0.9], &[0, 1], 0)]);
        let zero = Coefficients::zeros(&spec);
        let ll0 = log_likelihood(&spec, &zero, &data).unwrap();
        assert_eq!(taylor_regularization_view(&spec, &zero, &data, &l2(0.4)).unwrap(), ll0);

        let beta = Coefficients::from_rows(vec![vec![0.0, 0.0], vec![0.8, -1.3]]).unwrap();
        let t = taylor_regularization_view(&spec, &beta, &data, &l2(1e-3)).unwrap();
        let r = rf_objective(&spec, &beta, &data, &l2(1e-3)).unwrap();
        assert!((t - r).abs() <= 1e-4);

        let (spec3, beta3, data3) = sample_problem();
        assert!(matches!(taylor_regularization_view(&spec3, &beta3, &data3, &l2(0.1)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn jensen_bound_examples() {
        let (spec, beta, data) = sample_problem();
        assert_eq!(jensen_gap_bound(&spec, &beta, &data, &l2(0.0), 0).unwrap(), 0.0);
        let zero = Coefficients::zeros(&spec);
        assert_eq!(jensen_gap_bound(&spec, &zero, &data, &l2(0.4), 1).unwrap(), 0.0);
        // |C_n| = 3, rho = 0.1, max norm 2 -> 0.6
        let beta = Coefficients::from_rows(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let v = jensen_gap_bound(&spec, &beta, &data, &l2(0.1), 1).unwrap();
        assert!((v - 0.6).abs() < 1e-15);
    }

    #[test]
    fn upper_bound_examples() {
        let (spec, beta, data) = sample_problem();
        let zero = Coefficients::zeros(&spec);
        assert_eq!(rf_upper_bound_objective(&spec, &zero, &data, &l2(0.5)).unwrap(), 0.0);

        let bspec = binary_spec(2);
        let bbeta = Coefficients::from_rows(vec![vec![0.0, 0.0], vec![0.5, -1.0]]).unwrap();
        let bdata = dataset(2, vec![obs(&[1.0, 1.0], &[0, 1], 0), obs(&[2.0, 0.0], &[0, 1], 1)]);
        // alt 1 sum: obs 0 (chosen 0): (0.5,-1)·(1,1) = -0.5; alt 0 sum: obs 1 (chosen 1): -(0.5,-1)·(2,0) = -1
        let ub = rf_upper_bound_objective(&bspec, &bbeta, &bdata, &l2(0.0)).unwrap();
        assert!((ub - 0.5).abs() < 1e-15);

        let budget = l2(0.3);
        let exact = exact_robust_objective(
            &spec,
            &beta,
            &data,
            &budget,
            OracleMethod::ProjectedAscent { samples: 200, seed: 1 },
        )
        .unwrap();
        assert!(rf_upper_bound_objective(&spec, &beta, &data, &budget).unwrap() >= exact);
        assert!(exact >= rf_objective(&spec, &beta, &data, &budget).unwrap());
    }

    #[test]
    fn oracle_zero_radius_is_nominal_inner_value() {
        let (spec, beta, data) = sample_problem();
        let obs0 = &data.observations()[0];
        let nominal = -nominal_term(&beta, obs0, None);
        for (p, method) in [
            (NormOrder::INFINITY, OracleMethod::VertexEnumeration),
            (NormOrder::TWO, OracleMethod::ProjectedAscent { samples: 10, seed: 3 }),
        ] {
            let v = exact_worst_case_oracle(&spec, &beta, obs0, p, 0.0, method).unwrap();
            assert!((v - nominal).abs() < 1e-14);
        }
    }

    #[test]
    fn oracle_is_exact_for_binary() {
        let spec = binary_spec(3);
        let beta = Coefficients::from_rows(vec![vec![0.0; 3], vec![0.4, -1.2, 0.3]]).unwrap();
        let data = dataset(3, vec![obs(&[0.5, 0.1, -2.0], &[0, 1], 0)]);
        let o = &data.observations()[0];
        for (p, method) in [
            (NormOrder::INFINITY, OracleMethod::VertexEnumeration),
            (NormOrder::TWO, OracleMethod::ProjectedAscent { samples: 50, seed: 9 }),
        ] {
            let budget = FeatureUncertainty::single(p, 0.35).unwrap();
            let exact = exact_worst_case_oracle(&spec, &beta, o, p, 0.35, method).unwrap();
            let rf = rf_objective(&spec, &beta, &data, &budget).unwrap();
            assert!((exact + rf).abs() < 1e-12, "p={p}: {exact} vs {}", -rf);
        }
    }

    #[test]
    fn oracle_vertex_sandwich_and_gap() {
        let (spec, beta, data) = sample_problem();
        let budget = FeatureUncertainty::single(NormOrder::INFINITY, 0.3).unwrap();
        for (n, o) in data.iter().enumerate() {
            let exact =
                exact_worst_case_oracle(&spec, &beta, o, NormOrder::INFINITY, 0.3, OracleMethod::VertexEnumeration)
                    .unwrap();
            let jensen = -rf_term(&beta, o, NormOrder::ONE, 0.3, None);
            assert!(jensen >= exact - 1e-12);
            let bound = jensen_gap_bound(&spec, &beta, &data, &budget, n).unwrap();
            assert!(jensen - exact <= bound + 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_wrong_norms() {
        let (spec, beta, data) = sample_problem();
        let o = &data.observations()[0];
        assert!(exact_worst_case_oracle(&spec, &beta, o, NormOrder::TWO, 0.1, OracleMethod::VertexEnumeration).is_err());
        assert!(exact_worst_case_oracle(
            &spec,
            &beta,
            o,
            NormOrder::ONE,
            0.1,
            OracleMethod::ProjectedAscent { samples: 1, seed: 0 }
        )
        .is_err());
    }
}
