//! Fisher-information traces, the prediction-error bound, and the Monte-Carlo
//! bias/variance decomposition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{simulate_dataset, SyntheticDesign};
use crate::model::{
    check_beta, check_inputs, full_probabilities_unchecked, utilities_unchecked, ChoiceDataset, ChoiceObservation,
    Coefficients, ModelSpec,
};
use crate::norms::NormOrder;
use crate::numeric::softmax_into;
use crate::optimizer::{Estimator, FitConfig};
use crate::robust_feature::{others, FeatureUncertainty, Radius};
use crate::robust_label::{inner_unchecked, LabelBudget};

/// Norms at or below this are treated as the kink at zero.
const KINK_TOL: f64 = 1e-8;

/// Robust and nominal traces side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub trace_mle: f64,
    pub trace_robust: f64,
    pub inequality_holds: bool,
    /// `ρ` for robust-feature reports (largest radius if per-sample), `Γ` for robust-label.
    pub rho_or_gamma: f64,
    /// Robust-label only: the worst-case selection had a tie at the evaluation point.
    pub tie: bool,
}

/// Trace contribution of one observation under the nominal model.
fn mle_observation_trace(spec: &ModelSpec, beta: &Coefficients, obs: &ChoiceObservation) -> f64 {
    let u = utilities_unchecked(beta, obs);
    let mut p = vec![0.0; u.len()];
    softmax_into(&u, &mut p);
    let mut trace = 0.0;
    for (slot, &i) in obs.available().iter().enumerate() {
        let w = p[slot] * (1.0 - p[slot]);
        for (k, x) in obs.x().iter().enumerate() {
            if spec.includes(i, k) {
                trace += w * x * x;
            }
        }
    }
    trace
}

/// Diagonal of the negative Hessian of the log-likelihood, summed over free coordinates.
pub fn fisher_trace_mle(spec: &ModelSpec, beta: &Coefficients, data: &ChoiceDataset) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    Ok(data.iter().map(|obs| mle_observation_trace(spec, beta, obs)).sum())
}

/// One observation's robust trace. `visit(x_k, g_k)` sees the feature value and norm
/// gradient entry of every free coordinate of a non-chosen alternative.
fn rf_observation_trace(
    spec: &ModelSpec,
    beta: &Coefficients,
    obs: &ChoiceObservation,
    q: NormOrder,
    rho: f64,
    n: usize,
    mut visit: impl FnMut(f64, f64),
) -> Result<f64> {
    if rho == 0.0 {
        return Ok(mle_observation_trace(spec, beta, obs));
    }
    let k = obs.x().len();
    let u = utilities_unchecked(beta, obs);
    let chosen = obs.chosen();
    let chosen_slot = obs.chosen_slot();
    let mut a = vec![0.0; u.len()];
    let mut diffs = vec![vec![0.0; k]; u.len()];
    for (slot, j) in others(obs) {
        beta.difference_into(j, chosen, &mut diffs[slot]);
        a[slot] = u[slot] - u[chosen_slot] + rho * q.norm(&diffs[slot]);
    }
    let mut p = vec![0.0; a.len()];
    softmax_into(&a, &mut p);

    let mut trace = 0.0;
    let w = p[chosen_slot] * (1.0 - p[chosen_slot]);
    for (kk, x) in obs.x().iter().enumerate() {
        if spec.includes(chosen, kk) {
            trace += w * x * x;
        }
    }
    let mut g = vec![0.0; k];
    let mut h = vec![0.0; k];
    for (slot, j) in others(obs) {
        if !(0..k).any(|kk| spec.includes(j, kk)) {
            continue;
        }
        let d = &diffs[slot];
        if q.norm(d) <= KINK_TOL {
            return Err(Error::Degenerate(format!("observation {n}: ‖β_{j} − β_{chosen}‖ is at the kink of the norm")));
        }
        q.gradient_into(d, &mut g);
        q.hessian_diagonal_into(d, &mut h);
        let pj = p[slot];
        for kk in 0..k {
            if !spec.includes(j, kk) {
                continue;
            }
            if h[kk].is_nan() {
                return Err(Error::Degenerate(format!(
                    "observation {n}: norm is not twice differentiable along feature {kk} of alternative {j}"
                )));
            }
            let x = obs.x()[kk];
            let s = x + rho * g[kk];
            trace += pj * (1.0 - pj) * s * s + pj * rho * h[kk];
            visit(x, g[kk]);
        }
    }
    Ok(trace)
}

fn single_ball(budget: &FeatureUncertainty, n_obs: usize) -> Result<(NormOrder, &Radius)> {
    budget.check_len(n_obs)?;
    let c = budget.constraints();
    if c.len() != 1 {
        return Err(Error::Unsupported("Fisher traces are defined for a single norm constraint".into()));
    }
    Ok((c[0].q(), &c[0].rho))
}

/// The robust-feature trace with the robust probabilities
/// `P^Norm_j ∝ exp(β̃_jᵀx + ρ‖β̃_j‖_q)`, `β̃_j = β_j − β_{I_n}`.
///
/// Fails with [`Error::Degenerate`] where a needed norm derivative does not exist.
pub fn fisher_trace_robust_feature(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    let (q, radius) = single_ball(budget, data.len())?;
    let mut trace = 0.0;
    for (n, obs) in data.iter().enumerate() {
        trace += rf_observation_trace(spec, beta, obs, q, radius.at(n), n, |_, _| {})?;
    }
    Ok(trace)
}

/// `fisher_trace_mle + Tr(−∇²R)` at the canonical worst-case relabeling, and whether
/// that relabeling was selected through a tie.
///
/// Each active flip adds `t·(log P_J − log P_I) = t·(β_J − β_I)ᵀx` to `R`; the
/// log-sum-exp parts cancel, so at a fixed selection `R` is linear and `−∇²R = 0`.
pub fn fisher_trace_robust_label(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &LabelBudget,
) -> Result<(f64, bool)> {
    let mle = fisher_trace_mle(spec, beta, data)?;
    let (_, relabeling) = inner_unchecked(beta, data, budget);
    Ok((mle, relabeling.has_tie()))
}

/// Compares the robust-feature trace at `beta_rf` with the nominal trace at `beta_mle`.
///
/// Logs how often the two sufficient conditions for the comparison hold: the
/// probability spread condition per observation and `ρ ≥ 2|x_k / (∇‖β̃_i‖)_k|`
/// per coordinate.
pub fn robust_feature_trace_report(
    spec: &ModelSpec,
    beta_rf: &Coefficients,
    beta_mle: &Coefficients,
    data: &ChoiceDataset,
    budget: &FeatureUncertainty,
) -> Result<TraceReport> {
    check_beta(spec, beta_mle)?;
    check_inputs(spec, beta_rf, data)?;
    let (q, radius) = single_ball(budget, data.len())?;
    let mut trace_robust = 0.0;
    let (mut cond1, mut cond2, mut cond2_total) = (0usize, 0usize, 0usize);
    for (n, obs) in data.iter().enumerate() {
        let rho = radius.at(n);
        trace_robust += rf_observation_trace(spec, beta_rf, obs, q, rho, n, |x, g| {
            if g != 0.0 {
                cond2_total += 1;
                if rho >= 2.0 * (x / g).abs() {
                    cond2 += 1;
                }
            }
        })?;
        let spread = |p: &[f64]| p.iter().map(|v| v * (1.0 - v)).sum::<f64>();
        let p_mle = full_probabilities_unchecked(spec.n_alternatives(), beta_mle, obs);
        let p_rf = robust_probabilities(beta_rf, obs, q, rho);
        if spread(&p_rf) >= spread(&p_mle) {
            cond1 += 1;
        }
    }
    let trace_mle = fisher_trace_mle(spec, beta_mle, data)?;
    log::info!(
        "trace comparison: probability-spread condition on {cond1}/{} observations, \
         radius condition on {cond2}/{cond2_total} coordinates",
        data.len()
    );
    let rho_or_gamma = match radius {
        Radius::Uniform(r) => *r,
        Radius::PerSample(r) => r.iter().copied().fold(0.0, f64::max),
    };
    Ok(TraceReport { trace_mle, trace_robust, inequality_holds: trace_robust >= trace_mle, rho_or_gamma, tie: false })
}

/// Robust-label trace against the nominal trace at the same `beta`.
pub fn robust_label_trace_report(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &LabelBudget,
) -> Result<TraceReport> {
    let trace_mle = fisher_trace_mle(spec, beta, data)?;
    let (trace_robust, tie) = fisher_trace_robust_label(spec, beta, data, budget)?;
    Ok(TraceReport {
        trace_mle,
        trace_robust,
        inequality_holds: trace_robust >= trace_mle,
        rho_or_gamma: budget.gamma(),
        tie,
    })
}

fn robust_probabilities(beta: &Coefficients, obs: &ChoiceObservation, q: NormOrder, rho: f64) -> Vec<f64> {
    let u = utilities_unchecked(beta, obs);
    let chosen_slot = obs.chosen_slot();
    let mut d = vec![0.0; obs.x().len()];
    let mut a = vec![0.0; u.len()];
    for (slot, j) in others(obs) {
        beta.difference_into(j, obs.chosen(), &mut d);
        a[slot] = u[slot] - u[chosen_slot] + rho * q.norm(&d);
    }
    let mut p = vec![0.0; a.len()];
    softmax_into(&a, &mut p);
    p
}

/// `baseline_error + L · E‖Δx‖₂ · ‖β‖₂`.
pub fn prediction_error_bound(
    beta: &Coefficients,
    expected_perturbation_l2: f64,
    lipschitz_l: f64,
    baseline_error: f64,
) -> Result<f64> {
    if !(expected_perturbation_l2 >= 0.0) || !expected_perturbation_l2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "expected perturbation norm must be finite and >= 0, got {expected_perturbation_l2}"
        )));
    }
    if !(lipschitz_l > 0.0) || !lipschitz_l.is_finite() {
        return Err(Error::InvalidArgument(format!("Lipschitz constant must be finite and > 0, got {lipschitz_l}")));
    }
    if !(baseline_error >= 0.0) || !baseline_error.is_finite() {
        return Err(Error::InvalidArgument(format!("baseline error must be finite and >= 0, got {baseline_error}")));
    }
    Ok(baseline_error + lipschitz_l * expected_perturbation_l2 * beta.l2_norm())
}

/// Monte-Carlo bias and spread of predicted probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    /// Mean over probes of `‖P(x|β*) − mean_r P(x|β̂_r)‖₁`.
    pub bias_l1: f64,
    /// Mean over probes of `mean_r ‖P(x|β̂_r) − mean_r P(x|β̂_r)‖₁` (a mean absolute deviation).
    pub variance_l1: f64,
}

/// Simulates `replications` datasets from `true_beta` (replication `r` uses seed
/// `design.seed + r`), fits `estimator` on each and decomposes the prediction error
/// at `probe_points`, where every alternative is available.
pub fn bias_variance_decomposition(
    spec: &ModelSpec,
    true_beta: &Coefficients,
    estimator: &Estimator,
    design: &SyntheticDesign,
    fit_config: &FitConfig,
    replications: usize,
    probe_points: &[Vec<f64>],
) -> Result<BiasVariance> {
    if replications < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 replications are needed, got {replications}")));
    }
    if probe_points.is_empty() {
        return Err(Error::InvalidArgument("no probe points given".into()));
    }
    check_beta(spec, true_beta)?;
    let all: Vec<usize> = (0..spec.n_alternatives()).collect();
    let probes = probe_points
        .iter()
        .map(|x| {
            if x.len() != spec.n_features() {
                return Err(Error::Dimension(format!(
                    "probe has {} features, model has {}",
                    x.len(),
                    spec.n_features()
                )));
            }
            ChoiceObservation::new(x.clone(), all.clone(), all[0])
        })
        .collect::<Result<Vec<_>>>()?;

    let fits = (0..replications)
        .into_par_iter()
        .map(|r| {
            let design = SyntheticDesign { seed: design.seed.wrapping_add(r as u64), ..design.clone() };
            let data = simulate_dataset(spec, true_beta, &design)?;
            estimator.fit(&data, spec, fit_config).map(|f| f.beta).map_err(|e| e.context(format!("replication {r}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_alt = spec.n_alternatives();
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let (mut bias, mut variance) = (0.0, 0.0);
    for probe in &probes {
        let truth = full_probabilities_unchecked(n_alt, true_beta, probe);
        let preds: Vec<Vec<f64>> = fits.iter().map(|b| full_probabilities_unchecked(n_alt, b, probe)).collect();
        // centred on the first draw so identical predictions average exactly
        let mut mean = vec![0.0; n_alt];
        for p in &preds {
            mean.iter_mut().zip(p).zip(&preds[0]).for_each(|((m, v), f)| *m += v - f);
        }
        mean.iter_mut().zip(&preds[0]).for_each(|(m, f)| *m = f + *m / replications as f64);
        bias += l1(&truth, &mean);
        variance += preds.iter().map(|p| l1(p, &mean)).sum::<f64>() / replications as f64;
    }
    let m = probes.len() as f64;
    Ok(BiasVariance { bias_l1: bias / m, variance_l1: variance / m })
}
