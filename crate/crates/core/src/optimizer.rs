//! Maximization of the nominal and robust objectives over the free coordinates.
//!
//! Every objective here is concave. The solver is quasi-Newton (dense BFGS for
//! small problems, L-BFGS otherwise) with a bracketing weak-Wolfe line search,
//! which copes well with the occasional kink. When the line search cannot make
//! progress, a short run of normalized supergradient steps `c/√t` is tried from
//! the best iterate; if that does not improve the objective either, the point is
//! declared stationary.

use std::collections::VecDeque;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_beta, log_likelihood_gradient_into, log_likelihood_unchecked, ChoiceDataset, Coefficients, ModelSpec,
};
use crate::norms::NormOrder;
use crate::numeric::{dot, l2_norm, max_abs};
use crate::robust_feature::{
    optimal_split, rf_multi_optimal_term, rf_objective_multi, rf_term, FeatureUncertainty, NormSplit,
};
use crate::robust_label::{rl_value_and_gradient, LabelBudget};

/// Line-search constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearch {
    /// Bracket shrink factor.
    pub shrink: f64,
    /// Sufficient-increase constant `c1`.
    pub sufficient_increase: f64,
    /// Curvature constant `c2` of the weak Wolfe condition.
    pub curvature: f64,
    pub max_evaluations: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { shrink: 0.5, sufficient_increase: 1e-4, curvature: 0.9, max_evaluations: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Starting point; all zeros when absent.
    #[serde(skip)]
    pub init: Option<Coefficients>,
    pub max_iters: usize,
    /// Stop when the ∞-norm of the (super)gradient falls below this.
    pub grad_tol: f64,
    /// Minimum relative improvement for the fallback phase to count as progress.
    pub obj_rel_tol: f64,
    pub line_search: LineSearch,
    /// `c` in the fallback step size `c/√t`.
    pub fallback_step: f64,
    pub fallback_steps: usize,
    /// Problems with more free variables use L-BFGS.
    pub dense_limit: usize,
    pub lbfgs_memory: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            init: None,
            max_iters: 2000,
            grad_tol: 1e-6,
            obj_rel_tol: 1e-9,
            line_search: LineSearch::default(),
            fallback_step: 0.1,
            fallback_steps: 50,
            dense_limit: 200,
            lbfgs_memory: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let positive =
            [("grad_tol", self.grad_tol), ("obj_rel_tol", self.obj_rel_tol), ("fallback_step", self.fallback_step)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(Error::InvalidArgument("line_search.shrink must lie in (0, 1)".into()));
        }
        if !(ls.sufficient_increase > 0.0 && ls.sufficient_increase < ls.curvature && ls.curvature < 1.0) {
            return Err(Error::InvalidArgument("line search needs 0 < sufficient_increase < curvature < 1".into()));
        }
        if self.lbfgs_memory == 0 || ls.max_evaluations == 0 {
            return Err(Error::InvalidArgument("lbfgs_memory and line_search.max_evaluations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Coefficients,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration; non-decreasing.
    pub objective_trace: Vec<f64>,
    /// ∞-norm of the final (super)gradient over the free variables.
    pub gradient_norm: f64,
    /// Norm split for fits with several feature constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<NormSplit>,
}

/// A concave function of the packed free variables.
pub(crate) trait Objective {
    fn dim(&self) -> usize;
    /// Value, with the gradient written into `grad`.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Inverse-Hessian model of `−f`.
enum Curvature {
    Dense { h: Vec<f64>, n: usize, fresh: bool },
    Limited { pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>, memory: usize, gamma: f64 },
}

impl Curvature {
    fn new(n: usize, config: &FitConfig) -> Self {
        if n <= config.dense_limit {
            let mut c = Curvature::Dense { h: vec![0.0; n * n], n, fresh: true };
            c.reset();
            c
        } else {
            Curvature::Limited { pairs: VecDeque::new(), memory: config.lbfgs_memory, gamma: 1.0 }
        }
    }

    fn reset(&mut self) {
        match self {
            Curvature::Dense { h, n, fresh } => {
                h.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..*n {
                    h[i * *n + i] = 1.0;
                }
                *fresh = true;
            }
            Curvature::Limited { pairs, gamma, .. } => {
                pairs.clear();
                *gamma = 1.0;
            }
        }
    }

    fn is_fresh(&self) -> bool {
        match self {
            Curvature::Dense { fresh, .. } => *fresh,
            Curvature::Limited { pairs, .. } => pairs.is_empty(),
        }
    }

    /// Ascent direction `H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Curvature::Dense { h, n, .. } => (0..*n).map(|i| dot(&h[i * n..(i + 1) * n], g)).collect(),
            Curvature::Limited { pairs, gamma, .. } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                    alphas.push(a);
                }
                q.iter_mut().for_each(|v| *v *= gamma);
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = rho * dot(y, &q);
                    q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
                }
                q
            }
        }
    }

    /// `s = x⁺ − x`, `y = g − g⁺` (the gradient change of `−f`).
    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * l2_norm(&s) * l2_norm(&y)) {
            return;
        }
        let rho = 1.0 / sy;
        match self {
            Curvature::Dense { h, n, fresh } => {
                let n = *n;
                if *fresh {
                    let scale = sy / dot(&y, &y);
                    h.iter_mut().for_each(|v| *v *= scale);
                    *fresh = false;
                }
                let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
                let yhy = dot(&y, &hy);
                let c = rho * rho * yhy + rho;
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + c * s[i] * s[j];
                    }
                }
            }
            Curvature::Limited { pairs, memory, gamma } => {
                *gamma = sy / dot(&y, &y);
                if pairs.len() == *memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
        }
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn evaluate(obj: &dyn Objective, x: Vec<f64>) -> Point {
    let mut g = vec![0.0; x.len()];
    let f = obj.eval(&x, &mut g);
    Point { x, f, g }
}

fn step(x: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

/// Bracketing weak-Wolfe search along the ascent direction `d`. Returns the
/// accepted point, or the best sufficient-increase point if curvature never holds.
fn line_search(obj: &dyn Objective, at: &Point, d: &[f64], alpha0: f64, ls: &LineSearch) -> Option<Point> {
    let slope = dot(&at.g, d);
    if !(slope > 0.0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut alpha = alpha0;
    let mut fallback: Option<Point> = None;
    for _ in 0..ls.max_evaluations {
        let trial = evaluate(obj, step(&at.x, d, alpha));
        if !(trial.f >= at.f + ls.sufficient_increase * alpha * slope) {
            hi = alpha;
        } else if dot(&trial.g, d) > ls.curvature * slope {
            lo = alpha;
            if fallback.as_ref().is_none_or(|p| trial.f > p.f) {
                fallback = Some(trial);
            }
        } else {
            return Some(trial);
        }
        alpha = if hi.is_finite() { lo + ls.shrink * (hi - lo) } else { alpha / ls.shrink };
        if hi.is_finite() && hi - lo <= 1e-16 * hi {
            break;
        }
    }
    fallback.filter(|p| p.f > at.f)
}

/// Maximizes `obj` from `x0`.
pub(crate) fn maximize(obj: &dyn Objective, x0: Vec<f64>, config: &FitConfig) -> Outcome {
    let n = obj.dim();
    let mut current = evaluate(obj, x0);
    let mut trace = vec![current.f];
    let mut iterations = 0;
    let mut converged = false;
    if n == 0 {
        return Outcome { x: current.x, value: current.f, grad: current.g, iterations, converged: true, trace };
    }
    let mut curvature = Curvature::new(n, config);
    while iterations < config.max_iters {
        if max_abs(&current.g) <= config.grad_tol {
            converged = true;
            break;
        }
        let mut d = curvature.direction(&current.g);
        if !(dot(&d, &current.g) > 0.0) {
            curvature.reset();
            d = current.g.clone();
        }
        let alpha0 = if curvature.is_fresh() { 1.0 / l2_norm(&d).max(1.0) } else { 1.0 };
        iterations += 1;
        if let Some(next) = line_search(obj, &current, &d, alpha0, &config.line_search) {
            let s: Vec<f64> = next.x.iter().zip(&current.x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = current.g.iter().zip(&next.g).map(|(a, b)| a - b).collect();
            curvature.update(s, y);
            current = next;
            trace.push(current.f);
            continue;
        }
        // line search stalled: supergradient steps from the best point
        let start = current.f;
        let mut probe = Point { x: current.x.clone(), f: current.f, g: current.g.clone() };
        for t in 1..=config.fallback_steps {
            if iterations >= config.max_iters {
                break;
            }
            iterations += 1;
            let gn = l2_norm(&probe.g);
            if gn == 0.0 {
                break;
            }
            let size = config.fallback_step / (t as f64).sqrt() / gn;
            probe = evaluate(obj, step(&probe.x, &probe.g, size));
            if probe.f > current.f {
                current = Point { x: probe.x.clone(), f: probe.f, g: probe.g.clone() };
            }
        }
        trace.push(current.f);
        if current.f - start <= config.obj_rel_tol * start.abs().max(1.0) {
            debug!("line search stalled at f = {start}; fallback gave no progress");
            converged = true;
            break;
        }
        curvature.reset();
    }
    Outcome { x: current.x, value: current.f, grad: current.g, iterations, converged, trace }
}

/// Packs a coefficient-space objective over the free coordinates of `spec`.
struct BetaObjective<'a, F: Fn(&Coefficients, Option<&mut Coefficients>) -> f64> {
    spec: &'a ModelSpec,
    f: F,
}

impl<F: Fn(&Coefficients, Option<&mut Coefficients>) -> f64> Objective for BetaObjective<'_, F> {
    fn dim(&self) -> usize {
        self.spec.n_free()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let beta = Coefficients::from_free(self.spec, x);
        let mut full = Coefficients::zeros(self.spec);
        let value = (self.f)(&beta, Some(&mut full));
        for (g, &idx) in grad.iter_mut().zip(self.spec.free_indices()) {
            *g = full.as_slice()[idx];
        }
        value
    }
}

fn prepare(data: &ChoiceDataset, spec: &ModelSpec, config: &FitConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot fit on an empty dataset".into()));
    }
    data.check_spec(spec)?;
    match &config.init {
        Some(init) => {
            check_beta(spec, init)?;
            Ok(init.free_values(spec))
        }
        None => Ok(vec![0.0; spec.n_free()]),
    }
}

/// A converged point whose objective still grows along the ray through it is not
/// a maximizer (separable data, for example).
fn ray_check(obj: &dyn Objective, out: &mut Outcome) {
    if !out.converged {
        return;
    }
    let doubled: Vec<f64> = out.x.iter().map(|v| 2.0 * v).collect();
    let mut scratch = vec![0.0; doubled.len()];
    if obj.eval(&doubled, &mut scratch) > out.value {
        debug!("objective still increasing along the ray; reporting non-convergence");
        out.converged = false;
    }
}

fn finish(spec: &ModelSpec, obj: &dyn Objective, mut out: Outcome) -> FitResult {
    ray_check(obj, &mut out);
    FitResult {
        beta: Coefficients::from_free(spec, &out.x[..spec.n_free()]),
        objective: out.value,
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace,
        gradient_norm: max_abs(&out.grad),
        split: None,
    }
}

/// Maximum-likelihood fit.
pub fn fit_nominal(data: &ChoiceDataset, spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
    let x0 = prepare(data, spec, config)?;
    let obj = BetaObjective {
        spec,
        f: |beta: &Coefficients, grad: Option<&mut Coefficients>| {
            if let Some(g) = grad {
                log_likelihood_gradient_into(beta, data, g);
            }
            log_likelihood_unchecked(beta, data)
        },
    };
    let out = maximize(&obj, x0, config);
    Ok(finish(spec, &obj, out))
}

/// Robust-label fit: maximizes `LL(β) + R(β; Γ)`.
pub fn fit_robust_label(
    data: &ChoiceDataset,
    spec: &ModelSpec,
    budget: &LabelBudget,
    config: &FitConfig,
) -> Result<FitResult> {
    let x0 = prepare(data, spec, config)?;
    let obj = BetaObjective {
        spec,
        f: |beta: &Coefficients, grad: Option<&mut Coefficients>| rl_value_and_gradient(beta, data, budget, grad),
    };
    let out = maximize(&obj, x0, config);
    Ok(finish(spec, &obj, out))
}

/// Robust-feature fit. With several constraints every penalty is evaluated at its
/// best split, and the split at the returned β is reported.
pub fn fit_robust_feature(
    data: &ChoiceDataset,
    spec: &ModelSpec,
    budget: &FeatureUncertainty,
    config: &FitConfig,
) -> Result<FitResult> {
    let x0 = prepare(data, spec, config)?;
    budget.check_len(data.len())?;
    if budget.is_single() {
        let c = &budget.constraints()[0];
        let q = c.q();
        let obj = BetaObjective {
            spec,
            f: |beta: &Coefficients, mut grad: Option<&mut Coefficients>| {
                data.iter().enumerate().map(|(n, obs)| rf_term(beta, obs, q, c.rho.at(n), grad.as_deref_mut())).sum()
            },
        };
        let out = maximize(&obj, x0, config);
        return Ok(finish(spec, &obj, out));
    }
    let balls: Vec<Vec<(NormOrder, f64)>> = (0..data.len()).map(|n| budget.balls_at(n)).collect();
    let obj = BetaObjective {
        spec,
        f: |beta: &Coefficients, mut grad: Option<&mut Coefficients>| {
            data.iter().zip(&balls).map(|(obs, b)| rf_multi_optimal_term(beta, obs, b, grad.as_deref_mut())).sum()
        },
    };
    let out = maximize(&obj, x0, config);
    let mut result = finish(spec, &obj, out);
    let split = optimal_split(spec, &result.beta, data, budget)?;
    result.objective = rf_objective_multi(spec, &result.beta, &split, data, budget)?;
    result.split = Some(split);
    Ok(result)
}

/// An estimator with its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Nominal,
    RobustFeature {
        uncertainty: FeatureUncertainty,
    },
    RobustLabel {
        budget: LabelBudget,
    },
    /// Returns the given coefficients without fitting (an oracle for simulations).
    Fixed {
        beta: Coefficients,
    },
}

impl Estimator {
    pub fn fit(&self, data: &ChoiceDataset, spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
        match self {
            Estimator::Nominal => fit_nominal(data, spec, config),
            Estimator::RobustFeature { uncertainty } => fit_robust_feature(data, spec, uncertainty, config),
            Estimator::RobustLabel { budget } => fit_robust_label(data, spec, budget, config),
            Estimator::Fixed { beta } => {
                check_beta(spec, beta)?;
                data.check_spec(spec)?;
                let ll = log_likelihood_unchecked(beta, data);
                Ok(FitResult {
                    beta: beta.clone(),
                    objective: ll,
                    iterations: 0,
                    converged: true,
                    objective_trace: vec![ll],
                    gradient_norm: 0.0,
                    split: None,
                })
            }
        }
    }

    /// Short human-readable label, e.g. `rf(p=2, rho=0.1)`.
    pub fn label(&self) -> String {
        match self {
            Estimator::Nominal => "nominal".into(),
            Estimator::RobustFeature { uncertainty } => {
                let parts: Vec<String> = uncertainty
                    .constraints()
                    .iter()
                    .map(|c| match &c.rho {
                        crate::robust_feature::Radius::Uniform(r) => format!("p={}, rho={r}", c.p),
                        crate::robust_feature::Radius::PerSample(_) => format!("p={}, rho=per-sample", c.p),
                    })
                    .collect();
                format!("rf({})", parts.join("; "))
            }
            Estimator::RobustLabel { budget } => format!("rl(gamma={})", budget.gamma()),
            Estimator::Fixed { .. } => "fixed".into(),
        }
    }
}

/// An estimator family indexed by one scalar hyper-parameter (used by grid search).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    Nominal,
    RobustFeature { p: NormOrder },
    RobustLabel,
}

impl EstimatorKind {
    /// The estimator with radius `rho` or budget `gamma` set to `value`.
    pub fn instantiate(&self, value: f64) -> Result<Estimator> {
        Ok(match self {
            EstimatorKind::Nominal => Estimator::Nominal,
            EstimatorKind::RobustFeature { p } => {
                Estimator::RobustFeature { uncertainty: FeatureUncertainty::single(*p, value)? }
            }
            EstimatorKind::RobustLabel => Estimator::RobustLabel { budget: LabelBudget::new(value)? },
        })
    }
}
