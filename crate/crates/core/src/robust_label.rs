//! Robust counterpart under label uncertainty.
//!
//! The adversary may relabel at most `Γ` observations (fractionally on the convex
//! hull). For fixed β the worst relabeling has a closed form: every observation
//! whose chosen alternative is more likely than its least likely rival,
//! `d_n = log P_{n,J*} − log P_{n,I} < 0`, is a candidate, and the `Γ` most
//! negative margins are flipped. The estimation objective is
//! `LL(β) + R(β; Γ)` with `R = Σ_n t_n d_n ≤ 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_inputs, log_likelihood_gradient_into, log_likelihood_unchecked, log_probabilities_unchecked,
    utilities_unchecked, ChoiceDataset, Coefficients, ModelSpec,
};

/// Maximum number of relabeled observations; fractional values act on the convex hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LabelBudget {
    gamma: f64,
}

impl TryFrom<f64> for LabelBudget {
    type Error = Error;
    fn try_from(gamma: f64) -> Result<Self> {
        LabelBudget::new(gamma)
    }
}

impl From<LabelBudget> for f64 {
    fn from(b: LabelBudget) -> f64 {
        b.gamma
    }
}

impl LabelBudget {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || gamma.is_infinite() {
            return Err(Error::InvalidArgument(format!("label budget must be finite and non-negative, got {gamma}")));
        }
        Ok(LabelBudget { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Budgets above the sample size act like `N`.
    pub fn effective(&self, n_obs: usize) -> f64 {
        self.gamma.min(n_obs as f64)
    }
}

/// One flipped observation: `Δy_{n,I_n} = −fraction`, `Δy_{n,target} = +fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relabel {
    pub observation: usize,
    pub target: usize,
    pub fraction: f64,
}

/// Sparse worst-case relabeling, ordered by increasing margin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseRelabeling {
    flips: Vec<Relabel>,
    /// Selection ties at this β (equal margins at the budget boundary, or several
    /// least-likely rivals for a flipped observation). The canonical tie-break is used.
    tie: bool,
}

impl WorstCaseRelabeling {
    pub fn flips(&self) -> &[Relabel] {
        &self.flips
    }

    pub fn total_fraction(&self) -> f64 {
        self.flips.iter().map(|f| f.fraction).sum()
    }

    pub fn has_tie(&self) -> bool {
        self.tie
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }
}

const TIE_TOL: f64 = 1e-12;

struct Margin {
    d: f64,
    target: usize,
    target_tie: bool,
}

/// `d_n` and `J*_n` for every observation; `J*` is the least likely rival, lowest index on ties.
fn margins(beta: &Coefficients, data: &ChoiceDataset) -> Vec<Margin> {
    data.iter()
        .map(|obs| {
            let u = utilities_unchecked(beta, obs);
            let chosen_slot = obs.chosen_slot();
            let mut best: Option<(usize, usize)> = None;
            for (slot, &j) in obs.available().iter().enumerate() {
                if slot != chosen_slot && best.is_none_or(|(_, s)| u[slot] < u[s]) {
                    best = Some((j, slot));
                }
            }
            let (target, target_slot) = best.expect("at least two available alternatives");
            let u_min = u[target_slot];
            let tie = (0..u.len())
                .any(|s| s != chosen_slot && s != target_slot && u[s] - u_min <= TIE_TOL * u_min.abs().max(1.0));
            Margin { d: u_min - u[chosen_slot], target, target_tie: tie }
        })
        .collect()
}

fn select(margins: &[Margin], gamma: f64) -> WorstCaseRelabeling {
    let mut candidates: Vec<usize> = (0..margins.len()).filter(|&n| margins[n].d < 0.0).collect();
    candidates.sort_by(|&a, &b| margins[a].d.total_cmp(&margins[b].d).then(a.cmp(&b)));
    let whole = gamma.floor() as usize;
    let frac = gamma - gamma.floor();
    let mut flips = Vec::new();
    let mut tie = false;
    for (rank, &n) in candidates.iter().enumerate() {
        let fraction = if rank < whole {
            1.0
        } else if rank == whole && frac > 0.0 {
            frac
        } else {
            break;
        };
        tie |= margins[n].target_tie;
        flips.push(Relabel { observation: n, target: margins[n].target, fraction });
    }
    // boundary tie: last selected and first unselected candidate share a margin
    let used = flips.len();
    if used > 0 && used < candidates.len() {
        let a = margins[candidates[used - 1]].d;
        let b = margins[candidates[used]].d;
        tie |= (a - b).abs() <= TIE_TOL * a.abs().max(1.0);
    }
    WorstCaseRelabeling { flips, tie }
}

fn relabel_value(margins: &[Margin], relabeling: &WorstCaseRelabeling) -> f64 {
    relabeling.flips.iter().map(|f| f.fraction * margins[f.observation].d).sum()
}

/// Closed-form inner minimization: `R(β; Γ)` and the relabeling that attains it.
pub fn inner_relabel_minimization(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &LabelBudget,
) -> Result<(f64, WorstCaseRelabeling)> {
    check_inputs(spec, beta, data)?;
    Ok(inner_unchecked(beta, data, budget))
}

pub(crate) fn inner_unchecked(
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &LabelBudget,
) -> (f64, WorstCaseRelabeling) {
    let gamma = budget.effective(data.len());
    if gamma == 0.0 {
        return (0.0, WorstCaseRelabeling::default());
    }
    let m = margins(beta, data);
    let relabeling = select(&m, gamma);
    (relabel_value(&m, &relabeling), relabeling)
}

/// `LL(β) + R(β; Γ)`.
pub fn rl_objective(spec: &ModelSpec, beta: &Coefficients, data: &ChoiceDataset, budget: &LabelBudget) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    Ok(rl_value_and_gradient(beta, data, budget, None))
}

/// Supergradient of [`rl_objective`] at the active (tie-broken) relabeling.
pub fn rl_subgradient(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &LabelBudget,
) -> Result<Coefficients> {
    check_inputs(spec, beta, data)?;
    let mut grad = Coefficients::zeros(spec);
    rl_value_and_gradient(beta, data, budget, Some(&mut grad));
    grad.apply_mask(spec);
    Ok(grad)
}

pub(crate) fn rl_value_and_gradient(
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &LabelBudget,
    grad: Option<&mut Coefficients>,
) -> f64 {
    let ll = log_likelihood_unchecked(beta, data);
    let (r, relabeling) = inner_unchecked(beta, data, budget);
    if let Some(grad) = grad {
        log_likelihood_gradient_into(beta, data, grad);
        // d_n = (β_{J*} − β_I)ᵀ x_n is linear in β
        for f in relabeling.flips() {
            let obs = &data.observations()[f.observation];
            for (kk, x) in obs.x().iter().enumerate() {
                grad.row_mut(f.target)[kk] += f.fraction * x;
                grad.row_mut(obs.chosen())[kk] -= f.fraction * x;
            }
        }
    }
    ll + r
}

const MAX_ORACLE_OBS: usize = 10;
const MAX_ORACLE_ALTS: usize = 4;
const MAX_ORACLE_GAMMA: f64 = 3.0;

/// Exhaustive `min_{Δy ∈ U(Γ)} Σ_n Σ_j Δy_{n,j} log P_{n,j}` for integer `Γ`.
///
/// Refuses instances with more than 10 observations, 4 available alternatives
/// per observation, or `Γ > 3`.
pub fn relabel_bruteforce_oracle(
    spec: &ModelSpec,
    beta: &Coefficients,
    data: &ChoiceDataset,
    budget: &LabelBudget,
) -> Result<f64> {
    check_inputs(spec, beta, data)?;
    let gamma = budget.gamma();
    if gamma.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("the enumeration oracle needs an integer budget, got {gamma}")));
    }
    if data.len() > MAX_ORACLE_OBS
        || gamma > MAX_ORACLE_GAMMA
        || data.iter().any(|o| o.available().len() > MAX_ORACLE_ALTS)
    {
        return Err(Error::TooLarge(format!(
            "enumeration is limited to N <= {MAX_ORACLE_OBS}, |C_n| <= {MAX_ORACLE_ALTS}, Γ <= {MAX_ORACLE_GAMMA}"
        )));
    }
    // per observation, the shift in Σ Δy·log P for every possible new label
    let options: Vec<Vec<f64>> = data
        .iter()
        .map(|obs| {
            let lp = log_probabilities_unchecked(beta, obs);
            let chosen = obs.chosen_slot();
            (0..lp.len()).filter(|&s| s != chosen).map(|s| lp[s] - lp[chosen]).collect()
        })
        .collect();
    fn search(options: &[Vec<f64>], start: usize, left: usize, acc: f64, best: &mut f64) {
        *best = best.min(acc);
        if left == 0 {
            return;
        }
        for n in start..options.len() {
            for &delta in &options[n] {
                search(options, n + 1, left - 1, acc + delta, best);
            }
        }
    }
    let mut best = 0.0;
    search(&options, 0, gamma as usize, 0.0, &mut best);
    Ok(best)
}
