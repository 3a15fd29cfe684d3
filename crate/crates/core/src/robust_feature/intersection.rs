//! Support function of an intersection of ℓp balls.
//!
//! `φ(v) = max { λᵀv : ‖λ‖_{p_m} <= ρ_m for all m }` equals the smallest penalty
//! `Σ_m ρ_m ‖w_m‖_{q_m}` over splits `Σ_m w_m = v`. The maximization is solved
//! with a log-barrier Newton method; the split is read off the barrier
//! multipliers of each ball.

use nalgebra::{DMatrix, DVector};

use crate::norms::NormOrder;
use crate::numeric::{dot, max_abs};

pub(crate) struct Support {
    /// `Σ_m ρ_m ‖w_m‖_{q_m}` at the returned split; within about 1e-7 (relative) of
    /// φ when several constraints are active, exact when one constraint dominates.
    pub value: f64,
    /// A maximizer of `λᵀv` over the intersection (a supergradient of φ).
    pub lambda: Vec<f64>,
    /// One piece per ball; the pieces sum to `v`.
    pub pieces: Vec<Vec<f64>>,
}

#[derive(Clone, Copy)]
enum Block {
    /// ℓ∞ ball as `K` smooth constraints `λ_k² <= ρ²`.
    Box,
    Euclid,
    /// General `p` (including 1) through auxiliary bounds `|λ_k| <= s_k`, `Σ s_k^p <= ρ^p`.
    Aux {
        p: f64,
        offset: usize,
    },
}

struct Barrier<'a> {
    v: &'a [f64],
    blocks: Vec<(Block, f64)>,
    k: usize,
    n_var: usize,
    n_terms: usize,
}

struct Derivatives {
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Barrier<'_> {
    /// Barrier derivatives (when requested); `None` outside the domain.
    fn eval(&self, z: &[f64], t: f64, want_derivatives: bool) -> Option<Derivatives> {
        let (k, n) = (self.k, self.n_var);
        let lambda = &z[..k];
        let mut grad = vec![0.0; if want_derivatives { n } else { 0 }];
        let mut hess = vec![0.0; if want_derivatives { n * n } else { 0 }];
        if want_derivatives {
            grad[..k].iter_mut().zip(self.v).for_each(|(g, vi)| *g = -t * vi);
        }
        for &(block, rho) in &self.blocks {
            match block {
                Block::Box => {
                    for i in 0..k {
                        let c = (lambda[i] / rho).powi(2) - 1.0;
                        if !(c < 0.0) {
                            return None;
                        }
                        if want_derivatives {
                            let dc = 2.0 * lambda[i] / (rho * rho);
                            grad[i] += dc / -c;
                            hess[i * n + i] += dc * dc / (c * c) + 2.0 / (rho * rho) / -c;
                        }
                    }
                }
                Block::Euclid => {
                    let c = dot(lambda, lambda) / (rho * rho) - 1.0;
                    if !(c < 0.0) {
                        return None;
                    }
                    if want_derivatives {
                        for i in 0..k {
                            let di = 2.0 * lambda[i] / (rho * rho);
                            grad[i] += di / -c;
                            for j in 0..k {
                                let dj = 2.0 * lambda[j] / (rho * rho);
                                hess[i * n + j] += di * dj / (c * c);
                            }
                            hess[i * n + i] += 2.0 / (rho * rho) / -c;
                        }
                    }
                }
                Block::Aux { p, offset } => {
                    let s = &z[offset..offset + k];
                    let mut total = 0.0;
                    for i in 0..k {
                        let (c1, c2) = (lambda[i] - s[i], -lambda[i] - s[i]);
                        if !(c1 < 0.0 && c2 < 0.0) {
                            return None;
                        }
                        total += (s[i] / rho).powf(p);
                        if want_derivatives {
                            let (a, b) = (1.0 / -c1, 1.0 / -c2);
                            let (li, si) = (i, offset + i);
                            grad[li] += a - b;
                            grad[si] += -a - b;
                            let (a2, b2) = (a * a, b * b);
                            hess[li * n + li] += a2 + b2;
                            hess[si * n + si] += a2 + b2;
                            hess[li * n + si] += -a2 + b2;
                            hess[si * n + li] += -a2 + b2;
                        }
                    }
                    let c = total - 1.0;
                    if !(c < 0.0) {
                        return None;
                    }
                    if want_derivatives {
                        let d: Vec<f64> = s.iter().map(|si| p / rho * (si / rho).powf(p - 1.0)).collect();
                        for i in 0..k {
                            grad[offset + i] += d[i] / -c;
                            for j in 0..k {
                                hess[(offset + i) * n + offset + j] += d[i] * d[j] / (c * c);
                            }
                            if p != 1.0 {
                                hess[(offset + i) * n + offset + i] +=
                                    p * (p - 1.0) / (rho * rho) * (s[i] / rho).powf(p - 2.0) / -c;
                            }
                        }
                    }
                }
            }
        }
        Some(Derivatives { grad, hess })
    }

    /// `(1/t) Σ ∇_λ c_i / (−c_i)` over each ball's constraints: the primal pieces.
    fn pieces(&self, z: &[f64], t: f64) -> Vec<Vec<f64>> {
        let k = self.k;
        let lambda = &z[..k];
        self.blocks
            .iter()
            .map(|&(block, rho)| match block {
                Block::Box => (0..k)
                    .map(|i| {
                        let c = (lambda[i] / rho).powi(2) - 1.0;
                        2.0 * lambda[i] / (rho * rho) / -c / t
                    })
                    .collect(),
                Block::Euclid => {
                    let c = dot(lambda, lambda) / (rho * rho) - 1.0;
                    lambda.iter().map(|l| 2.0 * l / (rho * rho) / -c / t).collect()
                }
                Block::Aux { offset, .. } => (0..k)
                    .map(|i| {
                        let s = z[offset + i];
                        (1.0 / (s - lambda[i]) - 1.0 / (s + lambda[i])) / t
                    })
                    .collect(),
            })
            .collect()
    }
}

fn newton_direction(d: &Derivatives, n: usize) -> Vec<f64> {
    let h = DMatrix::from_row_slice(n, n, &d.hess);
    let rhs = -DVector::from_column_slice(&d.grad);
    let mut shift = 0.0;
    let scale = (0..n).map(|i| d.hess[i * n + i].abs()).fold(0.0, f64::max).max(1.0);
    loop {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(&rhs).iter().copied().collect();
        }
        shift = if shift == 0.0 { 1e-12 * scale } else { shift * 10.0 };
    }
}

fn penalty(pieces: &[Vec<f64>], balls: &[(NormOrder, f64)]) -> f64 {
    pieces.iter().zip(balls).map(|(w, (p, r))| r * p.dual().norm(w)).sum()
}

/// Everything on ball `m`'s piece.
fn single_piece(v: &[f64], m: usize, n_balls: usize) -> Vec<Vec<f64>> {
    let mut pieces = vec![vec![0.0; v.len()]; n_balls];
    pieces[m] = v.to_vec();
    pieces
}

/// `balls[m] = (p_m, ρ_m)` with finite, non-negative radii.
pub(crate) fn support(v: &[f64], balls: &[(NormOrder, f64)]) -> Support {
    let k = v.len();
    let n_balls = balls.len();
    if let Some(m) = balls.iter().position(|&(_, r)| r == 0.0) {
        return Support { value: 0.0, lambda: vec![0.0; k], pieces: single_piece(v, m, n_balls) };
    }
    let scale = max_abs(v);
    if scale == 0.0 {
        return Support { value: 0.0, lambda: vec![0.0; k], pieces: vec![vec![0.0; k]; n_balls] };
    }
    let single = |m: usize| -> Vec<f64> {
        let (p, rho) = balls[m];
        let mut lambda = vec![0.0; k];
        p.dual().gradient_into(v, &mut lambda);
        lambda.iter_mut().for_each(|l| *l *= rho);
        lambda
    };
    if n_balls == 1 {
        let value = penalty(&[v.to_vec()], balls);
        return Support { value, lambda: single(0), pieces: vec![v.to_vec()] };
    }

    let v_hat: Vec<f64> = v.iter().map(|x| x / scale).collect();
    let mut n_var = k;
    let mut n_terms = 0;
    let mut blocks = Vec::with_capacity(n_balls);
    for &(p, rho) in balls {
        let block = if p.is_infinite() {
            n_terms += k;
            Block::Box
        } else if p == NormOrder::TWO {
            n_terms += 1;
            Block::Euclid
        } else {
            let b = Block::Aux { p: p.value(), offset: n_var };
            n_var += k;
            n_terms += 2 * k + 1;
            b
        };
        blocks.push((block, rho));
    }
    let barrier = Barrier { v: &v_hat, blocks, k, n_var, n_terms };

    let mut z = vec![0.0; n_var];
    for &(block, rho) in &barrier.blocks {
        if let Block::Aux { p, offset } = block {
            let s0 = 0.5 * rho * (k as f64).powf(-1.0 / p);
            z[offset..offset + k].iter_mut().for_each(|s| *s = s0);
        }
    }
    let rho_min = balls.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
    let mut t = 1.0 / rho_min;
    // multipliers lose precision as slacks approach rounding level, so the split is
    // read off a moderately centered iterate while λ keeps improving
    let mut early_pieces: Option<Vec<Vec<f64>>> = None;
    for _ in 0..40 {
        // damped Newton: the step 1/(1+δ) needs no objective comparisons, which
        // are swamped by rounding once t is large
        for _ in 0..60 {
            let d = barrier.eval(&z, t, true).expect("iterates stay strictly feasible");
            let dir = newton_direction(&d, n_var);
            let decrement = -dot(&d.grad, &dir);
            if !(decrement > 1e-20) {
                break;
            }
            let delta = decrement.sqrt();
            let mut step = if delta > 0.25 { 1.0 / (1.0 + delta) } else { 1.0 };
            loop {
                let trial: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
                if barrier.eval(&trial, t, false).is_some() {
                    z = trial;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    break;
                }
            }
        }
        let dual_value = dot(&v_hat, &z[..k]).max(f64::MIN_POSITIVE);
        let gap = barrier.n_terms as f64 / t;
        if early_pieces.is_none() && gap <= 1e-9 * dual_value {
            early_pieces = Some(barrier.pieces(&z, t));
        }
        if gap <= 1e-13 * dual_value {
            break;
        }
        t *= 10.0;
    }

    let mut pieces: Vec<Vec<f64>> = early_pieces
        .unwrap_or_else(|| barrier.pieces(&z, t))
        .into_iter()
        .map(|w| w.into_iter().map(|x| x * scale).collect())
        .collect();
    // absorb the Newton residual so the split is exactly feasible
    let largest = (0..n_balls).max_by(|&a, &b| max_abs(&pieces[a]).total_cmp(&max_abs(&pieces[b]))).unwrap_or(0);
    for i in 0..k {
        let sum: f64 = pieces.iter().map(|w| w[i]).sum();
        pieces[largest][i] += v[i] - sum;
    }
    let mut lambda: Vec<f64> = z[..k].to_vec();
    let mut value = penalty(&pieces, balls);
    for m in 0..n_balls {
        let cand = single_piece(v, m, n_balls);
        let p = penalty(&cand, balls);
        if p <= value {
            value = p;
            pieces = cand;
            let lm = single(m);
            let feasible = balls.iter().all(|&(pj, rj)| pj.norm(&lm) <= rj * (1.0 + 1e-12));
            if feasible {
                lambda = lm;
            }
        }
    }
    Support { value, lambda, pieces }
}
