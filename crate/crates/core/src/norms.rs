//! ℓp norms, their duals, derivatives, and the worst-case linear perturbation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Order `p >= 1` of an ℓp norm; `p = ∞` is the max norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOrder(f64);

impl NormOrder {
    pub const ONE: NormOrder = NormOrder(1.0);
    pub const TWO: NormOrder = NormOrder(2.0);
    pub const INFINITY: NormOrder = NormOrder(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidArgument(format!("norm order must satisfy p >= 1, got {p}")));
        }
        Ok(NormOrder(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// The order `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> NormOrder {
        if self.0 == 1.0 {
            NormOrder::INFINITY
        } else if self.0.is_infinite() {
            NormOrder::ONE
        } else {
            NormOrder(self.0 / (self.0 - 1.0))
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        let p = self.0;
        if p == 1.0 {
            v.iter().map(|x| x.abs()).sum()
        } else if p == 2.0 {
            crate::numeric::l2_norm(v)
        } else if p.is_infinite() {
            crate::numeric::max_abs(v)
        } else {
            // scale by the max entry so large p does not overflow
            let m = crate::numeric::max_abs(v);
            if m == 0.0 {
                return 0.0;
            }
            m * v.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }

    /// A (sub)gradient of the norm at `v`, written into `out`.
    ///
    /// At `v = 0` the zero vector is returned. For `p = 1` zero entries get a
    /// zero component; for `p = ∞` the first entry of maximal magnitude is used.
    pub fn gradient_into(self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let p = self.0;
        if p == 1.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o = sign(*x);
            }
            return;
        }
        let norm = self.norm(v);
        if norm == 0.0 {
            return;
        }
        if p.is_infinite() {
            let mut best = 0;
            for (k, x) in v.iter().enumerate() {
                if x.abs() > v[best].abs() {
                    best = k;
                }
            }
            out[best] = sign(v[best]);
        } else if p == 2.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o = x / norm;
            }
        } else {
            for (o, x) in out.iter_mut().zip(v) {
                *o = sign(*x) * (x.abs() / norm).powf(p - 1.0);
            }
        }
    }

    /// Diagonal of the norm's Hessian at `v`.
    ///
    /// Entries where the norm is not twice differentiable along that coordinate
    /// are `NaN`; callers decide whether the coordinate matters.
    pub fn hessian_diagonal_into(self, v: &[f64], out: &mut [f64]) {
        let p = self.0;
        let norm = self.norm(v);
        if norm == 0.0 {
            out.iter_mut().for_each(|o| *o = f64::NAN);
            return;
        }
        if p == 1.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o = if *x == 0.0 { f64::NAN } else { 0.0 };
            }
        } else if p.is_infinite() {
            let ties = v.iter().filter(|x| x.abs() == norm).count();
            for (o, x) in out.iter_mut().zip(v) {
                *o = if ties > 1 && x.abs() == norm { f64::NAN } else { 0.0 };
            }
        } else {
            for (o, x) in out.iter_mut().zip(v) {
                let r = x.abs() / norm;
                *o = if r == 0.0 && p < 2.0 {
                    f64::NAN
                } else if r == 0.0 {
                    if p == 2.0 {
                        1.0 / norm
                    } else {
                        0.0
                    }
                } else {
                    (p - 1.0) / norm * (r.powf(p - 2.0) - r.powf(2.0 * p - 2.0))
                };
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for NormOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(NormOrder::INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse norm order `{s}`")))
                .and_then(NormOrder::new),
        }
    }
}

impl Serialize for NormOrder {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let order = match Raw::deserialize(deserializer)? {
            Raw::Number(p) => NormOrder::new(p),
            Raw::Text(s) => s.parse(),
        };
        order.map_err(serde::de::Error::custom)
    }
}

/// `max_{‖Δ‖_p <= rho} v^T Δ = rho · ‖v‖_q`.
pub fn dual_norm_value(v: &[f64], p: NormOrder, rho: f64) -> Result<f64> {
    check_radius(rho)?;
    Ok(rho * p.dual().norm(v))
}

/// A maximizer of `v^T Δ` over the ℓp ball of radius `rho`.
pub fn worst_case_perturbation(v: &[f64], p: NormOrder, rho: f64) -> Result<Vec<f64>> {
    check_radius(rho)?;
    let mut delta = vec![0.0; v.len()];
    p.dual().gradient_into(v, &mut delta);
    delta.iter_mut().for_each(|d| *d *= rho);
    Ok(delta)
}

pub(crate) fn check_radius(rho: f64) -> Result<()> {
    if rho.is_nan() || rho < 0.0 {
        return Err(Error::InvalidArgument(format!("radius must be non-negative, got {rho}")));
    }
    Ok(())
}
