//! Multiplicative torque perturbations bounded in the L∞ norm.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AttackError, Result};

/// Torque control signals for every actuator at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector(Vec<f64>);

impl ActionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AttackError::arg(format!("action entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }
}

/// A time-fixed perturbation `δ` with `max_i |δ_i| <= eps`.
///
/// The bound is checked by every constructor, so a value of this type always
/// lies in the closed ε-ball it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct TorquePerturbation {
    delta: Vec<f64>,
    eps: f64,
}

impl TorquePerturbation {
    /// Checked constructor.
    pub fn new(delta: Vec<f64>, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        for (i, d) in delta.iter().enumerate() {
            if !d.is_finite() {
                return Err(AttackError::arg(format!("delta entry {i} is not finite")));
            }
            if d.abs() > eps {
                return Err(AttackError::arg(format!(
                    "delta entry {i} = {d} lies outside the ball of radius {eps}"
                )));
            }
        }
        Ok(Self { delta, eps })
    }

    /// The zero perturbation of length `n` inside the ball of radius `eps`.
    pub fn zeros(n: usize, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(Self {
            delta: vec![0.0; n],
            eps,
        })
    }

    /// Wraps the values with the tightest valid bound, `‖δ‖∞`.
    pub fn from_values(delta: Vec<f64>) -> Result<Self> {
        if let Some(i) = delta.iter().position(|v| !v.is_finite()) {
            return Err(AttackError::arg(format!("delta entry {i} is not finite")));
        }
        let eps = inf_norm(&delta);
        Ok(Self { delta, eps })
    }

    /// Re-expresses the perturbation against a different radius.
    pub fn with_bound(&self, eps: f64) -> Result<Self> {
        Self::new(self.delta.clone(), eps)
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delta
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.delta.clone()
    }

    pub fn inf_norm(&self) -> f64 {
        inf_norm(&self.delta)
    }
}

impl fmt::Display for TorquePerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.delta.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d:+.4}")?;
        }
        write!(f, "] (eps={})", self.eps)
    }
}

impl Serialize for TorquePerturbation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.delta.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TorquePerturbation {
    /// Reads a bare JSON array. The bound becomes the array's own L∞ norm;
    /// callers that know the configured radius should follow up with
    /// [`TorquePerturbation::with_bound`].
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Self::from_values(values).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(AttackError::arg(format!(
            "eps must be a finite nonnegative number, got {eps}"
        )));
    }
    Ok(())
}

/// `a'_i = (1 + δ_i) · a_i`.
pub fn apply_perturbation(action: &ActionVector, pert: &TorquePerturbation) -> Result<ActionVector> {
    if action.len() != pert.len() {
        return Err(AttackError::Dimension {
            expected: pert.len(),
            got: action.len(),
        });
    }
    Ok(ActionVector(
        action.0.iter().zip(&pert.delta).map(|(a, d)| (1.0 + d) * a).collect(),
    ))
}

/// Element-wise clamp into `[-eps, eps]`.
pub fn clip_inf(raw: &[f64], eps: f64) -> Result<TorquePerturbation> {
    check_eps(eps)?;
    if let Some(i) = raw.iter().position(|v| v.is_nan()) {
        return Err(AttackError::arg(format!("raw entry {i} is NaN")));
    }
    let delta = raw.iter().map(|x| x.min(eps).max(-eps)).collect();
    Ok(TorquePerturbation { delta, eps })
}

/// Draws each entry i.i.d. from `U([-eps, eps])`.
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, eps: f64, n: usize) -> Result<TorquePerturbation> {
    check_eps(eps)?;
    if n == 0 {
        return Err(AttackError::arg("perturbation length must be at least 1"));
    }
    if eps == 0.0 {
        return TorquePerturbation::zeros(n, eps);
    }
    let delta = (0..n).map(|_| rng.random_range(-eps..=eps)).collect();
    Ok(TorquePerturbation { delta, eps })
}
