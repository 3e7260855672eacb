//! Black-box adversarial search over multiplicative actuator-torque
//! perturbations.
//!
//! A [`RolloutOracle`](oracle::RolloutOracle) turns a perturbation `δ` into
//! episode returns. The searchers in [`search`] minimize the mean return
//! over the ball `‖δ‖∞ ≤ ε`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod error;
pub mod oracle;
pub mod perturbation;
pub mod report;
pub mod rng;
pub mod search;
pub mod walker;

pub use error::{AttackError, Result};
pub use oracle::{estimate_mean_reward, rollout, MeanRewardEstimate, OracleSpec, RolloutOracle, RolloutResult};
pub use perturbation::{apply_perturbation, clip_inf, sample_uniform, ActionVector, TorquePerturbation};
pub use rng::SeededRng;
pub use walker::{SurrogateWalker, WalkerConfig};
