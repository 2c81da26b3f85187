//! Finite-armed semiparametric bandits: experimental design for
//! orthogonalized regression, the orthogonalized ridge estimator, a phase
//! elimination algorithm built on both, and a seeded experiment harness.
//!
//! Rewards follow `r_t = x_{a_t}ᵀθ* + ν_t + η_t` where the shift `ν_t` is
//! common to all arms at round `t` and may be adversarial.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod sbe;

pub use design::{
    covariance_pairwise, deo, design_certificate, g_optimal, policy_moments, DesignCertificate,
    DesignPolicy, FeatureSet, PolicyMoments,
};
pub use environment::{Environment, NoiseSpec, ShiftKind, ShiftSpec};
pub use error::{DesignError, EnvError, EstimatorError, HarnessError, LinalgError, SbeError};
pub use estimator::{EstimatorState, RidgeConfig};
pub use harness::{run_experiment, ExperimentConfig, Mode};
pub use linalg::{NormResult, PsdMatrix};
pub use sbe::{RunRecord, SbeConfig};
