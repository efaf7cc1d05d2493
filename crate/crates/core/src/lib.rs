//! One-hidden-layer network synthesis with certified uniform error.
//!
//! The crate builds explicit weights for networks
//! `x ↦ w₀ + Σⱼ aⱼ·σ(w₀ⱼ + ŵⱼ·x)` approximating polynomial or continuous
//! targets, and checks the result numerically on tensor grids.

pub mod algebra;
pub mod constructor;
pub mod error;
pub mod minimax;
pub mod monomials;
pub mod network;
pub mod scenarios;
pub mod verify;

pub use constructor::{
    construct_continuous, construct_polynomial, construct_random_features, ConstructionReport,
    ConstructionRequest, ScaleSchedule, Status, Target,
};
pub use error::{Result, UapError};
pub use minimax::{ActivationSpec, Interval};
pub use monomials::{MonomialBasis, MultiIndex, MultiPoly};
pub use network::{NetworkDocument, NetworkWeights};
pub use verify::{BoxDomain, GridSpec};
