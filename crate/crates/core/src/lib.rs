//! Offline reinforcement learning on imbalanced, constrained transition logs.
//!
//! The crate covers synthetic environment generation, exact dynamic
//! programming, tabular and network Q-learning (plain, double, conservative),
//! action-rebalancing resamplers, rule-based constraint enforcement, and
//! off-policy evaluation.

pub mod approx;
pub mod constraints;
pub mod dataset;
pub mod envgen;
pub mod error;
pub mod learners;
pub mod mdp;
pub mod ope;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod text;

pub use error::{Error, Result};
