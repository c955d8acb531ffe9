//! A desk-scale laboratory for prompt-aware multi-objective preference
//! alignment on synthetic worlds where every objective can be computed
//! exactly.
//!
//! The pipeline: [`environment`] builds a world and samples preference data,
//! [`rewards`] fits one Bradley-Terry reward model per objective,
//! [`orchestrator`] learns a prompt → weight map from the normalized reward
//! vectors of preferred responses, [`policy`] optimizes KL-regularized
//! policies under fixed or adaptive weights, and [`analysis`] measures
//! alignment gaps, Pareto sweeps and learning curves.

pub mod analysis;
pub mod environment;
pub mod error;
pub mod io;
pub mod nn;
pub mod orchestrator;
pub mod policy;
pub mod rewards;
pub mod simplex;

pub use error::{Error, Result};
pub use simplex::{RewardVector, WeightVector};
