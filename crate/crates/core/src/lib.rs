//! Fair-PPO: proximal policy optimisation with retrospective and prospective
//! fairness penalties, two multi-agent environments, FEN and SOTO baselines,
//! and an experiment harness.

pub mod agents;
pub mod algorithm;
pub mod benchmarks;
pub mod error;
pub mod fairppo;
pub mod fairness;
pub mod harness;
pub mod env;
pub mod policy;
pub mod rollout;

pub use error::{Error, Result};
