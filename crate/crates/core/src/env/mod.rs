//! Simulated environments.

pub mod ah;
pub mod hs;
