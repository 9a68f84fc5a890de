use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{attach_price_of_fairness, train, RunRecord};
use crate::algorithm::AlgorithmKind;
use crate::benchmarks::SotoConfig;
use crate::error::{Error, Result};

/// A (configuration, seed) run that did not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<SweepFailure>,
}

/// One configuration per grid point: every (α, β) for Fair-PPO, every
/// welfare exponent for SOTO, a single run for PPO and FEN.
pub fn grid_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for kind in &base.sweep.algorithms {
        let mut c = base.clone();
        c.algorithm = *kind;
        match kind {
            AlgorithmKind::FairPpo => {
                for a in &base.sweep.alphas {
                    for b in &base.sweep.betas {
                        out.push(ExperimentConfig { alpha: *a, beta: *b, ..c.clone() });
                    }
                }
            }
            AlgorithmKind::Soto => {
                for a in &base.sweep.soto_alphas {
                    let soto = SotoConfig { alpha_fairness: *a, ..base.soto_config() };
                    out.push(ExperimentConfig { soto: Some(soto), ..c.clone() });
                }
            }
            AlgorithmKind::Ppo | AlgorithmKind::Fen => out.push(c),
        }
    }
    out
}

/// Runs every grid point for every seed in parallel. Failed runs are
/// recorded and the rest continue; records come back in grid order.
pub fn sweep(base: &ExperimentConfig) -> Result<SweepOutcome> {
    let configs = grid_configs(base);
    if configs.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(&ExperimentConfig, u64)> = configs.iter().flat_map(|c| base.seeds.iter().map(move |s| (c, *s))).collect();
    let results: Vec<Result<RunRecord>> = jobs.par_iter().map(|(c, s)| train(c, *s)).collect();
    let mut outcome = SweepOutcome::default();
    for ((c, seed), r) in jobs.iter().zip(results) {
        match r {
            Ok(rec) => outcome.records.push(rec),
            Err(e) => outcome.failures.push(SweepFailure {
                label: c.label(),
                config_hash: c.hash(),
                seed: *seed,
                error: e.to_string(),
            }),
        }
    }
    attach_price_of_fairness(&mut outcome.records);
    Ok(outcome)
}
