use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{mean_over, GroupPartition};
use crate::error::{Error, Result};

/// `|mean(N1) - mean(N0)|` over per-agent returns indexed by agent id.
pub fn demographic_disparity(returns: &[f64], partition: &GroupPartition) -> Result<f64> {
    if partition.sensitive.is_empty() || partition.non_sensitive.is_empty() {
        return Err(Error::EmptyGroup(
            "demographic disparity needs both groups populated".into(),
        ));
    }
    let g1 = mean_over(returns, &partition.sensitive)?;
    let g0 = mean_over(returns, &partition.non_sensitive)?;
    Ok((g1 - g0).abs())
}

/// Sum over agents of `|G_i - G'_i|` between a factual and counterfactual run.
pub fn counterfactual_disparity(factual: &[f64], counterfactual: &[f64]) -> Result<f64> {
    if factual.len() != counterfactual.len() {
        return Err(Error::Validation(format!(
            "factual has {} agents, counterfactual has {}",
            factual.len(),
            counterfactual.len()
        )));
    }
    Ok(factual
        .iter()
        .zip(counterfactual)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Per-level demographic disparities within legitimate-factor strata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CspResult {
    pub per_lf: BTreeMap<usize, f64>,
    /// Levels where one of the two groups was empty; they contribute nothing.
    pub skipped: Vec<usize>,
    pub total: f64,
}

pub fn conditional_statistical_disparity(
    returns: &[f64],
    partition: &GroupPartition,
) -> Result<CspResult> {
    let mut out = CspResult::default();
    for &lf in partition.by_lf.keys() {
        let n1 = partition.stratum(lf, true);
        let n0 = partition.stratum(lf, false);
        if n1.is_empty() || n0.is_empty() {
            out.skipped.push(lf);
            continue;
        }
        let gap = (mean_over(returns, &n1)? - mean_over(returns, &n0)?).abs();
        out.per_lf.insert(lf, gap);
        out.total += gap;
    }
    if out.per_lf.is_empty() {
        return Err(Error::EmptyGroup(
            "no legitimate-factor level has both groups populated".into(),
        ));
    }
    Ok(out)
}
