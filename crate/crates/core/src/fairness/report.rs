use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    conditional_statistical_disparity, counterfactual_disparity, demographic_disparity, gini, jfi,
    nnsw, price_of_fairness,
};
use crate::agents::GroupPartition;
use crate::error::Result;

/// All fairness and inequality statistics for one population outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub mean_reward: f64,
    pub dp: f64,
    pub cf: Option<f64>,
    pub csp_by_lf: BTreeMap<usize, f64>,
    pub csp_total: f64,
    pub csp_skipped: Vec<usize>,
    pub gini: f64,
    pub jfi: f64,
    pub nnsw: f64,
    pub price_of_fairness: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions<'a> {
    /// Per-agent returns from the paired counterfactual run.
    pub counterfactual: Option<&'a [f64]>,
    /// Mean reward of the unpenalised baseline, for the price of fairness.
    pub baseline_mean_reward: Option<f64>,
}

pub fn report(
    returns: &[f64],
    partition: &GroupPartition,
    options: &ReportOptions<'_>,
) -> Result<FairnessReport> {
    let dp = demographic_disparity(returns, partition)?;
    let csp = conditional_statistical_disparity(returns, partition)?;
    let cf = options
        .counterfactual
        .map(|c| counterfactual_disparity(returns, c))
        .transpose()?;
    let mean_reward = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    let price_of_fairness = options
        .baseline_mean_reward
        .map(|b| price_of_fairness(mean_reward, b))
        .transpose()?;
    Ok(FairnessReport {
        mean_reward,
        dp,
        cf,
        csp_by_lf: csp.per_lf,
        csp_total: csp.total,
        csp_skipped: csp.skipped,
        gini: gini(returns)?,
        jfi: jfi(returns)?,
        nnsw: nnsw(returns)?,
        price_of_fairness,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl FairnessReport {
    /// Column names for [`FairnessReport::csv_record`]; one `csp_<label>`
    /// column per legitimate-factor level, in the order given.
    pub fn csv_header(lf_labels: &[&str]) -> Vec<String> {
        let mut h: Vec<String> = ["mean_reward", "dp", "cf", "csp_total"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(lf_labels.iter().map(|l| format!("csp_{l}")));
        h.extend(["gini", "jfi", "nnsw", "price_of_fairness"].iter().map(|s| s.to_string()));
        h
    }

    /// One CSV row; levels missing from the report (skipped) are left empty.
    pub fn csv_record(&self, lf_levels: &[usize]) -> Vec<String> {
        let mut r = vec![
            self.mean_reward.to_string(),
            self.dp.to_string(),
            opt(self.cf),
            self.csp_total.to_string(),
        ];
        r.extend(lf_levels.iter().map(|lf| opt(self.csp_by_lf.get(lf).copied())));
        r.extend([
            self.gini.to_string(),
            self.jfi.to_string(),
            self.nnsw.to_string(),
            opt(self.price_of_fairness),
        ]);
        r
    }
}
