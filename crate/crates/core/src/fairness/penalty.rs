use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which disparity the training penalty targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMetric {
    Dp,
    Cf,
    Csp,
}

impl std::fmt::Display for FairnessMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FairnessMetric::Dp => "dp",
            FairnessMetric::Cf => "cf",
            FairnessMetric::Csp => "csp",
        })
    }
}

/// Penalty definition: retrospective weight `alpha` on realised returns and
/// prospective weight `beta` on value estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub metric: FairnessMetric,
    pub alpha: f64,
    pub beta: f64,
    /// Legitimate-factor levels; required for CSP.
    #[serde(default)]
    pub lf_domain: Vec<usize>,
}

impl PenaltySpec {
    pub fn new(metric: FairnessMetric, alpha: f64, beta: f64) -> Self {
        Self { metric, alpha, beta, lf_domain: Vec::new() }
    }

    pub fn with_lf_domain(mut self, lf_domain: Vec<usize>) -> Self {
        self.lf_domain = lf_domain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.metric == FairnessMetric::Csp && self.lf_domain.is_empty() {
            return Err(Error::Config("CSP penalty needs a legitimate-factor domain".into()));
        }
        Ok(())
    }

    /// True when both weights vanish, i.e. the penalty is identically zero.
    pub fn is_inert(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }

    fn expect(&self, metric: FairnessMetric) -> Result<()> {
        self.validate()?;
        if self.metric != metric {
            return Err(Error::Config(format!(
                "penalty spec is for {}, not {metric}",
                self.metric
            )));
        }
        Ok(())
    }
}

/// `alpha * |G1 - G0| + beta * |V1 - V0|` from group averages.
pub fn dp_penalty(group_returns: (f64, f64), group_values: (f64, f64), spec: &PenaltySpec) -> Result<f64> {
    spec.expect(FairnessMetric::Dp)?;
    Ok(spec.alpha * (group_returns.0 - group_returns.1).abs()
        + spec.beta * (group_values.0 - group_values.1).abs())
}

/// Per-agent `(return, value)` pairs in the factual and counterfactual runs.
pub fn cf_penalty(
    factual: &[(f64, f64)],
    counterfactual: &[(f64, f64)],
    spec: &PenaltySpec,
) -> Result<f64> {
    spec.expect(FairnessMetric::Cf)?;
    if factual.len() != counterfactual.len() {
        return Err(Error::Validation(format!(
            "factual has {} agents, counterfactual has {}",
            factual.len(),
            counterfactual.len()
        )));
    }
    let (mut dg, mut dv) = (0.0, 0.0);
    for (f, c) in factual.iter().zip(counterfactual) {
        dg += (f.0 - c.0).abs();
        dv += (f.1 - c.1).abs();
    }
    Ok(spec.alpha * dg + spec.beta * dv)
}

/// Per-level `(sensitive, non-sensitive)` averages of returns and values.
///
/// Only levels present in both maps contribute.
pub fn csp_penalty(
    per_lf_group_returns: &BTreeMap<usize, (f64, f64)>,
    per_lf_group_values: &BTreeMap<usize, (f64, f64)>,
    spec: &PenaltySpec,
) -> Result<f64> {
    spec.expect(FairnessMetric::Csp)?;
    let mut dg = 0.0;
    let mut dv = 0.0;
    let mut levels = 0;
    for (lf, g) in per_lf_group_returns {
        let Some(v) = per_lf_group_values.get(lf) else { continue };
        dg += (g.0 - g.1).abs();
        dv += (v.0 - v.1).abs();
        levels += 1;
    }
    if levels == 0 {
        return Err(Error::EmptyGroup(
            "no legitimate-factor level has both groups populated".into(),
        ));
    }
    Ok(spec.alpha * dg + spec.beta * dv)
}

pub const NORMALIZER_FLOOR: f64 = 1e-8;

/// Divides each penalty component by the running maximum of its own
/// magnitude, so both land in `[0, 1]` before weighting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyNormalizer {
    pub retrospective_max: f64,
    pub prospective_max: f64,
}

impl PenaltyNormalizer {
    /// Folds this episode's raw magnitudes into the running maxima and
    /// returns the two divisors to use for this episode.
    pub fn observe(&mut self, retrospective: f64, prospective: f64) -> (f64, f64) {
        self.retrospective_max = self.retrospective_max.max(retrospective.abs());
        self.prospective_max = self.prospective_max.max(prospective.abs());
        (self.retrospective_scale(), self.prospective_scale())
    }

    pub fn retrospective_scale(&self) -> f64 {
        self.retrospective_max.max(NORMALIZER_FLOOR)
    }

    pub fn prospective_scale(&self) -> f64 {
        self.prospective_max.max(NORMALIZER_FLOOR)
    }
}
