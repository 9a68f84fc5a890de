//! Differentiable objectives over a [`ParameterSet`].

use crate::error::{Error, Result};

use super::loss::{sample_terms, PpoConfig, Sample};
use super::network::{Head, ParameterSet};

/// A scalar function of the parameters with an analytic gradient.
pub trait Objective {
    fn evaluate(&self, params: &ParameterSet) -> Result<f64>;

    /// Adds `d objective / d params` into `grad`.
    fn accumulate(&self, params: &ParameterSet, grad: &mut ParameterSet) -> Result<()>;
}

/// Gradient of `objective` at `params`; fails naming the first non-finite
/// entry.
pub fn gradient<O: Objective + ?Sized>(objective: &O, params: &ParameterSet) -> Result<ParameterSet> {
    let mut grad = params.zeros_like();
    objective.accumulate(params, &mut grad)?;
    grad.check_finite("gradient")?;
    Ok(grad)
}

/// One population member whose value estimate enters the prospective term:
/// the mean of its own probe states under the parameters being optimised,
/// pooled with values already fixed by other networks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Member {
    pub own: Vec<usize>,
    pub frozen: Vec<f64>,
}

impl Member {
    pub fn frozen(value: f64) -> Self {
        Self { own: Vec::new(), frozen: vec![value] }
    }

    fn count(&self) -> usize {
        self.own.len() + self.frozen.len()
    }
}

/// `coefficient * sum_k |mean_{A_k} V - mean_{B_k} V|`, the value-estimate
/// half of a fairness penalty, differentiable through the value head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProspectiveTerm {
    pub coefficient: f64,
    pub probes: Vec<Vec<f64>>,
    pub members: Vec<Member>,
    /// Member indices on each side of every compared pair of groups.
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

impl ProspectiveTerm {
    pub fn validate(&self, obs_dim: usize) -> Result<()> {
        if let Some(p) = self.probes.iter().find(|p| p.len() != obs_dim) {
            return Err(Error::Shape(format!("probe of length {} for obs dim {obs_dim}", p.len())));
        }
        for m in &self.members {
            if m.own.iter().any(|&i| i >= self.probes.len()) {
                return Err(Error::Validation("member references a missing probe".into()));
            }
        }
        for (a, b) in &self.pairs {
            if a.is_empty() || b.is_empty() {
                return Err(Error::EmptyGroup("prospective pair with an empty side".into()));
            }
            if a.iter().chain(b).any(|&m| m >= self.members.len()) {
                return Err(Error::Validation("pair references a missing member".into()));
            }
            if a.iter().chain(b).any(|&m| self.members[m].count() == 0) {
                return Err(Error::Validation("compared member without value estimates".into()));
            }
        }
        Ok(())
    }

    /// Whether any gradient reaches the parameters.
    pub fn is_active(&self) -> bool {
        self.coefficient != 0.0 && self.members.iter().any(|m| !m.own.is_empty())
    }

    fn member_values(&self, probe_values: &[f64]) -> Vec<f64> {
        self.members
            .iter()
            .map(|m| {
                if m.count() == 0 {
                    return 0.0;
                }
                let own: f64 = m.own.iter().map(|&i| probe_values[i]).sum();
                (own + m.frozen.iter().sum::<f64>()) / m.count() as f64
            })
            .collect()
    }

    fn side_mean(side: &[usize], values: &[f64]) -> f64 {
        side.iter().map(|&m| values[m]).sum::<f64>() / side.len() as f64
    }

    /// Raw disparity sum, before the coefficient.
    pub fn disparity(&self, params: &ParameterSet) -> f64 {
        let probe_values: Vec<f64> = self.probes.iter().map(|o| params.value(o)).collect();
        let values = self.member_values(&probe_values);
        self.pairs
            .iter()
            .map(|(a, b)| (Self::side_mean(a, &values) - Self::side_mean(b, &values)).abs())
            .sum()
    }

    pub fn evaluate(&self, params: &ParameterSet) -> f64 {
        if self.coefficient == 0.0 {
            return 0.0;
        }
        self.coefficient * self.disparity(params)
    }

    /// Adds `scale * d term / d params` into `grad`.
    pub fn accumulate(&self, params: &ParameterSet, scale: f64, grad: &mut ParameterSet) {
        if !self.is_active() || scale == 0.0 {
            return;
        }
        let caches: Vec<_> = self.probes.iter().map(|o| params.forward_cached(Head::Value, o)).collect();
        let probe_values: Vec<f64> = caches.iter().map(|c| c.output()[0]).collect();
        let values = self.member_values(&probe_values);
        let mut d_member = vec![0.0; self.members.len()];
        for (a, b) in &self.pairs {
            let gap = Self::side_mean(a, &values) - Self::side_mean(b, &values);
            // subgradient 0 at equality
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            for &m in a {
                d_member[m] += sign / a.len() as f64;
            }
            for &m in b {
                d_member[m] -= sign / b.len() as f64;
            }
        }
        let mut d_probe = vec![0.0; self.probes.len()];
        for (m, d) in self.members.iter().zip(&d_member) {
            for &i in &m.own {
                d_probe[i] += d / m.count() as f64;
            }
        }
        for (cache, d) in caches.iter().zip(d_probe) {
            if d != 0.0 {
                params.backward(Head::Value, cache, &[scale * self.coefficient * d], grad);
            }
        }
    }
}

/// `ppo_loss - lambda * (retrospective + prospective(params))` over one
/// minibatch; advantages are taken as stored.
#[derive(Debug, Clone, Copy)]
pub struct FairPpoObjective<'a> {
    pub samples: &'a [Sample],
    pub cfg: &'a PpoConfig,
    pub lambda: f64,
    /// Weighted, normalised retrospective penalty; constant in the parameters.
    pub retrospective: f64,
    pub prospective: Option<&'a ProspectiveTerm>,
}

impl<'a> FairPpoObjective<'a> {
    /// Plain PPO.
    pub fn ppo(samples: &'a [Sample], cfg: &'a PpoConfig) -> Self {
        Self { samples, cfg, lambda: 0.0, retrospective: 0.0, prospective: None }
    }

    pub fn penalty(&self, params: &ParameterSet) -> f64 {
        self.retrospective + self.prospective.map_or(0.0, |p| p.evaluate(params))
    }
}

impl Objective for FairPpoObjective<'_> {
    fn evaluate(&self, params: &ParameterSet) -> Result<f64> {
        super::loss::fair_ppo_loss(params, self.samples, self.penalty(params), self.lambda, self.cfg)
    }

    fn accumulate(&self, params: &ParameterSet, grad: &mut ParameterSet) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let scale = 1.0 / self.samples.len() as f64;
        for s in self.samples {
            sample_terms(params, s, s.advantage * s.weight, self.cfg, Some((&mut *grad, scale)));
        }
        if let Some(p) = self.prospective {
            if self.lambda != 0.0 {
                p.accumulate(params, -self.lambda, grad);
            }
        }
        Ok(())
    }
}
