//! Agents, groups, trajectories and returns.
//!
//! Agent ids are dense indices assigned at environment reset, so per-agent
//! quantities (returns, values) are plain slices indexed by id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identity and attributes of one agent in a population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: usize,
    /// Sensitive attribute; `true` places the agent in the sensitive group.
    pub z: bool,
    /// Legitimate-factor level (berry preference, patient priority).
    pub lf: usize,
    pub action_count: usize,
}

/// One recorded decision of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value_estimate: f64,
    pub terminal: bool,
}

/// Per-agent step sequences of one episode of length `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    horizon: usize,
    steps: Vec<Vec<StepRecord>>,
}

impl TrajectoryBatch {
    /// Builds a batch from per-agent sequences (index = agent id).
    ///
    /// Sequences longer than `horizon`, or carrying a terminal flag before
    /// their last record, are rejected.
    pub fn new(horizon: usize, steps: Vec<Vec<StepRecord>>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Validation("episode length must be positive".into()));
        }
        for (id, seq) in steps.iter().enumerate() {
            if seq.len() > horizon {
                return Err(Error::Validation(format!(
                    "agent {id} has {} steps, horizon is {horizon}",
                    seq.len()
                )));
            }
            if let Some(pos) = seq.iter().position(|s| s.terminal) {
                if pos + 1 != seq.len() {
                    return Err(Error::Validation(format!(
                        "agent {id} has steps after its terminal flag"
                    )));
                }
            }
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn agent_count(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self, agent: usize) -> Result<&[StepRecord]> {
        self.steps
            .get(agent)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownAgent(agent))
    }

    pub fn rewards(&self, agent: usize) -> Result<Vec<f64>> {
        Ok(self.steps(agent)?.iter().map(|s| s.reward).collect())
    }

    /// Undiscounted return of every agent, indexed by id.
    pub fn returns(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|seq| seq.iter().map(|s| s.reward).sum())
            .collect()
    }
}

/// Sensitive / non-sensitive split plus legitimate-factor strata.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupPartition {
    pub sensitive: BTreeSet<usize>,
    pub non_sensitive: BTreeSet<usize>,
    pub by_lf: BTreeMap<usize, BTreeSet<usize>>,
}

impl GroupPartition {
    pub fn agent_count(&self) -> usize {
        self.sensitive.len() + self.non_sensitive.len()
    }

    /// Agents with legitimate factor `lf` inside the sensitive (`z = true`)
    /// or non-sensitive group.
    pub fn stratum(&self, lf: usize, z: bool) -> BTreeSet<usize> {
        let side = if z { &self.sensitive } else { &self.non_sensitive };
        self.by_lf
            .get(&lf)
            .map(|members| members.intersection(side).copied().collect())
            .unwrap_or_default()
    }
}

/// Sum of an agent's rewards over its recorded steps.
pub fn total_return(batch: &TrajectoryBatch, agent: usize) -> Result<f64> {
    Ok(batch.steps(agent)?.iter().map(|s| s.reward).sum())
}

/// Suffix sums `G_t = r_t + gamma * G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma {gamma} outside [0, 1]")));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Sample average of `values` over the ids in `group`.
pub fn mean_over(values: &[f64], group: &BTreeSet<usize>) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::EmptyGroup("cannot average over an empty group".into()));
    }
    let mut sum = 0.0;
    for &id in group {
        sum += *values.get(id).ok_or(Error::UnknownAgent(id))?;
    }
    Ok(sum / group.len() as f64)
}

/// Average undiscounted return of the agents in `group`.
pub fn group_mean_return(batch: &TrajectoryBatch, group: &BTreeSet<usize>) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::EmptyGroup("cannot average over an empty group".into()));
    }
    let mut sum = 0.0;
    for &id in group {
        sum += total_return(batch, id)?;
    }
    Ok(sum / group.len() as f64)
}

/// Groups a population by sensitive attribute and legitimate factor.
pub fn partition(profiles: &[AgentProfile]) -> Result<GroupPartition> {
    if profiles.is_empty() {
        return Err(Error::Validation("empty population".into()));
    }
    let mut out = GroupPartition::default();
    let mut seen = BTreeSet::new();
    for p in profiles {
        if !seen.insert(p.id) {
            return Err(Error::Validation(format!("duplicate agent id {}", p.id)));
        }
        if p.z {
            out.sensitive.insert(p.id);
        } else {
            out.non_sensitive.insert(p.id);
        }
        out.by_lf.entry(p.lf).or_default().insert(p.id);
    }
    Ok(out)
}
