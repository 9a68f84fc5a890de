//! SOTO: every agent owns a self-oriented and a team-oriented head. The
//! team head is chosen with a probability that grows with training progress
//! and learns from advantages reweighted towards the worse-off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::{restore_into, snapshot, Algorithm, AlgorithmKind, TrainLog};
use crate::error::{Error, Result};
use crate::policy::{Architecture, Checkpoint, PpoConfig, PpoLearner};
use crate::rollout::{
    decide, derive_seed, purpose, stream_rngs, ActContext, ActMode, Actor, EnvSpec, EnvState, EpisodeOutcome,
    StreamLog, World,
};

pub const SELF_HEAD: usize = 0;
pub const TEAM_HEAD: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SotoConfig {
    pub alpha_fairness: f64,
    pub beta_proportion: f64,
    pub ppo: PpoConfig,
}

impl Default for SotoConfig {
    fn default() -> Self {
        Self::ah()
    }
}

impl SotoConfig {
    pub fn ah() -> Self {
        Self {
            alpha_fairness: 0.9,
            beta_proportion: 0.5,
            ppo: PpoConfig {
                learning_rate: 1e-4,
                clip_epsilon: 0.2,
                epochs: 5,
                minibatch_size: 256,
                c2: 0.05,
                ..PpoConfig::default()
            },
        }
    }

    pub fn hs() -> Self {
        Self {
            alpha_fairness: 0.9,
            beta_proportion: 0.5,
            ppo: PpoConfig {
                learning_rate: 5e-4,
                clip_epsilon: 0.2,
                epochs: 5,
                minibatch_size: 64,
                c2: 0.01,
                ..PpoConfig::default()
            },
        }
    }

    pub fn for_env(env: &EnvSpec) -> Self {
        match env {
            EnvSpec::Ah(_) => Self::ah(),
            EnvSpec::Hs(_) => Self::hs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_fairness >= 0.0) || !self.alpha_fairness.is_finite() {
            return Err(Error::Config(format!("SOTO alpha must be >= 0, got {}", self.alpha_fairness)));
        }
        if !(self.beta_proportion > 0.0) || !self.beta_proportion.is_finite() {
            return Err(Error::Config(format!("SOTO beta must be > 0, got {}", self.beta_proportion)));
        }
        self.ppo.validate()
    }
}

/// Probability of acting with the team head at training `progress` in [0, 1].
pub fn soto_team_probability(progress: f64, cfg: &SotoConfig) -> f64 {
    (2.0 * cfg.beta_proportion * progress).clamp(0.0, 1.0)
}

pub fn soto_select_head(rng: &mut impl Rng, progress: f64, cfg: &SotoConfig) -> usize {
    if rng.gen::<f64>() < soto_team_probability(progress, cfg) {
        TEAM_HEAD
    } else {
        SELF_HEAD
    }
}

/// `w_i ∝ u_i^(-alpha)`, scaled to mean 1. Utilities must be positive.
pub fn soto_welfare_weight(utilities: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(Error::EmptyGroup("no utilities to weight".into()));
    }
    if let Some(u) = utilities.iter().find(|u| !(**u > 0.0) || !u.is_finite()) {
        return Err(Error::Validation(format!("welfare weights need positive utilities, got {u}")));
    }
    let raw: Vec<f64> = utilities.iter().map(|u| u.powf(-alpha)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Welfare weights of arbitrary-sign returns, shifted so the smallest one
/// sits at `max(1, mean |u|)`.
pub fn shifted_welfare_weight(utilities: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(Error::EmptyGroup("no utilities to weight".into()));
    }
    let min = utilities.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = (utilities.iter().map(|u| u.abs()).sum::<f64>() / utilities.len() as f64).max(1.0);
    let shifted: Vec<f64> = utilities.iter().map(|u| u - min + scale).collect();
    soto_welfare_weight(&shifted, alpha)
}

#[derive(Debug, Clone)]
pub struct SotoFamily {
    pub heads: [PpoLearner; 2],
}

#[derive(Debug, Clone)]
pub struct Soto {
    env: EnvSpec,
    pub cfg: SotoConfig,
    pub families: Vec<SotoFamily>,
    /// `(progress, head)` per stream for the last played episode.
    pub last_heads: Vec<(f64, usize)>,
}

impl Soto {
    pub fn new(env: EnvSpec, cfg: SotoConfig, hidden: &[usize], seed: u64) -> Result<Self> {
        env.validate()?;
        cfg.validate()?;
        let mut k = 0u64;
        let mut learner = |r: usize| {
            k += 1;
            PpoLearner::new(
                Architecture::new(env.obs_dim(r), hidden.to_vec(), env.action_count(r)),
                cfg.ppo.clone(),
                derive_seed(seed, purpose::INIT, k),
            )
        };
        let families = (0..env.roles())
            .map(|r| Ok(SotoFamily { heads: [learner(r)?, learner(r)?] }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { env, cfg, families, last_heads: Vec::new() })
    }

    fn names(&self) -> Vec<String> {
        (0..self.families.len()).flat_map(|f| [format!("family.{f}.self"), format!("family.{f}.team")]).collect()
    }

    fn heads(&self, seed: u64, progress: f64) -> Vec<usize> {
        (0..self.env.streams())
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose::HEADS, s as u64));
                soto_select_head(&mut rng, progress, &self.cfg)
            })
            .collect()
    }

    fn run(&self, state: EnvState, seed: u64, progress: f64, mode: ActMode, check: bool) -> Result<(EpisodeOutcome, SotoActor<'_>)> {
        let heads = self.heads(seed, progress);
        let mut actor = SotoActor {
            soto: self,
            mode,
            rngs: stream_rngs(seed, heads.len()),
            logs: vec![StreamLog::default(); heads.len()],
            heads,
        };
        let outcome = state.run(&mut actor, check)?;
        Ok((outcome, actor))
    }

    /// Team-head weight of each population member after an episode.
    fn member_weights(&self, outcome: &EpisodeOutcome) -> Result<Vec<f64>> {
        let alpha = self.cfg.alpha_fairness;
        match self.env {
            EnvSpec::Ah(_) => shifted_welfare_weight(&outcome.returns, alpha),
            EnvSpec::Hs(_) => {
                // patients are weighted as impaired vs unimpaired groups
                let mut sums = [(0.0, 0usize); 2];
                for (r, p) in outcome.returns.iter().zip(&outcome.profiles) {
                    let g = &mut sums[p.z as usize];
                    g.0 += r;
                    g.1 += 1;
                }
                let present: Vec<usize> = (0..2).filter(|g| sums[*g].1 > 0).collect();
                if present.len() < 2 {
                    return Ok(vec![1.0; outcome.returns.len()]);
                }
                let means: Vec<f64> = present.iter().map(|g| sums[*g].0 / sums[*g].1 as f64).collect();
                let w = shifted_welfare_weight(&means, alpha)?;
                Ok(outcome.profiles.iter().map(|p| w[p.z as usize]).collect())
            }
        }
    }
}

struct SotoActor<'a> {
    soto: &'a Soto,
    mode: ActMode,
    heads: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    logs: Vec<StreamLog>,
}

impl Actor for SotoActor<'_> {
    fn act(&mut self, stream: usize, obs: &[f64], ctx: &ActContext<'_>) -> Result<usize> {
        let soto = self.soto;
        let learner = &soto.families[soto.env.role_of(stream)].heads[self.heads[stream]];
        let mut t = decide(learner, obs, self.mode, &mut self.rngs[stream]);
        t.member = ctx.own;
        let a = t.action;
        self.logs[stream].transitions.push(t);
        Ok(a)
    }

    fn reward(&mut self, stream: usize, index: usize, amount: f64) {
        self.logs[stream].transitions[index].reward += amount;
    }

    fn tag(&mut self, stream: usize, index: usize, member: usize) {
        self.logs[stream].transitions[index].member = Some(member);
    }
}

impl Algorithm for Soto {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Soto
    }

    fn env(&self) -> &EnvSpec {
        &self.env
    }

    fn train_episode(&mut self, seed: u64, progress: f64) -> Result<TrainLog> {
        let progress = progress.clamp(0.0, 1.0);
        let (outcome, actor) = self.run(self.env.reset(seed, World::Factual)?, seed, progress, ActMode::Sample, false)?;
        let weights = self.member_weights(&outcome)?;
        let ppo = self.cfg.ppo.clone();
        let mut batches = vec![[Vec::new(), Vec::new()]; self.families.len()];
        for (s, log) in actor.logs.iter().enumerate() {
            let head = actor.heads[s];
            let samples = if head == TEAM_HEAD {
                log.samples(&ppo, |t| t.member.map_or(1.0, |m| weights[m]))?
            } else {
                log.samples(&ppo, |_| 1.0)?
            };
            batches[self.env.role_of(s)][head].extend(samples);
        }
        self.last_heads = actor.heads.iter().map(|h| (progress, *h)).collect();
        for (family, batch) in self.families.iter_mut().zip(&batches) {
            for (learner, samples) in family.heads.iter_mut().zip(batch) {
                if !samples.is_empty() {
                    learner.update(samples, None)?;
                }
            }
        }
        Ok(TrainLog { outcome, counterfactual: None, penalty: None })
    }

    fn play(&self, state: EnvState, seed: u64, mode: ActMode, check: bool) -> Result<EpisodeOutcome> {
        Ok(self.run(state, seed, 1.0, mode, check)?.0)
    }

    fn checkpoint(&self) -> Checkpoint {
        snapshot(self.kind(), &self.env, self.names().into_iter().zip(self.families.iter().flat_map(|f| f.heads.iter())))
    }

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let names = self.names();
        restore_into(checkpoint, names.into_iter().zip(self.families.iter_mut().flat_map(|f| f.heads.iter_mut())))
    }
}
