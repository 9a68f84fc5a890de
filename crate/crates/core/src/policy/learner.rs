//! One actor-critic with its optimiser: acting, and the clipped-surrogate
//! update with an optional fairness penalty.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::adam::{optimize_step, AdamState};
use super::loss::{dynamic_lambda, ppo_loss, LambdaMode, PpoConfig, Sample};
use super::network::{log_softmax, Architecture, ParameterSet};
use super::objective::{gradient, FairPpoObjective, ProspectiveTerm};

/// A sampled action with the quantities needed for a later update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
}

/// Inverse-CDF draw from `log_probs` with a uniform `u` in `[0, 1)`.
pub fn sample_index(log_probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Lowest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Fairness information handed to one update.
#[derive(Debug, Clone)]
pub struct PenaltyUpdate {
    pub lambda_mode: LambdaMode,
    /// Weighted, normalised retrospective component.
    pub retrospective: f64,
    pub prospective: Option<ProspectiveTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub lambda: f64,
    pub penalty: f64,
    /// PPO objective on the whole batch before the first step.
    pub initial_objective: f64,
    pub minibatches: usize,
}

#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub params: ParameterSet,
    pub cfg: PpoConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
}

impl PpoLearner {
    pub fn new(arch: Architecture, cfg: PpoConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParameterSet::init(arch, &mut rng);
        let adam = AdamState::new(params.len());
        Ok(Self { params, cfg, adam, rng })
    }

    /// Replaces the weights (e.g. from a checkpoint) and resets the optimiser.
    pub fn with_params(mut self, params: ParameterSet) -> Result<Self> {
        if params.architecture() != self.params.architecture() {
            return Err(Error::Checkpoint("architecture mismatch".into()));
        }
        self.adam = AdamState::new(params.len());
        self.params = params;
        Ok(self)
    }

    pub fn architecture(&self) -> &Architecture {
        self.params.architecture()
    }

    pub fn act(&self, obs: &[f64], u: f64) -> Decision {
        let logp = log_softmax(&self.params.logits(obs));
        let action = sample_index(&logp, u);
        Decision { action, log_prob: logp[action], value: self.params.value(obs) }
    }

    pub fn greedy(&self, obs: &[f64]) -> usize {
        argmax(&self.params.logits(obs))
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.params.value(obs)
    }

    /// Runs `epochs` passes of shuffled minibatch updates over `samples`.
    pub fn update(&mut self, samples: &[Sample], penalty: Option<&PenaltyUpdate>) -> Result<UpdateStats> {
        if samples.is_empty() {
            return Ok(UpdateStats::default());
        }
        if let Some(p) = penalty.and_then(|p| p.prospective.as_ref()) {
            p.validate(self.params.architecture().obs_dim)?;
        }
        let cfg = self.cfg.clone();
        let mut stats = UpdateStats::default();
        let (lambda, retrospective, prospective) = match penalty {
            None => (0.0, 0.0, None),
            Some(p) => {
                let full = normalized(samples, cfg.normalize_advantages);
                stats.initial_objective = ppo_loss(&self.params, &full, &cfg)?;
                let prosp = p.prospective.as_ref().map_or(0.0, |t| t.evaluate(&self.params));
                stats.penalty = p.retrospective + prosp;
                let lambda = match p.lambda_mode {
                    LambdaMode::Fixed(l) => l,
                    LambdaMode::Dynamic => dynamic_lambda(stats.initial_objective, stats.penalty),
                };
                (lambda, p.retrospective, p.prospective.as_ref().filter(|t| t.is_active()))
            }
        };
        stats.lambda = lambda;

        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let mb: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let mb = normalized(&mb, cfg.normalize_advantages);
                let objective = FairPpoObjective { samples: &mb, cfg: &cfg, lambda, retrospective, prospective };
                let mut grad = gradient(&objective, &self.params)?;
                // ascend the objective = descend its negation
                grad.scale(-1.0);
                if let Some(max) = cfg.max_grad_norm {
                    let norm = grad.l2_norm();
                    if norm > max {
                        grad.scale(max / norm);
                    }
                }
                optimize_step(&mut self.params, &grad, &mut self.adam, cfg.learning_rate)?;
                stats.minibatches += 1;
            }
        }
        self.params.check_finite("parameters")?;
        Ok(stats)
    }
}

/// Standardises advantages to zero mean and unit variance.
fn normalized(samples: &[Sample], enabled: bool) -> Vec<Sample> {
    let mut out = samples.to_vec();
    if !enabled || out.len() < 2 {
        return out;
    }
    let n = out.len() as f64;
    let mean = out.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = out.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for s in &mut out {
        s.advantage = (s.advantage - mean) / std;
    }
    out
}
