//! PPO loss terms, advantage estimation and the fairness-penalised variant.

use serde::{Deserialize, Serialize};

use crate::agents::TrajectoryBatch;
use crate::error::{Error, Result};
use crate::fairness::PenaltySpec;

use super::network::{log_softmax, Head, ParameterSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    /// Value-loss weight.
    pub c1: f64,
    /// Entropy-bonus weight.
    pub c2: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            c1: 0.5,
            c2: 0.01,
            epochs: 4,
            minibatch_size: 64,
            learning_rate: 3e-4,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.gamma) || !unit.contains(&self.gae_lambda) {
            return Err(Error::Config("gamma and gae_lambda must lie in [0, 1]".into()));
        }
        if !(self.clip_epsilon > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("clip epsilon and learning rate must be positive".into()));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::Config("loss coefficients must be non-negative".into()));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::Config("epochs and minibatch size must be positive".into()));
        }
        Ok(())
    }
}

/// How the penalty weight is chosen each update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    Fixed(f64),
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairPpoConfig {
    pub ppo: PpoConfig,
    pub penalty: PenaltySpec,
    pub lambda_mode: LambdaMode,
}

impl FairPpoConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.penalty.validate()?;
        if let LambdaMode::Fixed(l) = self.lambda_mode {
            if !(l >= 0.0) {
                return Err(Error::Config(format!("fixed lambda must be >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

/// One training sample: a decision with its advantage and value target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target: f64,
    /// Multiplies the (normalised) advantage; 1 for plain PPO.
    pub weight: f64,
}

/// Flattened samples, agent by agent, aligned with a [`TrajectoryBatch`].
pub type AdvantageBatch = Vec<Sample>;

/// Generalised advantage estimation over one sequence.
///
/// `values` carries one entry per step plus a bootstrap value for the state
/// after the last step (ignored when that step is terminal).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || terminals.len() != n {
        return Err(Error::Shape(format!(
            "{n} rewards need {} values and {n} terminal flags, got {} and {}",
            n + 1,
            values.len(),
            terminals.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * gae_lambda * live * next;
        adv[t] = next;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// GAE for every agent of `batch`, bootstrapping each non-terminal sequence
/// end with `bootstrap[agent]`.
pub fn advantages(batch: &TrajectoryBatch, bootstrap: &[f64], cfg: &PpoConfig) -> Result<AdvantageBatch> {
    if bootstrap.len() != batch.agent_count() {
        return Err(Error::Shape(format!(
            "{} bootstrap values for {} agents",
            bootstrap.len(),
            batch.agent_count()
        )));
    }
    let mut out = Vec::new();
    for (agent, &boot) in bootstrap.iter().enumerate() {
        let steps = batch.steps(agent)?;
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let terminals: Vec<bool> = steps.iter().map(|s| s.terminal).collect();
        let mut values: Vec<f64> = steps.iter().map(|s| s.value_estimate).collect();
        values.push(boot);
        let (adv, targets) = gae(&rewards, &values, &terminals, cfg.gamma, cfg.gae_lambda)?;
        if adv.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric(format!("non-finite advantage for agent {agent}")));
        }
        for ((s, a), g) in steps.iter().zip(adv).zip(targets) {
            out.push(Sample {
                observation: s.observation.clone(),
                action: s.action,
                old_log_prob: s.log_prob,
                advantage: a,
                target: g,
                weight: 1.0,
            });
        }
    }
    Ok(out)
}

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Pessimistic clipped surrogate `min(r A, clip(r, 1-e, 1+e) A)`.
pub fn clip_objective(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(Error::Numeric(format!("probability ratio must be positive, got {ratio}")));
    }
    Ok((ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage))
}

pub fn value_loss(value: f64, target: f64) -> f64 {
    (value - target) * (value - target)
}

/// Per-sample terms of the PPO objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTerms {
    pub ratio: f64,
    pub clip: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub value: f64,
}

/// Evaluates the objective terms for one sample, optionally accumulating
/// `scale * d(objective)/d(params)` into `grad`.
pub(crate) fn sample_terms(
    params: &ParameterSet,
    s: &Sample,
    advantage: f64,
    cfg: &PpoConfig,
    grad: Option<(&mut ParameterSet, f64)>,
) -> SampleTerms {
    let pc = params.forward_cached(Head::Policy, &s.observation);
    let logp = log_softmax(pc.output());
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let ent = -probs
        .iter()
        .zip(&logp)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, l)| p * l)
        .sum::<f64>();
    let ratio = (logp[s.action] - s.old_log_prob).exp();
    let eps = cfg.clip_epsilon;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    let unclipped = ratio * advantage;
    // at a kink the two branches agree; the unclipped branch carries the slope
    let clip_active = unclipped > clipped;
    let clip = if clip_active { clipped } else { unclipped };

    let vc = params.forward_cached(Head::Value, &s.observation);
    let value = vc.output()[0];
    let vl = value_loss(value, s.target);

    if let Some((g, scale)) = grad {
        let d_logp_a = if clip_active { 0.0 } else { ratio * advantage };
        let mut d_logits = vec![0.0; probs.len()];
        for j in 0..probs.len() {
            let onehot = if j == s.action { 1.0 } else { 0.0 };
            let d_ent = if probs[j] > 0.0 { -probs[j] * (logp[j] + ent) } else { 0.0 };
            d_logits[j] = scale * (d_logp_a * (onehot - probs[j]) + cfg.c2 * d_ent);
        }
        params.backward(Head::Policy, &pc, &d_logits, g);
        let d_value = scale * (-cfg.c1 * 2.0 * (value - s.target));
        params.backward(Head::Value, &vc, &[d_value], g);
    }
    SampleTerms { ratio, clip, value_loss: vl, entropy: ent, value }
}

/// Mean over the batch of `L_clip - c1 L_vf + c2 H`, a quantity to maximise.
///
/// Advantages are used as stored (already normalised and weighted by the
/// caller when that is wanted).
pub fn ppo_loss(params: &ParameterSet, batch: &[Sample], cfg: &PpoConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        let t = sample_terms(params, s, s.advantage * s.weight, cfg, None);
        total += t.clip - cfg.c1 * t.value_loss + cfg.c2 * t.entropy;
    }
    let out = total / batch.len() as f64;
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite PPO objective".into()));
    }
    Ok(out)
}

/// PPO objective minus `lambda` times the fairness penalty.
pub fn fair_ppo_loss(
    params: &ParameterSet,
    batch: &[Sample],
    penalty_value: f64,
    lambda: f64,
    cfg: &PpoConfig,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(penalty_value >= 0.0) {
        return Err(Error::Validation(format!("penalty must be >= 0, got {penalty_value}")));
    }
    Ok(ppo_loss(params, batch, cfg)? - lambda * penalty_value)
}

pub const LAMBDA_MAX: f64 = 10.0;

/// Penalty weight that matches the penalty's magnitude to the PPO loss,
/// clipped to `[0, LAMBDA_MAX]`.
pub fn dynamic_lambda(ppo_loss_magnitude: f64, penalty_magnitude: f64) -> f64 {
    (ppo_loss_magnitude.abs() / (penalty_magnitude.abs() + 1e-8)).clamp(0.0, LAMBDA_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::StepRecord;
    use crate::policy::network::Architecture;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_examples() {
        assert_relative_eq!(entropy(&[0.25; 4]), 4f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(entropy(&[0.25; 4]), 1.3863, epsilon = 1e-4);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert_relative_eq!(entropy(&[0.5, 0.5]), 0.6931, epsilon = 1e-4);
    }

    #[test]
    fn clip_examples() {
        for eps in [0.1, 0.2, 0.5] {
            assert_eq!(clip_objective(1.0, 3.0, eps).unwrap(), 3.0);
        }
        assert_relative_eq!(clip_objective(1.5, 1.0, 0.2).unwrap(), 1.2, epsilon = 1e-15);
        assert_relative_eq!(clip_objective(0.5, -1.0, 0.2).unwrap(), -0.8, epsilon = 1e-15);
        assert!(clip_objective(0.0, 1.0, 0.2).is_err());
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(3.0, 3.0), 0.0);
        assert_eq!(value_loss(2.0, 5.0), 9.0);
        assert_eq!(value_loss(5.0, 2.0), value_loss(2.0, 5.0));
    }

    /// Brute-force GAE: A_t = sum_l (gamma lambda)^l delta_{t+l}.
    fn gae_oracle(r: &[f64], v: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
        let n = r.len();
        (0..n)
            .map(|t| {
                (t..n)
                    .map(|k| {
                        let next = if k + 1 == n { 0.0 } else { v[k + 1] };
                        let delta = r[k] + gamma * next - v[k];
                        (gamma * lam).powi((k - t) as i32) * delta
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn gae_examples() {
        let r = [1.0, 0.5, -0.2, 2.0];
        let v = [0.3, 0.1, -0.4, 0.9, 0.0];
        let term = [false, false, false, true];
        let (a, _) = gae(&r, &v, &term, 0.9, 0.0).unwrap();
        for t in 0..4 {
            let next = if t == 3 { 0.0 } else { v[t + 1] };
            assert_relative_eq!(a[t], r[t] + 0.9 * next - v[t], epsilon = 1e-15);
        }
        let (a, g) = gae(&r, &[0.0; 5], &term, 1.0, 1.0).unwrap();
        assert_eq!(a, vec![3.3, 2.3, 1.8, 2.0]);
        assert_eq!(a, g);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        v.push(0.0);
        let mut term = [false; 6];
        term[5] = true;
        let (a, _) = gae(&r, &v, &term, 0.97, 0.9).unwrap();
        for (x, y) in a.iter().zip(gae_oracle(&r, &v[..6], 0.97, 0.9)) {
            assert_relative_eq!(*x, y, epsilon = 1e-12);
        }
        assert!(matches!(gae(&r, &v[..3], &term, 0.9, 0.9), Err(Error::Shape(_))));
    }

    #[test]
    fn advantages_flatten_agents_in_order() {
        let rec = |r: f64, term: bool| StepRecord {
            observation: vec![r],
            action: 0,
            log_prob: -0.1,
            reward: r,
            value_estimate: 0.0,
            terminal: term,
        };
        let batch = TrajectoryBatch::new(2, vec![vec![rec(1.0, false), rec(2.0, true)], vec![rec(5.0, false)]]).unwrap();
        let cfg = PpoConfig { gamma: 1.0, gae_lambda: 1.0, ..Default::default() };
        let adv = advantages(&batch, &[0.0, 10.0], &cfg).unwrap();
        let a: Vec<f64> = adv.iter().map(|s| s.advantage).collect();
        assert_eq!(a, vec![3.0, 2.0, 15.0]);
        assert!(advantages(&batch, &[0.0], &cfg).is_err());
    }

    fn batch(rng: &mut ChaCha8Rng, arch: &Architecture, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| Sample {
                observation: (0..arch.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: rng.gen_range(0..arch.action_count),
                old_log_prob: -(arch.action_count as f64).ln(),
                advantage: rng.gen_range(-2.0..2.0),
                target: rng.gen_range(-1.0..1.0),
                weight: 1.0,
            })
            .collect()
    }

    #[test]
    fn ppo_loss_reductions() {
        let arch = Architecture::new(3, vec![4], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ParameterSet::zeros(arch.clone());
        let b = batch(&mut rng, &arch, 8);
        // zero network: uniform policy, ratio 1 against uniform old log-probs
        let cfg = PpoConfig { c1: 0.0, c2: 0.0, ..Default::default() };
        let mean_adv = b.iter().map(|s| s.advantage).sum::<f64>() / 8.0;
        assert_relative_eq!(ppo_loss(&p, &b, &cfg).unwrap(), mean_adv, epsilon = 1e-12);

        let p = ParameterSet::init(arch.clone(), &mut rng);
        let with_ent = PpoConfig { c1: 0.0, c2: 0.3, ..Default::default() };
        let mean_ent = b
            .iter()
            .map(|s| entropy(&crate::policy::network::softmax(&p.logits(&s.observation))))
            .sum::<f64>()
            / 8.0;
        let diff = ppo_loss(&p, &b, &with_ent).unwrap() - ppo_loss(&p, &b, &cfg).unwrap();
        assert_relative_eq!(diff, 0.3 * mean_ent, epsilon = 1e-12);
        assert!(ppo_loss(&p, &[], &cfg).is_err());
    }

    #[test]
    fn ppo_loss_matches_term_by_term_assembly() {
        let arch = Architecture::new(4, vec![6, 5], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ParameterSet::init(arch.clone(), &mut rng);
        let mut b = batch(&mut rng, &arch, 5);
        for s in &mut b {
            s.old_log_prob = rng.gen_range(-2.0..-0.5);
        }
        let cfg = PpoConfig { c1: 0.7, c2: 0.05, clip_epsilon: 0.2, ..Default::default() };
        let mut sum = 0.0;
        for s in &b {
            let probs = crate::policy::network::softmax(&p.logits(&s.observation));
            let ratio = probs[s.action] / s.old_log_prob.exp();
            let l_clip = clip_objective(ratio, s.advantage, 0.2).unwrap();
            let l_vf = value_loss(p.value(&s.observation), s.target);
            sum += l_clip - 0.7 * l_vf + 0.05 * entropy(&probs);
        }
        assert_relative_eq!(ppo_loss(&p, &b, &cfg).unwrap(), sum / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn fair_loss_examples() {
        let arch = Architecture::new(2, vec![3], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParameterSet::init(arch.clone(), &mut rng);
        let b = batch(&mut rng, &arch, 4);
        let cfg = PpoConfig::default();
        let base = ppo_loss(&p, &b, &cfg).unwrap();
        assert_eq!(fair_ppo_loss(&p, &b, 3.0, 0.0, &cfg).unwrap(), base);
        assert_eq!(fair_ppo_loss(&p, &b, 0.0, 2.0, &cfg).unwrap(), base);
        assert_relative_eq!(fair_ppo_loss(&p, &b, 0.4, 0.5, &cfg).unwrap(), base - 0.2, epsilon = 1e-15);
        assert!(matches!(fair_ppo_loss(&p, &b, 0.4, -1.0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn dynamic_lambda_examples() {
        assert_eq!(dynamic_lambda(1.0, 0.0), LAMBDA_MAX);
        assert_relative_eq!(dynamic_lambda(2.0, 4.0), 0.5, epsilon = 1e-8);
        assert_relative_eq!(dynamic_lambda(-2.0, 4.0), 0.5, epsilon = 1e-8);
        let a = dynamic_lambda(0.3, 0.9);
        let b = dynamic_lambda(30.0, 90.0);
        assert_relative_eq!(a, b, epsilon = 1e-7);
    }

    proptest! {
        #[test]
        fn clip_is_pessimistic(ratio in 0.01f64..5.0, adv in -10.0f64..10.0, eps in 0.01f64..0.9) {
            prop_assert!(clip_objective(ratio, adv, eps).unwrap() <= ratio * adv + 1e-12);
        }

        #[test]
        fn entropy_bonus_is_monotone_in_c2(c2a in 0.0f64..1.0, c2b in 0.0f64..1.0, seed in any::<u64>()) {
            let arch = Architecture::new(3, vec![4], 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ParameterSet::init(arch.clone(), &mut rng);
            let b = batch(&mut rng, &arch, 6);
            let (lo, hi) = if c2a < c2b { (c2a, c2b) } else { (c2b, c2a) };
            let l = ppo_loss(&p, &b, &PpoConfig { c2: lo, ..Default::default() }).unwrap();
            let h = ppo_loss(&p, &b, &PpoConfig { c2: hi, ..Default::default() }).unwrap();
            prop_assert!(h >= l - 1e-12);
        }
    }
}
