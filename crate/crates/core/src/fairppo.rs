//! Fair-PPO training: independent PPO instances (one per sensitive group in
//! the harvest world, one per role in the hospital) sharing a fairness
//! penalty computed centrally at the end of each episode.
//!
//! The retrospective part compares realised member returns; the
//! prospective part compares the members' value estimates, taken as the mean
//! value of the states where decisions were made on their behalf. Only the
//! prospective part carries a gradient.

use crate::agents::{partition, AgentProfile};
use crate::algorithm::{restore_into, snapshot, Algorithm, AlgorithmKind, PenaltyLog, TrainLog};
use crate::error::{Error, Result};
use crate::fairness::{
    conditional_statistical_disparity, counterfactual_disparity, demographic_disparity, FairnessMetric,
    PenaltyNormalizer, PenaltySpec,
};
use crate::policy::{Architecture, Checkpoint, LambdaMode, Member, PenaltyUpdate, PpoConfig, PpoLearner, ProspectiveTerm};
use crate::rollout::{derive_seed, purpose, ActMode, EnvSpec, EnvState, EpisodeOutcome, Recorder, StreamLog, World};

/// Probe states kept per member by default.
pub const DEFAULT_PROBES: usize = 16;

#[derive(Debug, Clone)]
pub struct FairPpo {
    env: EnvSpec,
    pub ppo: PpoConfig,
    /// `None` trains plain PPO.
    pub penalty: Option<PenaltySpec>,
    pub lambda_mode: LambdaMode,
    pub learners: Vec<PpoLearner>,
    pub normalizer: PenaltyNormalizer,
    pub probe_limit: usize,
}

/// Names of the policy instances trained in `env`.
pub fn instance_names(env: &EnvSpec) -> Vec<String> {
    match env {
        EnvSpec::Ah(_) => vec!["non_sensitive".into(), "sensitive".into()],
        EnvSpec::Hs(_) => vec!["triage".into(), "escort".into(), "doctor".into()],
    }
}

impl FairPpo {
    pub fn new(
        env: EnvSpec,
        ppo: PpoConfig,
        hidden: &[usize],
        penalty: Option<PenaltySpec>,
        lambda_mode: LambdaMode,
        seed: u64,
    ) -> Result<Self> {
        env.validate()?;
        ppo.validate()?;
        if let Some(p) = &penalty {
            p.validate()?;
        }
        if let LambdaMode::Fixed(l) = lambda_mode {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("fixed lambda must be >= 0, got {l}")));
            }
        }
        let learners = (0..instance_names(&env).len())
            .map(|k| {
                let role = match env {
                    EnvSpec::Ah(_) => 0,
                    EnvSpec::Hs(_) => k,
                };
                let arch = Architecture::new(env.obs_dim(role), hidden.to_vec(), env.action_count(role));
                PpoLearner::new(arch, ppo.clone(), derive_seed(seed, purpose::INIT, k as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            env,
            ppo,
            penalty,
            lambda_mode,
            learners,
            normalizer: PenaltyNormalizer::default(),
            probe_limit: DEFAULT_PROBES,
        })
    }

    /// Plain PPO with the same instance layout.
    pub fn plain(env: EnvSpec, ppo: PpoConfig, hidden: &[usize], seed: u64) -> Result<Self> {
        Self::new(env, ppo, hidden, None, LambdaMode::Dynamic, seed)
    }

    /// Learner index for each stream.
    pub fn assignment(&self, profiles: &[AgentProfile]) -> Vec<usize> {
        match self.env {
            EnvSpec::Ah(_) => profiles.iter().map(|p| p.z as usize).collect(),
            EnvSpec::Hs(_) => (0..self.env.streams()).collect(),
        }
    }

    fn needs_counterfactual(&self) -> bool {
        self.penalty.as_ref().is_some_and(|p| p.metric == FairnessMetric::Cf && !p.is_inert())
    }

    fn raw_penalty(
        &self,
        spec: &PenaltySpec,
        outcome: &EpisodeOutcome,
        logs: &[StreamLog],
        assignment: &[usize],
        cf: Option<&Played>,
    ) -> Result<RawPenalty> {
        let n = outcome.profiles.len();
        // an inert CF penalty skips the twin run, and weighs nothing anyway
        let retrospective = if spec.metric == FairnessMetric::Cf && cf.is_none() && spec.is_inert() {
            0.0
        } else {
            retrospective_disparity(spec.metric, &outcome.profiles, &outcome.returns, cf.map(|c| c.0.returns.as_slice()))?
        };
        let mut probes = member_probes(logs, assignment, n, self.probe_limit);
        if let Some((_, cf_logs, cf_assignment)) = cf {
            probes.extend(member_probes(cf_logs, cf_assignment, n, self.probe_limit));
        }
        let has: Vec<bool> = probes.iter().map(|p| !p.is_empty()).collect();
        let pairs = penalty_pairs(spec.metric, &outcome.profiles, &has, &spec.lf_domain);
        let prospective = value_disparity(&member_values(&self.learners, &probes), &pairs);
        Ok(RawPenalty { retrospective, prospective, probes, pairs })
    }

    /// Unweighted retrospective and prospective disparities of the episode
    /// of `seed` under `spec`, with frozen parameters.
    pub fn measure_penalty(&self, spec: &PenaltySpec, seed: u64, mode: ActMode) -> Result<(f64, f64)> {
        let (outcome, logs, assignment) = self.run(self.env.reset(seed, World::Factual)?, seed, mode, false)?;
        let cf = match spec.metric {
            FairnessMetric::Cf => Some(self.run(self.env.reset(seed, World::Counterfactual)?, seed, mode, false)?),
            _ => None,
        };
        let raw = self.raw_penalty(spec, &outcome, &logs, &assignment, cf.as_ref())?;
        Ok((raw.retrospective, raw.prospective))
    }

    fn run(&self, state: EnvState, seed: u64, mode: ActMode, check: bool) -> Result<Played> {
        let assignment = self.assignment(&state.profiles());
        let mut rec = Recorder::new(&self.learners, assignment.clone(), mode, seed);
        let outcome = state.run(&mut rec, check)?;
        Ok((outcome, rec.logs, assignment))
    }
}

type Played = (EpisodeOutcome, Vec<StreamLog>, Vec<usize>);

struct RawPenalty {
    retrospective: f64,
    prospective: f64,
    probes: Vec<Vec<ValueProbe>>,
    pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Realised-return disparity for `metric`; a metric whose groups are empty
/// in this episode contributes 0.
pub fn retrospective_disparity(
    metric: FairnessMetric,
    profiles: &[AgentProfile],
    factual: &[f64],
    counterfactual: Option<&[f64]>,
) -> Result<f64> {
    let part = partition(profiles)?;
    let soft = |r: Result<f64>| match r {
        Err(Error::EmptyGroup(_)) => Ok(0.0),
        other => other,
    };
    match metric {
        FairnessMetric::Dp => soft(demographic_disparity(factual, &part)),
        FairnessMetric::Csp => soft(conditional_statistical_disparity(factual, &part).map(|c| c.total)),
        FairnessMetric::Cf => {
            let cf = counterfactual.ok_or_else(|| Error::Validation("CF penalty needs a counterfactual run".into()))?;
            counterfactual_disparity(factual, cf)
        }
    }
}

/// Compared member groups. Members `0..n` are the factual population; with
/// a counterfactual run, `n..2n` are their twins. Members without value
/// probes are left out, and a comparison with an empty side is dropped.
pub fn penalty_pairs(
    metric: FairnessMetric,
    profiles: &[AgentProfile],
    has_probes: &[bool],
    lf_domain: &[usize],
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = profiles.len();
    let with = |pred: &dyn Fn(&AgentProfile) -> bool| -> Vec<usize> {
        profiles.iter().enumerate().filter(|(i, p)| has_probes[*i] && pred(p)).map(|(i, _)| i).collect()
    };
    let mut pairs = Vec::new();
    match metric {
        FairnessMetric::Dp => pairs.push((with(&|p| p.z), with(&|p| !p.z))),
        FairnessMetric::Csp => {
            for &lf in lf_domain {
                pairs.push((with(&|p| p.z && p.lf == lf), with(&|p| !p.z && p.lf == lf)));
            }
        }
        FairnessMetric::Cf => {
            for i in 0..n {
                if has_probes.get(i).copied().unwrap_or(false) && has_probes.get(n + i).copied().unwrap_or(false) {
                    pairs.push((vec![i], vec![n + i]));
                }
            }
        }
    }
    pairs.retain(|(a, b)| !a.is_empty() && !b.is_empty());
    pairs
}

/// A state where a decision was made for a member, and the instance that
/// made it.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueProbe {
    pub obs: Vec<f64>,
    pub instance: usize,
}

/// Up to `limit` evenly spaced decision states per member.
pub fn member_probes(logs: &[StreamLog], assignment: &[usize], members: usize, limit: usize) -> Vec<Vec<ValueProbe>> {
    let mut all: Vec<Vec<ValueProbe>> = vec![Vec::new(); members];
    for (s, log) in logs.iter().enumerate() {
        for t in &log.transitions {
            if let Some(m) = t.member.filter(|&m| m < members) {
                all[m].push(ValueProbe { obs: t.obs.clone(), instance: assignment[s] });
            }
        }
    }
    all.into_iter()
        .map(|ps| {
            if ps.len() <= limit {
                ps
            } else {
                (0..limit).map(|j| ps[j * ps.len() / limit].clone()).collect()
            }
        })
        .collect()
}

/// Member value estimates: the mean over each member's probes.
pub fn member_values(learners: &[PpoLearner], probes: &[Vec<ValueProbe>]) -> Vec<f64> {
    probes
        .iter()
        .map(|ps| {
            if ps.is_empty() {
                0.0
            } else {
                ps.iter().map(|p| learners[p.instance].value(&p.obs)).sum::<f64>() / ps.len() as f64
            }
        })
        .collect()
}

pub fn value_disparity(values: &[f64], pairs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let mean = |side: &[usize]| side.iter().map(|&m| values[m]).sum::<f64>() / side.len() as f64;
    pairs.iter().map(|(a, b)| (mean(a) - mean(b)).abs()).sum()
}

/// The prospective term as seen by each learner: its own probes stay
/// differentiable, the other learners' probe values are frozen.
pub fn prospective_terms(
    learners: &[PpoLearner],
    probes: &[Vec<ValueProbe>],
    pairs: &[(Vec<usize>, Vec<usize>)],
    coefficient: f64,
) -> Vec<ProspectiveTerm> {
    (0..learners.len())
        .map(|k| {
            let mut term = ProspectiveTerm { coefficient, pairs: pairs.to_vec(), ..Default::default() };
            for ps in probes {
                let mut m = Member::default();
                for p in ps {
                    if p.instance == k {
                        m.own.push(term.probes.len());
                        term.probes.push(p.obs.clone());
                    } else {
                        m.frozen.push(learners[p.instance].value(&p.obs));
                    }
                }
                term.members.push(m);
            }
            term
        })
        .collect()
}

impl Algorithm for FairPpo {
    fn kind(&self) -> AlgorithmKind {
        if self.penalty.is_some() {
            AlgorithmKind::FairPpo
        } else {
            AlgorithmKind::Ppo
        }
    }

    fn env(&self) -> &EnvSpec {
        &self.env
    }

    fn train_episode(&mut self, seed: u64, _progress: f64) -> Result<TrainLog> {
        let (outcome, logs, assignment) = self.run(self.env.reset(seed, World::Factual)?, seed, ActMode::Sample, false)?;
        let cf = if self.needs_counterfactual() {
            Some(self.run(self.env.reset(seed, World::Counterfactual)?, seed, ActMode::Sample, false)?)
        } else {
            None
        };
        let k = self.learners.len();
        let mut updates: Vec<Option<PenaltyUpdate>> = vec![None; k];
        let mut log = None;
        if let Some(spec) = self.penalty.clone() {
            let raw = self.raw_penalty(&spec, &outcome, &logs, &assignment, cf.as_ref())?;
            let (retro_raw, prosp_raw) = (raw.retrospective, raw.prospective);
            let (probes, pairs) = (raw.probes, raw.pairs);
            let (r_scale, p_scale) = self.normalizer.observe(retro_raw, prosp_raw);
            let retrospective = spec.alpha * retro_raw / r_scale;
            let coefficient = spec.beta / p_scale;
            let terms = (spec.beta > 0.0 && !pairs.is_empty())
                .then(|| prospective_terms(&self.learners, &probes, &pairs, coefficient));
            for (i, u) in updates.iter_mut().enumerate() {
                *u = Some(PenaltyUpdate {
                    lambda_mode: self.lambda_mode,
                    retrospective,
                    prospective: terms.as_ref().map(|t| t[i].clone()),
                });
            }
            log = Some(PenaltyLog {
                retrospective_raw: retro_raw,
                prospective_raw: prosp_raw,
                penalty: retrospective + coefficient * prosp_raw,
                lambdas: Vec::new(),
            });
        }
        for (i, update) in updates.iter().enumerate() {
            let mut samples = Vec::new();
            for (s, l) in logs.iter().enumerate() {
                if assignment[s] == i {
                    samples.extend(l.samples(&self.ppo, |_| 1.0)?);
                }
            }
            if samples.is_empty() {
                continue;
            }
            let stats = self.learners[i].update(&samples, update.as_ref())?;
            if let Some(l) = log.as_mut() {
                l.lambdas.push(stats.lambda);
            }
        }
        Ok(TrainLog { outcome, counterfactual: cf.map(|c| c.0), penalty: log })
    }

    fn play(&self, state: EnvState, seed: u64, mode: ActMode, check: bool) -> Result<EpisodeOutcome> {
        Ok(self.run(state, seed, mode, check)?.0)
    }

    fn checkpoint(&self) -> Checkpoint {
        snapshot(self.kind(), &self.env, instance_names(&self.env).into_iter().zip(&self.learners))
    }

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        restore_into(checkpoint, instance_names(&self.env).into_iter().zip(self.learners.iter_mut()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ah::AhConfig;
    use crate::env::hs::HsConfig;
    use crate::policy::LAMBDA_MAX;

    fn small_ah() -> EnvSpec {
        EnvSpec::Ah(AhConfig { episode_length_ts: 12, ..AhConfig::desk() })
    }

    fn cfg() -> PpoConfig {
        PpoConfig { minibatch_size: 32, epochs: 2, ..PpoConfig::default() }
    }

    #[test]
    fn inert_penalty_tracks_plain_ppo_bit_for_bit() {
        for env in [small_ah(), EnvSpec::Hs(HsConfig::desk())] {
            let mut ppo = FairPpo::plain(env.clone(), cfg(), &[8], 7).unwrap();
            let spec = PenaltySpec::new(FairnessMetric::Dp, 0.0, 0.0);
            let mut fair = FairPpo::new(env, cfg(), &[8], Some(spec), LambdaMode::Dynamic, 7).unwrap();
            for ep in 0..3 {
                ppo.train_episode(100 + ep, 0.0).unwrap();
                let log = fair.train_episode(100 + ep, 0.0).unwrap();
                assert_eq!(log.penalty.unwrap().penalty, 0.0);
                for (a, b) in ppo.learners.iter().zip(&fair.learners) {
                    assert_eq!(a.params, b.params);
                }
            }
        }
    }

    #[test]
    fn penalty_is_logged_and_lambda_bounded() {
        for metric in [FairnessMetric::Dp, FairnessMetric::Csp, FairnessMetric::Cf] {
            let spec = PenaltySpec::new(metric, 0.5, 0.5).with_lf_domain(vec![0, 1]);
            let mut fair = FairPpo::new(small_ah(), cfg(), &[8], Some(spec), LambdaMode::Dynamic, 3).unwrap();
            let log = fair.train_episode(5, 0.0).unwrap();
            let p = log.penalty.unwrap();
            assert!(p.penalty >= 0.0 && p.penalty <= 1.0 + 1e-12, "{p:?}");
            assert!(p.lambdas.iter().all(|l| (0.0..=LAMBDA_MAX).contains(l)));
            assert_eq!(p.lambdas.len(), 2);
            assert_eq!(log.counterfactual.is_some(), metric == FairnessMetric::Cf);
            if let Some(cf) = &log.counterfactual {
                let direct = counterfactual_disparity(&log.outcome.returns, &cf.returns).unwrap();
                assert_eq!(p.retrospective_raw, direct);
            }
        }
    }

    #[test]
    fn hospital_penalty_uses_patient_rewards() {
        let spec = PenaltySpec::new(FairnessMetric::Dp, 1.0, 1.0);
        let mut fair = FairPpo::new(EnvSpec::Hs(HsConfig::desk()), cfg(), &[8], Some(spec), LambdaMode::Dynamic, 3).unwrap();
        let log = fair.train_episode(9, 0.0).unwrap();
        let part = partition(&log.outcome.profiles).unwrap();
        let expected = demographic_disparity(&log.outcome.hs.as_ref().unwrap().patient_rewards, &part).unwrap();
        assert_eq!(log.penalty.unwrap().retrospective_raw, expected);
    }

    #[test]
    fn pairs_skip_members_without_probes() {
        let profiles: Vec<AgentProfile> = (0..4).map(|id| AgentProfile { id, z: id % 2 == 1, lf: id / 2, action_count: 1 }).collect();
        let dp = penalty_pairs(FairnessMetric::Dp, &profiles, &[true, true, false, true], &[]);
        assert_eq!(dp, vec![(vec![1, 3], vec![0])]);
        let csp = penalty_pairs(FairnessMetric::Csp, &profiles, &[true, true, false, true], &[0, 1]);
        assert_eq!(csp, vec![(vec![1], vec![0])]);
        let cf = penalty_pairs(FairnessMetric::Cf, &profiles, &[true, false, true, true, true, true, true, false], &[]);
        assert_eq!(cf, vec![(vec![0], vec![4]), (vec![2], vec![6])]);
    }

    #[test]
    fn probes_are_thinned_evenly() {
        let t = |m: usize, x: f64| crate::rollout::Transition {
            obs: vec![x],
            action: 0,
            log_prob: 0.0,
            value: 0.0,
            reward: 0.0,
            member: Some(m),
            terminal: false,
        };
        let logs = vec![StreamLog { transitions: (0..10).map(|i| t(0, i as f64)).collect() }];
        let p = member_probes(&logs, &[1], 2, 4);
        let xs: Vec<f64> = p[0].iter().map(|v| v.obs[0]).collect();
        assert_eq!(xs, vec![0.0, 2.0, 5.0, 7.0]);
        assert!(p[0].iter().all(|v| v.instance == 1));
        assert!(p[1].is_empty());
    }

    #[test]
    fn per_learner_terms_agree_on_the_disparity() {
        let env = small_ah();
        let fair = FairPpo::plain(env.clone(), cfg(), &[8], 1).unwrap();
        let (outcome, logs, assignment) = fair.run(env.reset(2, World::Factual).unwrap(), 2, ActMode::Sample, false).unwrap();
        let probes = member_probes(&logs, &assignment, outcome.profiles.len(), 5);
        let has: Vec<bool> = probes.iter().map(|p| !p.is_empty()).collect();
        let pairs = penalty_pairs(FairnessMetric::Dp, &outcome.profiles, &has, &[]);
        let direct = value_disparity(&member_values(&fair.learners, &probes), &pairs);
        for (k, term) in prospective_terms(&fair.learners, &probes, &pairs, 1.0).iter().enumerate() {
            term.validate(env.obs_dim(0)).unwrap();
            assert!((term.disparity(&fair.learners[k].params) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let fair = FairPpo::plain(EnvSpec::Hs(HsConfig::desk()), cfg(), &[8], 1).unwrap();
        let ck = fair.checkpoint();
        let mut other = FairPpo::plain(EnvSpec::Hs(HsConfig::desk()), cfg(), &[8], 2).unwrap();
        other.restore(&ck).unwrap();
        assert_eq!(other.checkpoint(), {
            let mut again = other.clone();
            again.restore(&other.checkpoint()).unwrap();
            again.checkpoint()
        });
        let mut wrong = FairPpo::plain(EnvSpec::Hs(HsConfig::desk()), cfg(), &[4], 2).unwrap();
        assert!(matches!(wrong.restore(&ck), Err(Error::Checkpoint(_))));
    }
}
