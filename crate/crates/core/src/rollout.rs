//! Episode runners shared by every algorithm.
//!
//! A run is a set of decision streams. In the harvest world each agent is a
//! stream; in the hospital each learning role (triage, escort, doctor) is
//! one. An [`Actor`] picks actions per stream and receives the rewards owed
//! to each decision, possibly long after it was made.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentProfile;
use crate::env::ah::{self, AhAction, AhConfig, AhState};
use crate::env::hs::{self, HsAgent, HsConfig, HsMetrics, HsState};
use crate::error::{Error, Result};
use crate::policy::{argmax, loss::gae, PpoConfig, PpoLearner, Sample};

/// Mixes `(base, a, b)` into an independent 64-bit seed (splitmix64 finaliser).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed purposes, so streams drawn for different ends never coincide.
pub mod purpose {
    pub const ENV: u64 = 1;
    pub const ACTIONS: u64 = 2;
    pub const HEADS: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const INIT: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum World {
    Factual,
    /// Every sensitive attribute flipped, all randomness shared.
    Counterfactual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    #[default]
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Ah(AhConfig),
    Hs(HsConfig),
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Ah(c) => c.validate(),
            EnvSpec::Hs(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Ah(_) => "ah",
            EnvSpec::Hs(_) => "hs",
        }
    }

    pub fn streams(&self) -> usize {
        match self {
            EnvSpec::Ah(c) => c.n_agents,
            EnvSpec::Hs(_) => HsAgent::ALL.len(),
        }
    }

    /// Number of stream roles with distinct observation/action spaces.
    pub fn roles(&self) -> usize {
        match self {
            EnvSpec::Ah(_) => 1,
            EnvSpec::Hs(_) => HsAgent::ALL.len(),
        }
    }

    pub fn role_of(&self, stream: usize) -> usize {
        match self {
            EnvSpec::Ah(_) => 0,
            EnvSpec::Hs(_) => stream,
        }
    }

    pub fn obs_dim(&self, role: usize) -> usize {
        match self {
            EnvSpec::Ah(_) => ah::OBS_DIM,
            EnvSpec::Hs(_) => HsAgent::ALL[role].obs_dim(),
        }
    }

    pub fn action_count(&self, role: usize) -> usize {
        match self {
            EnvSpec::Ah(_) => AhAction::COUNT,
            EnvSpec::Hs(_) => HsAgent::ALL[role].action_count(),
        }
    }

    /// Legitimate-factor levels: berry colour or patient priority.
    pub fn lf_domain(&self) -> Vec<usize> {
        match self {
            EnvSpec::Ah(_) => vec![0, 1],
            EnvSpec::Hs(_) => vec![0, 1, 2],
        }
    }

    pub fn lf_labels(&self) -> Vec<&'static str> {
        match self {
            EnvSpec::Ah(_) => vec!["red", "blue"],
            EnvSpec::Hs(_) => vec!["high", "medium", "low"],
        }
    }

    pub fn reset(&self, seed: u64, world: World) -> Result<EnvState> {
        let state = match self {
            EnvSpec::Ah(c) => EnvState::Ah(ah::ah_reset(c, seed)?),
            EnvSpec::Hs(c) => EnvState::Hs(hs::hs_reset(c, seed)?),
        };
        Ok(match (state, world) {
            (s, World::Factual) => s,
            (EnvState::Ah(s), World::Counterfactual) => EnvState::Ah(s.flipped()),
            (EnvState::Hs(s), World::Counterfactual) => EnvState::Hs(s.flipped()?),
        })
    }
}

/// What an actor sees besides the observation.
#[derive(Debug, Clone, Copy)]
pub struct ActContext<'a> {
    /// Harvest: time step. Hospital: index of this decision within its stream.
    pub t: usize,
    /// Running utility of every population member so far.
    pub utilities: &'a [f64],
    pub z: &'a [bool],
    /// The member this stream acts for, if it is one.
    pub own: Option<usize>,
}

pub trait Actor {
    fn act(&mut self, stream: usize, obs: &[f64], ctx: &ActContext<'_>) -> Result<usize>;

    /// Credits `amount` to the `index`-th decision of `stream`.
    fn reward(&mut self, stream: usize, index: usize, amount: f64);

    /// Marks the `index`-th decision of `stream` as taken on behalf of `member`.
    fn tag(&mut self, _stream: usize, _index: usize, _member: usize) {}

    /// Called once after the last decision.
    fn finish(&mut self, _ctx: &ActContext<'_>) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Per-member total reward: agents in the harvest world, patients in
    /// the hospital.
    pub returns: Vec<f64>,
    pub profiles: Vec<AgentProfile>,
    /// Harvest steps taken, or hospital decisions made.
    pub length: usize,
    pub hs: Option<HsMetrics>,
    pub violations: Vec<String>,
}

impl EpisodeOutcome {
    /// Returns divided by the episode length in the harvest world, where
    /// evaluation reports per-step means; hospital returns are per day.
    pub fn per_step_returns(&self) -> Vec<f64> {
        match self.hs {
            Some(_) => self.returns.clone(),
            None => self.returns.iter().map(|r| r / self.length.max(1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum EnvState {
    Ah(AhState),
    Hs(HsState),
}

impl EnvState {
    pub fn profiles(&self) -> Vec<AgentProfile> {
        match self {
            EnvState::Ah(s) => s.profiles(),
            EnvState::Hs(s) => s.profiles(),
        }
    }

    /// Plays the episode to the end. With `check` the structural invariants
    /// are verified after every transition and reported in the outcome.
    pub fn run(self, actor: &mut dyn Actor, check: bool) -> Result<EpisodeOutcome> {
        match self {
            EnvState::Ah(s) => run_ah(s, actor, check),
            EnvState::Hs(s) => run_hs(s, actor, check),
        }
    }
}

fn run_ah(mut state: AhState, actor: &mut dyn Actor, check: bool) -> Result<EpisodeOutcome> {
    let profiles = state.profiles();
    let z: Vec<bool> = profiles.iter().map(|p| p.z).collect();
    let n = state.agents.len();
    let mut returns = vec![0.0; n];
    let mut violations = Vec::new();
    let mut actions = vec![AhAction::Noop; n];
    while !state.is_done() {
        let t = state.t;
        for (i, slot) in actions.iter_mut().enumerate() {
            let obs = state.observe(i)?;
            let ctx = ActContext { t, utilities: &returns, z: &z, own: Some(i) };
            *slot = AhAction::from_index(actor.act(i, &obs, &ctx)?)?;
        }
        let before = check.then(|| state.clone());
        let report = state.step(&actions)?;
        if let Some(b) = before {
            violations.extend(ah::check_transition(&b, &actions, &report, &state).into_iter().map(|v| format!("t={t}: {v}")));
        }
        for (i, r) in report.rewards.iter().enumerate() {
            returns[i] += r;
            actor.reward(i, t, *r);
        }
    }
    actor.finish(&ActContext { t: state.t, utilities: &returns, z: &z, own: None });
    Ok(EpisodeOutcome { returns, profiles, length: state.t, hs: None, violations })
}

fn run_hs(mut state: HsState, actor: &mut dyn Actor, check: bool) -> Result<EpisodeOutcome> {
    let profiles = state.profiles();
    let z: Vec<bool> = profiles.iter().map(|p| p.z).collect();
    let mut counts = [0usize; 3];
    // decision id -> (stream, index)
    let mut index_of: Vec<(usize, usize)> = Vec::new();
    let mut violations = Vec::new();
    let deliver = |state: &mut HsState, actor: &mut dyn Actor, index_of: &[(usize, usize)]| {
        for ev in state.take_rewards() {
            let (stream, idx) = index_of[ev.decision as usize];
            actor.reward(stream, idx, ev.amount);
        }
    };
    while let Some(req) = state.advance()? {
        if check {
            violations.extend(state.check_invariants());
        }
        let stream = req.agent.index();
        let idx = counts[stream];
        counts[stream] += 1;
        if req.id as usize != index_of.len() {
            return Err(Error::Sequencing(format!("decision ids out of order at {}", req.id)));
        }
        index_of.push((stream, idx));
        let utilities: Vec<f64> = state.patients.iter().map(|p| p.accumulated_reward).collect();
        let ctx = ActContext { t: idx, utilities: &utilities, z: &z, own: None };
        let action = actor.act(stream, &req.observation, &ctx)?;
        let applied = state.apply(req.id, req.agent, action)?;
        if let Some(p) = applied.patient {
            actor.tag(stream, idx, p);
        }
        deliver(&mut state, actor, &index_of);
    }
    deliver(&mut state, actor, &index_of);
    if check {
        violations.extend(state.check_invariants());
    }
    let metrics = state.metrics();
    let returns = metrics.patient_rewards.clone();
    actor.finish(&ActContext { t: index_of.len(), utilities: &returns, z: &z, own: None });
    Ok(EpisodeOutcome { returns, profiles, length: index_of.len(), hs: Some(metrics), violations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// Population member the decision was taken for.
    pub member: Option<usize>,
    /// Ends a sequence for advantage estimation.
    pub terminal: bool,
}

/// The decisions of one stream in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamLog {
    pub transitions: Vec<Transition>,
}

impl StreamLog {
    /// GAE samples; the last transition is always terminal.
    pub fn samples(&self, cfg: &PpoConfig, weight: impl Fn(&Transition) -> f64) -> Result<Vec<Sample>> {
        let n = self.transitions.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        let mut values: Vec<f64> = self.transitions.iter().map(|t| t.value).collect();
        values.push(0.0);
        let mut terminals: Vec<bool> = self.transitions.iter().map(|t| t.terminal).collect();
        terminals[n - 1] = true;
        let (adv, targets) = gae(&rewards, &values, &terminals, cfg.gamma, cfg.gae_lambda)?;
        if let Some(i) = adv.iter().position(|a| !a.is_finite()) {
            return Err(Error::Numeric(format!("non-finite advantage at decision {i}")));
        }
        Ok(self
            .transitions
            .iter()
            .zip(adv)
            .zip(targets)
            .map(|((t, a), g)| Sample {
                observation: t.obs.clone(),
                action: t.action,
                old_log_prob: t.log_prob,
                advantage: a,
                target: g,
                weight: weight(t),
            })
            .collect())
    }
}

/// One action-noise generator per stream. Paired worlds built from the same
/// seed consume identical uniforms decision by decision.
pub fn stream_rngs(seed: u64, streams: usize) -> Vec<ChaCha8Rng> {
    (0..streams).map(|s| ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose::ACTIONS, s as u64))).collect()
}

/// Picks an action from `learner` and returns it with the record to log.
pub fn decide(learner: &PpoLearner, obs: &[f64], mode: ActMode, rng: &mut ChaCha8Rng) -> Transition {
    // the uniform is drawn in both modes to keep paired streams aligned
    let u: f64 = rng.gen();
    let d = learner.act(obs, u);
    let action = match mode {
        ActMode::Sample => d.action,
        ActMode::Greedy => argmax(&learner.params.logits(obs)),
    };
    Transition {
        obs: obs.to_vec(),
        action,
        log_prob: d.log_prob,
        value: d.value,
        reward: 0.0,
        member: None,
        terminal: false,
    }
}

/// Plays each stream with a fixed learner and logs every decision.
pub struct Recorder<'a> {
    pub learners: &'a [PpoLearner],
    /// Learner index per stream.
    pub assignment: Vec<usize>,
    pub mode: ActMode,
    rngs: Vec<ChaCha8Rng>,
    pub logs: Vec<StreamLog>,
}

impl<'a> Recorder<'a> {
    pub fn new(learners: &'a [PpoLearner], assignment: Vec<usize>, mode: ActMode, seed: u64) -> Self {
        let n = assignment.len();
        Self { learners, assignment, mode, rngs: stream_rngs(seed, n), logs: vec![StreamLog::default(); n] }
    }
}

impl Actor for Recorder<'_> {
    fn act(&mut self, stream: usize, obs: &[f64], ctx: &ActContext<'_>) -> Result<usize> {
        let learner = &self.learners[self.assignment[stream]];
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
