//! FEN: a controller picks one of several sub-policies every `t_macro`
//! decisions. Sub-policy 0 maximises the environment reward; the others and
//! the controller are trained on the fair-efficient signal.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::{restore_into, snapshot, Algorithm, AlgorithmKind, TrainLog};
use crate::error::{Error, Result};
use crate::policy::{Architecture, Checkpoint, PpoConfig, PpoLearner};
use crate::rollout::{
    decide, derive_seed, purpose, stream_rngs, ActContext, ActMode, Actor, EnvSpec, EnvState, EpisodeOutcome,
    StreamLog, World,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FenConfig {
    pub k_sub: usize,
    pub t_macro: usize,
    pub reward_scale: f64,
    pub fairness_epsilon: f64,
    pub ppo: PpoConfig,
}

impl Default for FenConfig {
    fn default() -> Self {
        Self::ah()
    }
}

impl FenConfig {
    pub fn ah() -> Self {
        Self {
            k_sub: 2,
            t_macro: 10,
            reward_scale: 1.0,
            fairness_epsilon: 1e-6,
            ppo: PpoConfig {
                learning_rate: 1e-4,
                gamma: 0.99,
                clip_epsilon: 0.1,
                epochs: 5,
                minibatch_size: 256,
                c2: 0.01,
                c1: 0.5,
                ..PpoConfig::default()
            },
        }
    }

    pub fn hs() -> Self {
        Self {
            k_sub: 4,
            t_macro: 50,
            reward_scale: 100.0,
            fairness_epsilon: 0.1,
            ppo: PpoConfig {
                learning_rate: 1e-5,
                gamma: 0.99,
                clip_epsilon: 0.1,
                epochs: 10,
                minibatch_size: 64,
                c2: 0.01,
                c1: 0.5,
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
        if self.k_sub < 2 {
            return Err(Error::Config(format!("FEN needs at least 2 sub-policies, got {}", self.k_sub)));
        }
        if self.t_macro == 0 {
            return Err(Error::Config("FEN macro-step must be >= 1".into()));
        }
        if !(self.reward_scale > 0.0) || !(self.fairness_epsilon > 0.0) {
            return Err(Error::Config("FEN reward scale and epsilon must be positive".into()));
        }
        self.ppo.validate()
    }
}

/// `(mean / c) / (eps + |own / mean - 1|)` with `mean` floored at `eps`.
pub fn fen_fair_efficient_reward(own_utility: f64, mean_utility: f64, cfg: &FenConfig) -> f64 {
    let eps = cfg.fairness_epsilon;
    let mean = mean_utility.max(eps);
    (mean / cfg.reward_scale) / (eps + (own_utility / mean - 1.0).abs())
}

/// Holds the active sub-policy between macro boundaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MacroSwitch {
    pub current: Option<usize>,
}

impl MacroSwitch {
    /// Sub-policy for decision `step`; `choose` is consulted only on a
    /// boundary (`step % t_macro == 0`) or before the first choice.
    pub fn step(&mut self, step: usize, t_macro: usize, choose: impl FnOnce() -> usize) -> (usize, bool) {
        match self.current {
            Some(c) if step % t_macro != 0 => (c, false),
            _ => {
                let c = choose();
                self.current = Some(c);
                (c, true)
            }
        }
    }
}

/// Controller and sub-policies sharing one observation/action space.
#[derive(Debug, Clone)]
pub struct FenFamily {
    pub controller: PpoLearner,
    pub subs: Vec<PpoLearner>,
}

#[derive(Debug, Clone)]
pub struct Fen {
    env: EnvSpec,
    pub cfg: FenConfig,
    /// One family in the harvest world (all agents share it), one per role
    /// in the hospital.
    pub families: Vec<FenFamily>,
    /// Sub-policy active at every decision of every stream in the last
    /// played episode.
    pub last_trace: Vec<Vec<usize>>,
}

impl Fen {
    pub fn new(env: EnvSpec, cfg: FenConfig, hidden: &[usize], seed: u64) -> Result<Self> {
        env.validate()?;
        cfg.validate()?;
        let mut k = 0u64;
        let mut learner = |obs: usize, actions: usize| {
            k += 1;
            PpoLearner::new(Architecture::new(obs, hidden.to_vec(), actions), cfg.ppo.clone(), derive_seed(seed, purpose::INIT, k))
        };
        let families = (0..env.roles())
            .map(|r| {
                let obs = env.obs_dim(r);
                Ok(FenFamily {
                    controller: learner(obs, cfg.k_sub)?,
                    subs: (0..cfg.k_sub).map(|_| learner(obs, env.action_count(r))).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { env, cfg, families, last_trace: Vec::new() })
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in 0..self.families.len() {
            out.push(format!("family.{f}.controller"));
            for j in 0..self.cfg.k_sub {
                out.push(format!("family.{f}.sub.{j}"));
            }
        }
        out
    }

    fn learners(&self) -> impl Iterator<Item = &PpoLearner> {
        self.families.iter().flat_map(|f| std::iter::once(&f.controller).chain(&f.subs))
    }

    fn run(&self, state: EnvState, seed: u64, mode: ActMode, check: bool) -> Result<(EpisodeOutcome, FenActor<'_>)> {
        let mut actor = FenActor::new(self, mode, seed);
        let outcome = state.run(&mut actor, check)?;
        Ok((outcome, actor))
    }
}

/// Own and population utility for the fair-efficient signal. A harvest
/// agent compares its per-step reward with the population's; a hospital
/// role compares impaired patients with all patients.
fn utilities(ctx: &ActContext<'_>) -> (f64, f64) {
    let u = ctx.utilities;
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    let all = mean(&mut u.iter().copied());
    match ctx.own {
        Some(i) => {
            let steps = ctx.t.max(1) as f64;
            (u[i] / steps, all / steps)
        }
        None => (mean(&mut u.iter().zip(ctx.z).filter(|(_, z)| **z).map(|(x, _)| *x)), all),
    }
}

struct FenActor<'a> {
    fen: &'a Fen,
    mode: ActMode,
    rngs: Vec<ChaCha8Rng>,
    switches: Vec<MacroSwitch>,
    controller_logs: Vec<StreamLog>,
    /// `[stream][sub]`
    sub_logs: Vec<Vec<StreamLog>>,
    /// `(sub, index in its log)` for every decision of each stream.
    placement: Vec<Vec<(usize, usize)>>,
    trace: Vec<Vec<usize>>,
}

impl<'a> FenActor<'a> {
    fn new(fen: &'a Fen, mode: ActMode, seed: u64) -> Self {
        let n = fen.env.streams();
        Self {
            fen,
            mode,
            rngs: stream_rngs(seed, n),
            switches: vec![MacroSwitch::default(); n],
            controller_logs: vec![StreamLog::default(); n],
            sub_logs: vec![vec![StreamLog::default(); fen.cfg.k_sub]; n],
            placement: vec![Vec::new(); n],
            trace: vec![Vec::new(); n],
        }
    }

    /// Closes the running macro window of `stream` with the fair-efficient
    /// signal.
    fn close_window(&mut self, stream: usize, ctx: &ActContext<'_>) {
        let Some(sub) = self.switches[stream].current else { return };
        let (own, mean) = utilities(ctx);
        let signal = fen_fair_efficient_reward(own, mean, &self.fen.cfg);
        if let Some(t) = self.controller_logs[stream].transitions.last_mut() {
            t.reward += signal;
        }
        if let Some(t) = self.sub_logs[stream][sub].transitions.last_mut() {
            if sub != 0 {
                t.reward += signal;
            }
            t.terminal = true;
        }
    }
}

impl Actor for FenActor<'_> {
    fn act(&mut self, stream: usize, obs: &[f64], ctx: &ActContext<'_>) -> Result<usize> {
        let fen = self.fen;
        let family = &fen.families[fen.env.role_of(stream)];
        let t_macro = fen.cfg.t_macro;
        if ctx.t % t_macro == 0 {
            self.close_window(stream, ctx);
        }
        let (mode, rng) = (self.mode, &mut self.rngs[stream]);
        let log = &mut self.controller_logs[stream];
        let (sub, _) = self.switches[stream].step(ctx.t, t_macro, || {
            let d = decide(&family.controller, obs, mode, rng);
            let a = d.action;
            log.transitions.push(d);
            a
        });
        let mut d = decide(&family.subs[sub], obs, self.mode, &mut self.rngs[stream]);
        d.member = ctx.own;
        let a = d.action;
        let log = &mut self.sub_logs[stream][sub];
        self.placement[stream].push((sub, log.transitions.len()));
        log.transitions.push(d);
        self.trace[stream].push(sub);
        Ok(a)
    }

    fn reward(&mut self, stream: usize, index: usize, amount: f64) {
        let (sub, k) = self.placement[stream][index];
        if sub == 0 {
            self.sub_logs[stream][0].transitions[k].reward += amount;
        }
    }

    fn finish(&mut self, ctx: &ActContext<'_>) {
        for s in 0..self.switches.len() {
            let own = match self.fen.env {
                EnvSpec::Ah(_) => Some(s),
                EnvSpec::Hs(_) => None,
            };
            self.close_window(s, &ActContext { own, ..*ctx });
        }
    }
}

impl Algorithm for Fen {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Fen
    }

    fn env(&self) -> &EnvSpec {
        &self.env
    }

    fn train_episode(&mut self, seed: u64, _progress: f64) -> Result<TrainLog> {
        let (outcome, actor) = self.run(self.env.reset(seed, World::Factual)?, seed, ActMode::Sample, false)?;
        let ppo = self.cfg.ppo.clone();
        let mut controller_samples = vec![Vec::new(); self.families.len()];
        let mut sub_samples = vec![vec![Vec::new(); self.cfg.k_sub]; self.families.len()];
        for s in 0..self.env.streams() {
            let f = self.env.role_of(s);
            controller_samples[f].extend(actor.controller_logs[s].samples(&ppo, |_| 1.0)?);
            for (j, log) in actor.sub_logs[s].iter().enumerate() {
                sub_samples[f][j].extend(log.samples(&ppo, |_| 1.0)?);
            }
        }
        let trace = actor.trace;
        for (f, family) in self.families.iter_mut().enumerate() {
            if !controller_samples[f].is_empty() {
                family.controller.update(&controller_samples[f], None)?;
            }
            for (j, sub) in family.subs.iter_mut().enumerate() {
                if !sub_samples[f][j].is_empty() {
                    sub.update(&sub_samples[f][j], None)?;
                }
            }
        }
        self.last_trace = trace;
        Ok(TrainLog { outcome, counterfactual: None, penalty: None })
    }

    fn play(&self, state: EnvState, seed: u64, mode: ActMode, check: bool) -> Result<EpisodeOutcome> {
        Ok(self.run(state, seed, mode, check)?.0)
    }

    fn checkpoint(&self) -> Checkpoint {
        snapshot(self.kind(), &self.env, self.names().into_iter().zip(self.learners()))
    }

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let names = self.names();
        let learners = self.families.iter_mut().flat_map(|f| std::iter::once(&mut f.controller).chain(f.subs.iter_mut()));
        restore_into(checkpoint, names.into_iter().zip(learners))
    }
}

/// Checks that each stream's sub-policy changes only at macro boundaries.
pub fn macro_switch_violations(trace: &[Vec<usize>], t_macro: usize) -> Vec<String> {
    let mut out = Vec::new();
    for (s, subs) in trace.iter().enumerate() {
        for t in 1..subs.len() {
            if subs[t] != subs[t - 1] && t % t_macro != 0 {
                out.push(format!("stream {s} switched sub-policy at decision {t}"));
            }
        }
    }
    out
}
