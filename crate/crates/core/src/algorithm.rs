//! The interface every training algorithm exposes to the harness.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::Checkpoint;
use crate::rollout::{ActMode, EnvSpec, EnvState, EpisodeOutcome, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    FairPpo,
    Ppo,
    Fen,
    Soto,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [AlgorithmKind::FairPpo, AlgorithmKind::Ppo, AlgorithmKind::Fen, AlgorithmKind::Soto];

    pub fn label(self) -> &'static str {
        match self {
            AlgorithmKind::FairPpo => "fairppo",
            AlgorithmKind::Ppo => "ppo",
            AlgorithmKind::Fen => "fen",
            AlgorithmKind::Soto => "soto",
        }
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Fairness-penalty bookkeeping of one training episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyLog {
    pub retrospective_raw: f64,
    pub prospective_raw: f64,
    /// Weighted and normalised total handed to the updates.
    pub penalty: f64,
    /// Lambda used by each updated instance.
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub outcome: EpisodeOutcome,
    pub counterfactual: Option<EpisodeOutcome>,
    pub penalty: Option<PenaltyLog>,
}

pub trait Algorithm: Send {
    fn kind(&self) -> AlgorithmKind;

    fn env(&self) -> &EnvSpec;

    /// Collects one episode from `seed` and updates every parameter set.
    /// `progress` is the fraction of training already done.
    fn train_episode(&mut self, seed: u64, progress: f64) -> Result<TrainLog>;

    /// Plays `state` with frozen parameters; `seed` drives the action noise.
    fn play(&self, state: EnvState, seed: u64, mode: ActMode, check: bool) -> Result<EpisodeOutcome>;

    fn checkpoint(&self) -> Checkpoint;

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<()>;
}

/// Plays the episode of `seed` with frozen parameters, and optionally its
/// counterfactual twin with the same action noise.
pub fn evaluate_episode(
    algo: &dyn Algorithm,
    seed: u64,
    mode: ActMode,
    counterfactual: bool,
) -> Result<(EpisodeOutcome, Option<EpisodeOutcome>)> {
    let env = algo.env();
    let factual = algo.play(env.reset(seed, World::Factual)?, seed, mode, false)?;
    let cf = if counterfactual {
        Some(algo.play(env.reset(seed, World::Counterfactual)?, seed, mode, false)?)
    } else {
        None
    };
    Ok((factual, cf))
}

/// Names and snapshots `learners` into a checkpoint.
pub(crate) fn snapshot<'a>(
    kind: AlgorithmKind,
    env: &EnvSpec,
    learners: impl IntoIterator<Item = (String, &'a crate::policy::PpoLearner)>,
) -> Checkpoint {
    let mut ck = Checkpoint {
        instances: learners.into_iter().map(|(n, l)| (n, l.params.clone())).collect(),
        ..Default::default()
    };
    ck.meta.insert("algorithm".into(), kind.label().into());
    ck.meta.insert("environment".into(), env.name().into());
    ck
}

/// Loads the named parameter sets into `learners`, rejecting any missing
/// name or architecture mismatch before touching anything.
pub(crate) fn restore_into<'a>(
    checkpoint: &Checkpoint,
    learners: impl IntoIterator<Item = (String, &'a mut crate::policy::PpoLearner)>,
) -> Result<()> {
    use crate::error::Error;
    let mut pending = Vec::new();
    for (name, learner) in learners {
        let params = checkpoint
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing instance '{name}'")))?;
        if params.architecture() != learner.architecture() {
            return Err(Error::Checkpoint(format!(
                "instance '{name}' has architecture {:?}, expected {:?}",
                params.architecture(),
                learner.architecture()
            )));
        }
        pending.push((learner, params.clone()));
    }
    for (learner, params) in pending {
        *learner = learner.clone().with_params(params)?;
    }
    Ok(())
}
