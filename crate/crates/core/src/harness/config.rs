use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithm::{Algorithm, AlgorithmKind};
use crate::benchmarks::{Fen, FenConfig, Soto, SotoConfig};
use crate::env::ah::AhConfig;
use crate::env::hs::HsConfig;
use crate::error::{Error, Result};
use crate::fairppo::{FairPpo, DEFAULT_PROBES};
use crate::fairness::{FairnessMetric, PenaltySpec};
use crate::policy::{LambdaMode, PpoConfig};
use crate::rollout::EnvSpec;

/// Values of the α/β grid.
pub const PAPER_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const SOTO_ALPHAS: [f64; 4] = [0.9, 1.0, 2.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Ah,
    Hs,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ah" => Ok(EnvKind::Ah),
            "hs" => Ok(EnvKind::Hs),
            _ => Err(Error::Config(format!("unknown environment '{s}', expected ah or hs"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(format!("unknown scale '{s}', expected desk or paper"))),
        }
    }
}

impl std::str::FromStr for AlgorithmKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Which runs a sweep launches per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// SOTO welfare exponents.
    pub soto_alphas: Vec<f64>,
    pub algorithms: Vec<AlgorithmKind>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alphas: PAPER_GRID.to_vec(),
            betas: PAPER_GRID.to_vec(),
            soto_alphas: SOTO_ALPHAS.to_vec(),
            algorithms: vec![AlgorithmKind::FairPpo],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub environment: EnvKind,
    pub scale: Scale,
    pub algorithm: AlgorithmKind,
    /// Disparity targeted by the Fair-PPO penalty.
    pub metric: FairnessMetric,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: LambdaMode,
    pub seeds: Vec<u64>,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Harvest evaluation episode length; `None` keeps the training length.
    pub eval_episode_length: Option<usize>,
    /// Argmax actions during evaluation instead of sampling.
    pub greedy_eval: bool,
    pub hidden: Vec<usize>,
    /// Replaces the per-algorithm PPO defaults.
    pub ppo: Option<PpoConfig>,
    pub fen: Option<FenConfig>,
    pub soto: Option<SotoConfig>,
    pub ah: AhConfig,
    pub hs: HsConfig,
    pub probe_limit: usize,
    /// Save a checkpoint every this many training episodes (0: only at the end).
    pub checkpoint_every: usize,
    pub output_dir: Option<PathBuf>,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(EnvKind::Ah, Scale::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(environment: EnvKind, scale: Scale) -> Self {
        let (train_episodes, eval_episodes, eval_episode_length) = match (environment, scale) {
            (EnvKind::Ah, Scale::Desk) => (150, 20, None),
            (EnvKind::Ah, Scale::Paper) => (1000, 500, Some(1500)),
            (EnvKind::Hs, Scale::Desk) => (50, 20, None),
            (EnvKind::Hs, Scale::Paper) => (2000, 500, None),
        };
        let (ah, hs) = match scale {
            Scale::Desk => (AhConfig::desk(), HsConfig::desk()),
            Scale::Paper => (AhConfig::baseline(), HsConfig::baseline()),
        };
        Self {
            environment,
            scale,
            algorithm: AlgorithmKind::FairPpo,
            metric: FairnessMetric::Dp,
            alpha: 0.5,
            beta: 0.5,
            lambda: LambdaMode::Dynamic,
            seeds: vec![0, 1, 2, 3, 4],
            train_episodes,
            eval_episodes,
            eval_episode_length,
            greedy_eval: false,
            hidden: vec![64, 64],
            ppo: None,
            fen: None,
            soto: None,
            ah,
            hs,
            probe_limit: DEFAULT_PROBES,
            checkpoint_every: 0,
            output_dir: None,
            sweep: SweepGrid::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn env_spec(&self) -> EnvSpec {
        match self.environment {
            EnvKind::Ah => EnvSpec::Ah(self.ah.clone()),
            EnvKind::Hs => EnvSpec::Hs(self.hs.clone()),
        }
    }

    /// Environment used for evaluation rollouts.
    pub fn eval_env_spec(&self) -> EnvSpec {
        match (self.environment, self.eval_episode_length) {
            (EnvKind::Ah, Some(len)) => EnvSpec::Ah(AhConfig { episode_length_ts: len, ..self.ah.clone() }),
            _ => self.env_spec(),
        }
    }

    pub fn fen_config(&self) -> FenConfig {
        let mut c = self.fen.clone().unwrap_or_else(|| FenConfig::for_env(&self.env_spec()));
        if let Some(p) = &self.ppo {
            c.ppo = p.clone();
        }
        c
    }

    pub fn soto_config(&self) -> SotoConfig {
        let mut c = self.soto.clone().unwrap_or_else(|| SotoConfig::for_env(&self.env_spec()));
        if let Some(p) = &self.ppo {
            c.ppo = p.clone();
        }
        c
    }

    pub fn penalty_spec(&self) -> PenaltySpec {
        PenaltySpec::new(self.metric, self.alpha, self.beta).with_lf_domain(self.env_spec().lf_domain())
    }

    pub fn validate(&self) -> Result<()> {
        self.env_spec().validate()?;
        self.eval_env_spec().validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.train_episodes == 0 {
            return Err(Error::Config("train_episodes must be >= 1".into()));
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.probe_limit == 0 {
            return Err(Error::Config("probe_limit must be >= 1".into()));
        }
        if let Some(p) = &self.ppo {
            p.validate()?;
        }
        match self.algorithm {
            AlgorithmKind::FairPpo => self.penalty_spec().validate()?,
            AlgorithmKind::Ppo => {}
            AlgorithmKind::Fen => self.fen_config().validate()?,
            AlgorithmKind::Soto => self.soto_config().validate()?,
        }
        Ok(())
    }

    /// Rejects grid values off the 0.25 lattice of the full-scale grid.
    pub fn validate_paper_grid(&self) -> Result<()> {
        for v in self.sweep.alphas.iter().chain(&self.sweep.betas) {
            if !PAPER_GRID.contains(v) {
                return Err(Error::Config(format!("{v} is not on the grid {PAPER_GRID:?}")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything that determines a run
    /// apart from the seed and where its outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output_dir = None;
        c.sweep = SweepGrid::default();
        let json = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    /// Fresh learners for `seed`.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Algorithm>> {
        self.validate()?;
        let env = self.env_spec();
        let ppo = self.ppo.clone().unwrap_or_default();
        Ok(match self.algorithm {
            AlgorithmKind::FairPpo => {
                let mut a = FairPpo::new(env, ppo, &self.hidden, Some(self.penalty_spec()), self.lambda, seed)?;
                a.probe_limit = self.probe_limit;
                Box::new(a)
            }
            AlgorithmKind::Ppo => Box::new(FairPpo::plain(env, ppo, &self.hidden, seed)?),
            AlgorithmKind::Fen => Box::new(Fen::new(env, self.fen_config(), &self.hidden, seed)?),
            AlgorithmKind::Soto => Box::new(Soto::new(env, self.soto_config(), &self.hidden, seed)?),
        })
    }

    /// The penalty weights a record reports: Fair-PPO's α/β, SOTO's welfare
    /// exponent as α, zero otherwise.
    pub fn reported_weights(&self) -> (f64, f64) {
        match self.algorithm {
            AlgorithmKind::FairPpo => (self.alpha, self.beta),
            AlgorithmKind::Soto => (self.soto_config().alpha_fairness, 0.0),
            _ => (0.0, 0.0),
        }
    }

    pub fn label(&self) -> String {
        match self.algorithm {
            AlgorithmKind::FairPpo => format!("fairppo a={} b={}", self.alpha, self.beta),
            AlgorithmKind::Soto => format!("soto a={}", self.soto_config().alpha_fairness),
            k => k.label().to_string(),
        }
    }
}
