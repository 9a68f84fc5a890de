use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{EnvKind, ExperimentConfig};
use crate::agents::partition;
use crate::algorithm::{Algorithm, AlgorithmKind, PenaltyLog};
use crate::error::{Error, Result};
use crate::fairness::{report, FairnessReport, ReportOptions};
use crate::policy::Checkpoint;
use crate::rollout::{derive_seed, purpose, ActMode, EpisodeOutcome, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

/// Hospital operating statistics of one day (or their mean over days).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HsOps {
    pub treated: f64,
    /// Mean wait for an escort, minutes.
    pub patient_wait: Option<f64>,
    pub escort_travel: Option<f64>,
    pub swing_moves: f64,
    pub perfect_pct: Option<f64>,
    pub backup_pct: Option<f64>,
    pub incorrect_pct: Option<f64>,
}

impl HsOps {
    fn from_outcome(o: &EpisodeOutcome) -> Option<Self> {
        o.hs.as_ref().map(|m| HsOps {
            treated: m.treated as f64,
            patient_wait: m.mean_escort_wait,
            escort_travel: m.mean_escort_travel,
            swing_moves: m.swing_moves as f64,
            perfect_pct: m.perfect_pct,
            backup_pct: m.backup_pct,
            incorrect_pct: m.incorrect_pct,
        })
    }

    pub const HEADER: [&'static str; 7] =
        ["treated", "patient_wait", "escort_travel", "swing_moves", "perfect_pct", "backup_pct", "incorrect_pct"];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.treated.to_string(),
            opt(self.patient_wait),
            opt(self.escort_travel),
            self.swing_moves.to_string(),
            opt(self.perfect_pct),
            opt(self.backup_pct),
            opt(self.incorrect_pct),
        ]
    }
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics of one training or evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub phase: Phase,
    pub episode: usize,
    pub seed: u64,
    pub config_hash: String,
    /// `None` when a group was empty in this episode.
    pub report: Option<FairnessReport>,
    pub hs: Option<HsOps>,
    pub penalty: Option<PenaltyLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub environment: EnvKind,
    pub algorithm: AlgorithmKind,
    pub label: String,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub rows: Vec<EpisodeRow>,
    /// Evaluation metrics averaged over episodes.
    pub summary: FairnessReport,
    pub hs_summary: Option<HsOps>,
    pub wall_clock_s: f64,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    pub fn train_rows(&self) -> impl Iterator<Item = &EpisodeRow> {
        self.rows.iter().filter(|r| r.phase == Phase::Train)
    }

    pub fn eval_rows(&self) -> impl Iterator<Item = &EpisodeRow> {
        self.rows.iter().filter(|r| r.phase == Phase::Eval)
    }
}

/// Seed of training episode `episode`.
pub fn episode_seed(run_seed: u64, episode: usize) -> u64 {
    derive_seed(run_seed, episode as u64, purpose::ENV)
}

/// Seed of evaluation episode `episode`; independent of the algorithm so
/// every method is scored on the same days and maps.
pub fn eval_seed(run_seed: u64, episode: usize) -> u64 {
    derive_seed(run_seed, purpose::EVAL, episode as u64)
}

/// Per-member utilities used for metrics: per-step means in the harvest
/// world, per-day patient rewards in the hospital.
fn utilities(o: &EpisodeOutcome) -> Vec<f64> {
    o.per_step_returns()
}

pub fn outcome_report(factual: &EpisodeOutcome, counterfactual: Option<&EpisodeOutcome>) -> Result<Option<FairnessReport>> {
    let f = utilities(factual);
    let cf = counterfactual.map(utilities);
    let p = partition(&factual.profiles)?;
    let opts = ReportOptions { counterfactual: cf.as_deref(), baseline_mean_reward: None };
    match report(&f, &p, &opts) {
        Ok(r) => Ok(Some(r)),
        Err(Error::EmptyGroup(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    match values.into_iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::Numeric(format!("{what} produced non-finite value {v}"))),
        None => Ok(()),
    }
}

/// Writes the parameters of a run that went non-finite next to its outputs.
fn dump_diagnostics(cfg: &ExperimentConfig, seed: u64, episode: usize, algo: &dyn Algorithm, err: &Error) -> Option<PathBuf> {
    let dir = run_dir(cfg, seed)?;
    std::fs::create_dir_all(&dir).ok()?;
    let path = dir.join(format!("diagnostic-ep{episode}.ckpt"));
    let mut ck = algo.checkpoint();
    ck.meta.insert("error".into(), err.to_string());
    ck.meta.insert("episode".into(), episode.to_string());
    ck.save(&path).ok()?;
    Some(path)
}

/// Output directory of one (config, seed) run.
pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> Option<PathBuf> {
    let hash = cfg.hash();
    cfg.output_dir.as_ref().map(|d| d.join(&hash[..12]).join(format!("seed-{seed}")))
}

fn save_checkpoint(cfg: &ExperimentConfig, seed: u64, algo: &dyn Algorithm, name: &str) -> Result<Option<PathBuf>> {
    let Some(dir) = run_dir(cfg, seed) else { return Ok(None) };
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    let mut ck = algo.checkpoint();
    ck.meta.insert("config_hash".into(), cfg.hash());
    ck.meta.insert("seed".into(), seed.to_string());
    ck.save(&path)?;
    Ok(Some(path))
}

/// Trains fresh learners for `seed`; returns them with the training rows.
pub fn train_learners(cfg: &ExperimentConfig, seed: u64) -> Result<(Box<dyn Algorithm>, Vec<EpisodeRow>, Option<PathBuf>)> {
    let mut algo = cfg.build(seed)?;
    let hash = cfg.hash();
    let mut rows = Vec::with_capacity(cfg.train_episodes);
    let mut checkpoint = None;
    for ep in 0..cfg.train_episodes {
        let progress = ep as f64 / cfg.train_episodes as f64;
        let step = algo.train_episode(episode_seed(seed, ep), progress).and_then(|log| {
            check_finite("episode returns", log.outcome.returns.iter().copied())?;
            if let Some(p) = &log.penalty {
                check_finite("fairness penalty", [p.retrospective_raw, p.prospective_raw, p.penalty])?;
            }
            Ok(log)
        });
        let log = match step {
            Ok(log) => log,
            Err(e) => {
                let dump = dump_diagnostics(cfg, seed, ep, algo.as_ref(), &e);
                return Err(match (e, dump) {
                    (Error::Numeric(m), Some(p)) => Error::Numeric(format!("{m}; parameters dumped to {}", p.display())),
                    (e, _) => e,
                });
            }
        };
        rows.push(EpisodeRow {
            phase: Phase::Train,
            episode: ep,
            seed,
            config_hash: hash.clone(),
            report: outcome_report(&log.outcome, log.counterfactual.as_ref())?,
            hs: HsOps::from_outcome(&log.outcome),
            penalty: log.penalty,
        });
        if cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0 {
            checkpoint = save_checkpoint(cfg, seed, algo.as_ref(), &format!("ep{:06}.ckpt", ep + 1))?;
        }
    }
    if let Some(p) = save_checkpoint(cfg, seed, algo.as_ref(), "final.ckpt")? {
        checkpoint = Some(p);
    }
    Ok((algo, rows, checkpoint))
}

/// Frozen-policy evaluation of `algo`: rows and their episode average.
pub fn evaluate_learners(
    algo: &dyn Algorithm,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<EpisodeRow>, FairnessReport, Option<HsOps>)> {
    let env = cfg.eval_env_spec();
    let mode = if cfg.greedy_eval { ActMode::Greedy } else { ActMode::Sample };
    let hash = cfg.hash();
    let mut rows = Vec::with_capacity(cfg.eval_episodes);
    for ep in 0..cfg.eval_episodes {
        let s = eval_seed(seed, ep);
        let factual = algo.play(env.reset(s, World::Factual)?, s, mode, false)?;
        let cf = algo.play(env.reset(s, World::Counterfactual)?, s, mode, false)?;
        check_finite("evaluation returns", factual.returns.iter().chain(&cf.returns).copied())?;
        rows.push(EpisodeRow {
            phase: Phase::Eval,
            episode: ep,
            seed,
            config_hash: hash.clone(),
            report: outcome_report(&factual, Some(&cf))?,
            hs: HsOps::from_outcome(&factual),
            penalty: None,
        });
    }
    let reports: Vec<&FairnessReport> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
    let summary = mean_report(&reports)?;
    let ops: Vec<&HsOps> = rows.iter().filter_map(|r| r.hs.as_ref()).collect();
    let ops = mean_ops(&ops);
    Ok((rows, summary, ops))
}

/// Train then evaluate one seed.
pub fn train(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    let start = Instant::now();
    let (algo, mut rows, checkpoint) = train_learners(cfg, seed)?;
    let (eval_rows, summary, hs_summary) = evaluate_learners(algo.as_ref(), cfg, seed)?;
    rows.extend(eval_rows);
    Ok(record(cfg, seed, rows, summary, hs_summary, start, checkpoint))
}

/// Evaluates the parameters stored at `checkpoint` under `cfg`.
pub fn evaluate(checkpoint: &Path, cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    let start = Instant::now();
    let mut algo = cfg.build(seed)?;
    algo.restore(&Checkpoint::load(checkpoint)?)?;
    let (rows, summary, hs_summary) = evaluate_learners(algo.as_ref(), cfg, seed)?;
    Ok(record(cfg, seed, rows, summary, hs_summary, start, Some(checkpoint.to_path_buf())))
}

fn record(
    cfg: &ExperimentConfig,
    seed: u64,
    rows: Vec<EpisodeRow>,
    summary: FairnessReport,
    hs_summary: Option<HsOps>,
    start: Instant,
    checkpoint: Option<PathBuf>,
) -> RunRecord {
    let (alpha, beta) = cfg.reported_weights();
    RunRecord {
        config_hash: cfg.hash(),
        environment: cfg.environment,
        algorithm: cfg.algorithm,
        label: cfg.label(),
        seed,
        alpha,
        beta,
        rows,
        summary,
        hs_summary,
        wall_clock_s: start.elapsed().as_secs_f64(),
        checkpoint,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

/// Field-wise mean of per-episode reports; optional fields and CSP levels
/// average over the episodes that have them.
pub fn mean_report(reports: &[&FairnessReport]) -> Result<FairnessReport> {
    if reports.is_empty() {
        return Err(Error::EmptyGroup("no evaluation episode had both groups populated".into()));
    }
    let levels: std::collections::BTreeSet<usize> = reports.iter().flat_map(|r| r.csp_by_lf.keys().copied()).collect();
    let csp_by_lf: BTreeMap<usize, f64> = levels
        .iter()
        .filter_map(|lf| mean_opt(reports.iter().map(|r| r.csp_by_lf.get(lf).copied())).map(|m| (*lf, m)))
        .collect();
    let mut skipped: Vec<usize> = reports.iter().flat_map(|r| r.csp_skipped.iter().copied()).collect();
    skipped.sort_unstable();
    skipped.dedup();
    skipped.retain(|lf| !csp_by_lf.contains_key(lf));
    Ok(FairnessReport {
        mean_reward: mean(reports.iter().map(|r| r.mean_reward)),
        dp: mean(reports.iter().map(|r| r.dp)),
        cf: mean_opt(reports.iter().map(|r| r.cf)),
        csp_by_lf,
        csp_total: mean(reports.iter().map(|r| r.csp_total)),
        csp_skipped: skipped,
        gini: mean(reports.iter().map(|r| r.gini)),
        jfi: mean(reports.iter().map(|r| r.jfi)),
        nnsw: mean(reports.iter().map(|r| r.nnsw)),
        price_of_fairness: mean_opt(reports.iter().map(|r| r.price_of_fairness)),
    })
}

fn mean_ops(ops: &[&HsOps]) -> Option<HsOps> {
    if ops.is_empty() {
        return None;
    }
    Some(HsOps {
        treated: mean(ops.iter().map(|o| o.treated)),
        patient_wait: mean_opt(ops.iter().map(|o| o.patient_wait)),
        escort_travel: mean_opt(ops.iter().map(|o| o.escort_travel)),
        swing_moves: mean(ops.iter().map(|o| o.swing_moves)),
        perfect_pct: mean_opt(ops.iter().map(|o| o.perfect_pct)),
        backup_pct: mean_opt(ops.iter().map(|o| o.backup_pct)),
        incorrect_pct: mean_opt(ops.iter().map(|o| o.incorrect_pct)),
    })
}

/// Fills each record's price of fairness from the α=β=0 Fair-PPO run (or,
/// failing that, the PPO run) of the same environment and seed. It stays
/// empty when there is no baseline or the baseline reward is zero.
pub fn attach_price_of_fairness(records: &mut [RunRecord]) {
    let is_baseline = |r: &RunRecord, kind: AlgorithmKind| r.algorithm == kind && r.alpha == 0.0 && r.beta == 0.0;
    let mut baselines: BTreeMap<(EnvKind, u64), f64> = BTreeMap::new();
    for kind in [AlgorithmKind::Ppo, AlgorithmKind::FairPpo] {
        for r in records.iter().filter(|r| is_baseline(r, kind)) {
            baselines.insert((r.environment, r.seed), r.summary.mean_reward);
        }
    }
    for r in records.iter_mut() {
        r.summary.price_of_fairness = baselines
            .get(&(r.environment, r.seed))
            .and_then(|b| crate::fairness::price_of_fairness(r.summary.mean_reward, *b).ok());
    }
}
