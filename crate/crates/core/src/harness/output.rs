//! Stable CSV artifacts. Nothing timing-dependent is written to a CSV, so
//! identical (config, seed) pairs give byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{EnvKind, ExperimentConfig, Scale};
use super::run::{opt, HsOps, RunRecord};
use crate::error::{Error, Result};
use crate::fairness::FairnessReport;

pub const EPISODES_CSV: &str = "episodes.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const RANKING_CSV: &str = "ranking.csv";
pub const RECORDS_JSON: &str = "records.json";

fn lf_columns(env: EnvKind) -> (Vec<&'static str>, Vec<usize>) {
    let spec = ExperimentConfig::preset(env, Scale::Desk).env_spec();
    (spec.lf_labels(), spec.lf_domain())
}

fn single_env(records: &[RunRecord]) -> Result<EnvKind> {
    let first = records.first().ok_or_else(|| Error::Validation("no run records".into()))?.environment;
    if records.iter().any(|r| r.environment != first) {
        return Err(Error::Validation("records mix environments; write them separately".into()));
    }
    Ok(first)
}

fn identity(r: &RunRecord) -> Vec<String> {
    vec![r.algorithm.label().into(), r.label.clone(), r.config_hash.clone(), r.seed.to_string(), r.alpha.to_string(), r.beta.to_string()]
}

const IDENTITY: [&str; 6] = ["algorithm", "label", "config_hash", "seed", "alpha", "beta"];

fn report_cells(report: Option<&FairnessReport>, levels: &[usize], width: usize) -> Vec<String> {
    match report {
        Some(r) => r.csv_record(levels),
        None => vec![String::new(); width],
    }
}

fn ops_cells(ops: Option<&HsOps>) -> Vec<String> {
    ops.map(HsOps::csv_record).unwrap_or_else(|| vec![String::new(); HsOps::HEADER.len()])
}

/// Header of `episodes.csv`.
pub fn episode_header(env: EnvKind) -> Vec<String> {
    let (labels, _) = lf_columns(env);
    let mut h: Vec<String> = IDENTITY.iter().map(|s| s.to_string()).collect();
    h.extend(["phase", "episode"].map(String::from));
    h.extend(FairnessReport::csv_header(&labels));
    if env == EnvKind::Hs {
        h.extend(HsOps::HEADER.map(String::from));
    }
    h.extend(["retrospective_raw", "prospective_raw", "penalty"].map(String::from));
    h
}

/// Header of `summary.csv`.
pub fn summary_header(env: EnvKind) -> Vec<String> {
    let (labels, _) = lf_columns(env);
    let mut h: Vec<String> = IDENTITY.iter().map(|s| s.to_string()).collect();
    h.extend(FairnessReport::csv_header(&labels));
    if env == EnvKind::Hs {
        h.extend(HsOps::HEADER.map(String::from));
    }
    h
}

pub fn write_episodes_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let env = single_env(records)?;
    let (labels, levels) = lf_columns(env);
    let width = FairnessReport::csv_header(&labels).len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(episode_header(env))?;
    for r in records {
        for row in &r.rows {
            let mut cells = identity(r);
            cells.extend([row.phase.label().to_string(), row.episode.to_string()]);
            cells.extend(report_cells(row.report.as_ref(), &levels, width));
            if env == EnvKind::Hs {
                cells.extend(ops_cells(row.hs.as_ref()));
            }
            match &row.penalty {
                Some(p) => cells.extend([p.retrospective_raw, p.prospective_raw, p.penalty].map(|x| x.to_string())),
                None => cells.extend(["", "", ""].map(String::from)),
            }
            w.write_record(cells)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per run (configuration × seed).
pub fn write_summary_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let env = single_env(records)?;
    let (labels, levels) = lf_columns(env);
    let width = FairnessReport::csv_header(&labels).len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(summary_header(env))?;
    for r in records {
        let mut cells = identity(r);
        cells.extend(report_cells(Some(&r.summary), &levels, width));
        if env == EnvKind::Hs {
            cells.extend(ops_cells(r.hs_summary.as_ref()));
        }
        w.write_record(cells)?;
    }
    w.flush()?;
    Ok(())
}

/// Median over seeds of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub label: String,
    pub config_hash: String,
    pub runs: usize,
    pub median_dp: f64,
    pub median_reward: f64,
    pub median_csp_total: f64,
    pub median_price_of_fairness: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Configurations sorted by median demographic disparity, lowest first.
pub fn rank_by_disparity(records: &[RunRecord]) -> Vec<RankRow> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.label.clone(), r.config_hash.clone())).or_default().push(r);
    }
    let mut rows: Vec<RankRow> = groups
        .into_iter()
        .map(|((label, config_hash), rs)| {
            let col = |f: &dyn Fn(&RunRecord) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
            let pof: Vec<f64> = rs.iter().filter_map(|r| r.summary.price_of_fairness).collect();
            RankRow {
                label,
                config_hash,
                runs: rs.len(),
                median_dp: col(&|r| r.summary.dp),
                median_reward: col(&|r| r.summary.mean_reward),
                median_csp_total: col(&|r| r.summary.csp_total),
                median_price_of_fairness: median(&pof),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.median_dp.total_cmp(&b.median_dp).then_with(|| a.label.cmp(&b.label)));
    rows
}

pub fn write_ranking_csv(path: &Path, ranking: &[RankRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "config_hash", "runs", "median_dp", "median_reward", "median_csp_total", "median_price_of_fairness"])?;
    for r in ranking {
        w.write_record([
            r.label.clone(),
            r.config_hash.clone(),
            r.runs.to_string(),
            r.median_dp.to_string(),
            r.median_reward.to_string(),
            r.median_csp_total.to_string(),
            opt(r.median_price_of_fairness),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSVs and the full records (JSON, including wall-clock) to
/// `dir`; returns the paths written.
pub fn write_outputs(dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths = [EPISODES_CSV, SUMMARY_CSV, RANKING_CSV, RECORDS_JSON].map(|n| dir.join(n));
    write_episodes_csv(&paths[0], records)?;
    write_summary_csv(&paths[1], records)?;
    write_ranking_csv(&paths[2], &rank_by_disparity(records))?;
    std::fs::write(&paths[3], serde_json::to_vec_pretty(records)?)?;
    Ok(paths.to_vec())
}

pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let bytes = std::fs::read(dir.join(RECORDS_JSON))?;
    Ok(serde_json::from_slice(&bytes)?)
}
