//! Experiment orchestration: configuration, training and evaluation runs,
//! α/β sweeps, CSV artifacts and figures.

pub mod config;
pub mod output;
pub mod plot;
pub mod run;
pub mod sweep;

pub use config::{EnvKind, ExperimentConfig, Scale, SweepGrid, PAPER_GRID, SOTO_ALPHAS};
pub use output::{rank_by_disparity, read_records, write_outputs, RankRow};
pub use plot::{export_plots, non_dominated};
pub use run::{attach_price_of_fairness, evaluate, train, EpisodeRow, HsOps, Phase, RunRecord};
pub use sweep::{sweep, SweepFailure, SweepOutcome};
