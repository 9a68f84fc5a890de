//! Group disparity metrics, the training penalties built from them, and
//! distributional statistics used in evaluation reports.

mod metrics;
mod penalty;
mod report;
mod stats;

pub use metrics::{
    conditional_statistical_disparity, counterfactual_disparity, demographic_disparity, CspResult,
};
pub use penalty::{
    cf_penalty, csp_penalty, dp_penalty, FairnessMetric, PenaltyNormalizer, PenaltySpec,
    NORMALIZER_FLOOR,
};
pub use report::{report, FairnessReport, ReportOptions};
pub use stats::{gini, jfi, nnsw, price_of_fairness, shift_nonnegative, SHIFT_EPSILON};
