//! Distribution fitting and goodness-of-fit ranking for density samples.

mod dist;
mod fit;
mod ks;
mod rank;
pub mod special;

pub use dist::{Distribution, Family};
pub use fit::{
    fit, fit_exponential, fit_gamma, fit_loglogistic, fit_normal, fit_weibull, FitError,
};
pub use ks::{ks_critical_95, ks_statistic, FittedDistribution};
pub use rank::{
    rank_fits, summary_csv, DeviationThresholds, FitFailure, FitReport, LOW_CONFIDENCE_N,
};
