use serde::{Deserialize, Serialize};

use super::dist::Family;
use super::fit::{fit, FitError};
use super::ks::{ks_critical_95, FittedDistribution};

/// Below this many positive observations a report is flagged low-confidence.
pub const LOW_CONFIDENCE_N: usize = 30;

/// `%`-deviation buckets as KS-statistic ceilings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationThresholds {
    pub tight: f64,
    pub loose: f64,
}

impl Default for DeviationThresholds {
    fn default() -> Self {
        DeviationThresholds { tight: 0.03, loose: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub family: Family,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub subject: String,
    /// Sorted by `ks_stat` ascending; ties keep family order.
    pub candidates: Vec<FittedDistribution>,
    pub best: Family,
    pub dropped_zero_fraction: f64,
    pub sample_size: usize,
    pub low_confidence: bool,
    pub within_tight: bool,
    pub within_loose: bool,
    pub thresholds: DeviationThresholds,
    pub critical_value_95: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FitFailure>,
    pub note: String,
}

const KS_NOTE: &str = "passes_95 uses the asymptotic 1.36/sqrt(n) critical value with \
parameters estimated from the same sample (no Lilliefors correction), so it is optimistic";

/// Fits every requested family to the positive part of `sample` and ranks
/// the fits by KS statistic.
pub fn rank_fits(
    subject: &str,
    sample: &[f64],
    families: &[Family],
    thresholds: DeviationThresholds,
) -> Result<FitReport, FitError> {
    let positive: Vec<f64> = sample.iter().copied().filter(|&x| x > 0.0 && x.is_finite()).collect();
    let dropped_zero_fraction = if sample.is_empty() {
        0.0
    } else {
        1.0 - positive.len() as f64 / sample.len() as f64
    };

    let mut fams = families.to_vec();
    fams.sort();
    fams.dedup();

    let mut candidates = Vec::new();
    let mut failures = Vec::new();
    for family in fams {
        match fit(family, &positive) {
            Ok(d) => candidates.push(FittedDistribution::score(d, &positive)),
            Err(e) => {
                failures.push(FitFailure { family, reason: e.to_string() });
            }
        }
    }
    if candidates.is_empty() {
        return Err(FitError::AllFitsFailed);
    }
    candidates.sort_by(|a, b| a.ks_stat.total_cmp(&b.ks_stat));
    let best = &candidates[0];
    Ok(FitReport {
        subject: subject.to_string(),
        best: best.dist.family(),
        within_tight: best.ks_stat <= thresholds.tight,
        within_loose: best.ks_stat <= thresholds.loose,
        candidates,
        dropped_zero_fraction,
        sample_size: positive.len(),
        low_confidence: positive.len() < LOW_CONFIDENCE_N,
        thresholds,
        critical_value_95: ks_critical_95(positive.len()),
        failures,
        note: KS_NOTE.to_string(),
    })
}

/// One CSV row per `(subject, family)` across `reports`.
pub fn summary_csv(reports: &[FitReport]) -> String {
    let mut out = String::from("subject,family,params,ks_stat,passes_95,rank\n");
    for r in reports {
        for (rank, c) in r.candidates.iter().enumerate() {
            let params: Vec<String> =
                c.dist.params().iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
            out.push_str(&format!(
                "{},{:?},{},{:.6},{},{}\n",
                r.subject,
                c.dist.family(),
                params.join(";"),
                c.ks_stat,
                c.passes_95,
                rank + 1
            ));
        }
    }
    out
}
