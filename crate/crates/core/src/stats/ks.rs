use serde::{Deserialize, Serialize};

use super::dist::Distribution;

/// Asymptotic 95% one-sample critical value.
pub fn ks_critical_95(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// One-sample Kolmogorov–Smirnov statistic `D_n` of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d.max(above.abs()).max(below.abs())
    })
}

/// A fitted candidate scored against the sample it was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedDistribution {
    #[serde(flatten)]
    pub dist: Distribution,
    pub sample_size: usize,
    pub ks_stat: f64,
    pub passes_95: bool,
}

impl FittedDistribution {
    pub fn score(dist: Distribution, sample: &[f64]) -> Self {
        let ks_stat = ks_statistic(sample, |x| dist.cdf(x));
        FittedDistribution {
            dist,
            sample_size: sample.len(),
            ks_stat,
            passes_95: ks_stat < ks_critical_95(sample.len()),
        }
    }
}
