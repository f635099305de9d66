//! Multi-resolution aggregation and Hurst-exponent estimation.

use chrono::{DateTime, Duration, FixedOffset, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityRecord;

#[derive(Debug, Error, PartialEq)]
pub enum LrdError {
    #[error("block size {block} exceeds series length {len}")]
    BlockTooLarge { block: usize, len: usize },
    #[error("block size must be at least 1")]
    ZeroBlock,
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("need at least 3 usable scales, got {0}")]
    TooFewScales(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub subject: String,
    pub t0: DateTime<Utc>,
    /// Sampling step in seconds.
    pub step: f64,
    pub values: Vec<f64>,
}

/// Block means over disjoint blocks of `m`; a trailing partial block is dropped.
pub fn aggregate_series(series: &TimeSeries, m: usize) -> Result<TimeSeries, LrdError> {
    if m == 0 {
        return Err(LrdError::ZeroBlock);
    }
    if series.values.len() < m {
        return Err(LrdError::BlockTooLarge { block: m, len: series.values.len() });
    }
    let values = series
        .values
        .chunks_exact(m)
        .map(|c| c.iter().sum::<f64>() / m as f64)
        .collect();
    Ok(TimeSeries {
        subject: series.subject.clone(),
        t0: series.t0,
        step: series.step * m as f64,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HurstMethod {
    VarianceTime,
    #[serde(rename = "RS")]
    RescaledRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstEstimate {
    pub method: HurstMethod,
    #[serde(rename = "H")]
    pub h: f64,
    pub r_squared: f64,
    /// `(log2 scale, log2 statistic)` pairs behind the regression.
    #[serde(rename = "points")]
    pub regression_points: Vec<(f64, f64)>,
    pub scales_used: Vec<usize>,
}

/// Hurst report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstReport {
    pub subject: String,
    #[serde(flatten)]
    pub estimate: HurstEstimate,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Ordinary least squares; returns `(slope, intercept, r²)`.
pub fn ols(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    (slope, my - slope * mx, r2)
}

fn is_degenerate(values: &[f64]) -> bool {
    values.len() < 2 || values.iter().all(|&v| v == values[0])
}

/// Powers of two from 1 up to `n / 100`.
pub fn default_scales(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |m| Some(m * 2)).take_while(|&m| m <= (n / 100).max(1)).collect()
}

/// Powers of two from 16 up to `n / 16`.
pub fn default_block_sizes(n: usize) -> Vec<usize> {
    std::iter::successors(Some(16usize), |m| Some(m * 2)).take_while(|&m| m <= n / 16).collect()
}

/// Variance-time estimator: Var(X^(m)) decays like m^(−β), so the fitted
/// log–log slope is −β and `H = 1 − β/2`. Scales leaving fewer than 10
/// aggregated points are skipped.
pub fn variance_time_hurst(series: &TimeSeries, scales: &[usize]) -> Result<HurstEstimate, LrdError> {
    if is_degenerate(&series.values) {
        return Err(LrdError::DegenerateSeries);
    }
    let mut points = Vec::new();
    let mut used = Vec::new();
    for &m in scales {
        if m == 0 || series.values.len() / m < 10 {
            continue;
        }
        let agg = aggregate_series(series, m)?;
        let var = sample_variance(&agg.values);
        if var > 0.0 && var.is_finite() {
            points.push(((m as f64).log2(), var.log2()));
            used.push(m);
        }
    }
    if points.len() < 3 {
        return Err(LrdError::TooFewScales(points.len()));
    }
    let (slope, _, r_squared) = ols(&points);
    Ok(HurstEstimate {
        method: HurstMethod::VarianceTime,
        h: 1.0 + slope / 2.0,
        r_squared,
        regression_points: points,
        scales_used: used,
    })
}

/// Rescaled range of one block, or `None` when the block is flat.
fn rescaled_range(block: &[f64]) -> Option<f64> {
    let m = mean(block);
    let sd = (block.iter().map(|x| (x - m).powi(2)).sum::<f64>() / block.len() as f64).sqrt();
    if sd == 0.0 {
        return None;
    }
    let (mut cum, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
    for &x in block {
        cum += x - m;
        lo = lo.min(cum);
        hi = hi.max(cum);
    }
    Some((hi - lo) / sd)
}

/// Classical R/S estimator: slope of log mean(R/S) over disjoint blocks
/// against log block size. Block sizes below 8 are ignored.
pub fn rs_hurst(series: &TimeSeries, block_sizes: &[usize]) -> Result<HurstEstimate, LrdError> {
    let n = series.values.len();
    let usable: Vec<usize> = block_sizes.iter().copied().filter(|&b| b >= 8 && b <= n).collect();
    if usable.len() < 3 {
        return Err(LrdError::TooFewScales(usable.len()));
    }
    if is_degenerate(&series.values) {
        return Err(LrdError::DegenerateSeries);
    }
    let mut points = Vec::new();
    let mut used = Vec::new();
    for b in usable {
        let rs: Vec<f64> = series.values.chunks_exact(b).filter_map(rescaled_range).collect();
        if rs.is_empty() {
            continue;
        }
        points.push(((b as f64).log2(), mean(&rs).log2()));
        used.push(b);
    }
    if points.len() < 3 {
        return Err(LrdError::TooFewScales(points.len()));
    }
    let (h, _, r_squared) = ols(&points);
    Ok(HurstEstimate {
        method: HurstMethod::RescaledRange,
        h,
        r_squared,
        regression_points: points,
        scales_used: used,
    })
}

/// Puts irregular density records onto a regular `step_secs` grid by
/// carrying the last observation forward. Gaps longer than ten steps start
/// a new series.
pub fn resample_locf(subject: &str, records: &[DensityRecord], step_secs: u32) -> Vec<TimeSeries> {
    let mut recs: Vec<&DensityRecord> = records.iter().collect();
    recs.sort_by_key(|r| r.captured_at);
    let step = Duration::seconds(step_secs.max(1) as i64);
    let max_gap = step * 10;

    let mut out = Vec::new();
    let mut segment: Vec<&DensityRecord> = Vec::new();
    let flush = |segment: &mut Vec<&DensityRecord>, out: &mut Vec<TimeSeries>| {
        let Some(first) = segment.first() else { return };
        let t0 = first.captured_at;
        let last = segment.last().unwrap().captured_at;
        let mut values = Vec::new();
        let mut idx = 0;
        let mut t = t0;
        while t <= last {
            while idx + 1 < segment.len() && segment[idx + 1].captured_at <= t {
                idx += 1;
            }
            values.push(segment[idx].normalized);
            t += step;
        }
        out.push(TimeSeries { subject: subject.to_string(), t0, step: step_secs as f64, values });
        segment.clear();
    };
    for r in recs {
        if let Some(prev) = segment.last() {
            if r.captured_at - prev.captured_at > max_gap {
                flush(&mut segment, &mut out);
            }
        }
        segment.push(r);
    }
    flush(&mut segment, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourBucket {
    pub hour: u32,
    pub mean_normalized: f64,
    pub count: usize,
}

/// Mean normalized density per local hour of day. Empty hours report a
/// mean of 0 with count 0.
pub fn bucket_hourly(records: &[DensityRecord], utc_offset_minutes: i32) -> Vec<HourBucket> {
    let offset = FixedOffset::east_opt(utc_offset_minutes * 60).expect("offset within a day");
    let mut sums = [0.0f64; 24];
    let mut counts = [0usize; 24];
    for r in records {
        let hour = r.captured_at.with_timezone(&offset).hour() as usize;
        sums[hour] += r.normalized;
        counts[hour] += 1;
    }
    (0..24)
        .map(|h| HourBucket {
            hour: h as u32,
            mean_normalized: if counts[h] > 0 { sums[h] / counts[h] as f64 } else { 0.0 },
            count: counts[h],
        })
        .collect()
}

pub fn hourly_csv(buckets: &[HourBucket]) -> String {
    let mut s = String::from("hour,mean_normalized,count\n");
    for b in buckets {
        s.push_str(&format!("{},{:.6},{}\n", b.hour, b.mean_normalized, b.count));
    }
    s
}
