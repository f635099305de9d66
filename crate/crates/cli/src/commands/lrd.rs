use densigraph_core::density::DensityRecord;
use densigraph_core::lrd::{
    bucket_hourly, default_block_sizes, default_scales, hourly_csv, resample_locf, rs_hurst, variance_time_hurst,
    HurstReport,
};
use rayon::prelude::*;

use super::fit::load_trace;
use crate::config::Config;
use crate::error::{data, write_output, Result};
use crate::layout::CityLayout;

/// Median spacing between consecutive records, in whole seconds (at least 1).
fn nominal_step(records: &[DensityRecord]) -> u32 {
    let mut gaps: Vec<i64> = records
        .windows(2)
        .map(|w| (w[1].captured_at - w[0].captured_at).num_seconds())
        .filter(|&g| g > 0)
        .collect();
    if gaps.is_empty() {
        return 1;
    }
    gaps.sort_unstable();
    gaps[gaps.len() / 2].clamp(1, u32::MAX as i64) as u32
}

/// Both estimators on the longest gap-free stretch of one camera's trace.
pub fn hurst_reports(camera: &str, records: &[DensityRecord]) -> Vec<HurstReport> {
    let step = nominal_step(records);
    let Some(series) = resample_locf(camera, records, step).into_iter().max_by_key(|s| s.values.len()) else {
        return Vec::new();
    };
    let n = series.values.len();
    let mut out = Vec::new();
    for (name, result) in [
        ("variance-time", variance_time_hurst(&series, &default_scales(n))),
        ("R/S", rs_hurst(&series, &default_block_sizes(n))),
    ] {
        match result {
            Ok(estimate) => out.push(HurstReport { subject: camera.to_string(), estimate }),
            Err(e) => log::warn!("{camera}: {name} estimate unavailable over {n} points ({e})"),
        }
    }
    out
}

pub fn run(cfg: &Config, layout: &CityLayout) -> Result<()> {
    let cameras = layout
        .traced_cameras()
        .map_err(|e| data(format!("{} (run density first)", layout.density_dir().display()), e))?;
    let traces: Vec<(String, Vec<DensityRecord>)> = cameras
        .par_iter()
        .map(|c| Ok((c.clone(), load_trace(layout, c)?)))
        .collect::<Result<_>>()?;

    traces.par_iter().try_for_each(|(camera, records)| {
        let reports = hurst_reports(camera, records);
        for r in &reports {
            log::info!("{}/{camera}: {:?} H = {:.3}", layout.city, r.estimate.method, r.estimate.h);
        }
        let json = serde_json::to_string_pretty(&reports).expect("hurst reports serialize");
        write_output(&layout.hurst(camera), json.as_bytes())
    })?;

    let all: Vec<DensityRecord> = traces.into_iter().flat_map(|(_, r)| r).collect();
    let buckets = bucket_hourly(&all, cfg.utc_offset(&layout.city));
    write_output(&layout.hourly(), hourly_csv(&buckets).as_bytes())
}
