use densigraph_core::density::parse_trace_csv;
use densigraph_core::stats::{rank_fits, summary_csv, Family, FitReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{data, read_text, write_output, Result};
use crate::layout::CityLayout;

const CDF_GRID: usize = 200;

/// On-disk fit result for one subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FitOutcome {
    Report(Box<FitReport>),
    Failed { subject: String, error: String },
}

pub fn load_trace(layout: &CityLayout, camera: &str) -> Result<Vec<densigraph_core::density::DensityRecord>> {
    let path = layout.trace(camera);
    parse_trace_csv(&read_text(&path)?).map_err(|e| data(path.display(), e))
}

/// Long-format plot data: `curve,x,y` with the empirical CDF followed by
/// every fitted candidate on a common grid.
pub fn cdf_csv(sample: &[f64], report: &FitReport) -> String {
    let mut xs: Vec<f64> = sample.iter().copied().filter(|&x| x > 0.0 && x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    let mut out = String::from("curve,x,y\n");
    let n = xs.len() as f64;
    for (i, x) in xs.iter().enumerate() {
        out.push_str(&format!("empirical,{x:.6e},{:.6}\n", (i + 1) as f64 / n));
    }
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    for c in &report.candidates {
        for g in 0..CDF_GRID {
            let x = lo + (hi - lo) * g as f64 / (CDF_GRID - 1) as f64;
            out.push_str(&format!("{:?},{x:.6e},{:.6}\n", c.dist.family(), c.dist.cdf(x)));
        }
    }
    out
}

fn fit_subject(
    cfg: &Config,
    layout: &CityLayout,
    subject: &str,
    values: &[f64],
    cdf_path: &std::path::Path,
) -> Result<FitOutcome> {
    match rank_fits(subject, values, &Family::ALL, cfg.ks_thresholds) {
        Ok(report) => {
            write_output(cdf_path, cdf_csv(values, &report).as_bytes())?;
            if report.low_confidence {
                log::warn!("{}/{subject}: only {} positive samples; low confidence", layout.city, report.sample_size);
            }
            Ok(FitOutcome::Report(Box::new(report)))
        }
        Err(e) => {
            log::warn!("{}/{subject}: no fit ({e})", layout.city);
            Ok(FitOutcome::Failed { subject: subject.to_string(), error: e.to_string() })
        }
    }
}

fn write_json(path: &std::path::Path, outcome: &FitOutcome) -> Result<()> {
    let json = serde_json::to_string_pretty(outcome).expect("fit outcome serializes");
    write_output(path, json.as_bytes())
}

pub fn run(cfg: &Config, layout: &CityLayout) -> Result<()> {
    let cameras = layout
        .traced_cameras()
        .map_err(|e| data(format!("{} (run density first)", layout.density_dir().display()), e))?;
    let traces: Vec<(String, Vec<f64>)> = cameras
        .par_iter()
        .map(|c| Ok((c.clone(), load_trace(layout, c)?.iter().map(|r| r.normalized).collect())))
        .collect::<Result<_>>()?;

    let outcomes: Vec<FitOutcome> = traces
        .par_iter()
        .map(|(camera, values)| {
            let o = fit_subject(cfg, layout, camera, values, &layout.camera_cdf(camera))?;
            write_json(&layout.camera_fit(camera), &o)?;
            Ok(o)
        })
        .collect::<Result<_>>()?;

    let pooled: Vec<f64> = traces.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let aggregate = fit_subject(cfg, layout, &layout.city, &pooled, &layout.aggregate_cdf())?;
    write_json(&layout.aggregate_fit(), &aggregate)?;

    let reports: Vec<FitReport> = outcomes
        .iter()
        .chain(std::iter::once(&aggregate))
        .filter_map(|o| match o {
            FitOutcome::Report(r) => Some((**r).clone()),
            FitOutcome::Failed { .. } => None,
        })
        .collect();
    write_output(&layout.fit_summary(), summary_csv(&reports).as_bytes())?;
    for r in &reports {
        log::info!("{}/{}: best {:?} (D = {:.4})", layout.city, r.subject, r.best, r.candidates[0].ks_stat);
    }
    Ok(())
}
