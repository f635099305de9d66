//! Bundles earlier-stage artifacts into `<city>/report/`. Nothing is
//! recomputed; every input must already exist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use densigraph_core::lrd::{HurstMethod, HurstReport};
use densigraph_core::quality::parse_removed_csv;
use densigraph_core::stats::{Family, FitReport};
use serde::Serialize;

use super::fit::FitOutcome;
use crate::config::Config;
use crate::error::{data, read_text, write_output, CliError, Result};
use crate::layout::CityLayout;

#[derive(Debug, Serialize)]
struct CameraSummary {
    fit: FitSummary,
    hurst: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum FitSummary {
    Fitted {
        best: Family,
        ks_stat: f64,
        passes_95: bool,
        within_tight: bool,
        within_loose: bool,
        low_confidence: bool,
        sample_size: usize,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Serialize)]
struct CitySummary {
    city: String,
    cameras: BTreeMap<String, CameraSummary>,
    aggregate: FitSummary,
    fitted_cameras: usize,
    fraction_within_tight: f64,
    fraction_within_loose: f64,
    best_family_counts: BTreeMap<String, usize>,
    removed_by_reason: BTreeMap<String, usize>,
    ks_note: Option<String>,
    files: Vec<String>,
}

fn require(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "report input missing: {} (run the stage that produces it first)",
            path.display()
        )));
    }
    read_text(path)
}

fn summarize(outcome: &FitOutcome) -> FitSummary {
    match outcome {
        FitOutcome::Report(r) => {
            let best = &r.candidates[0];
            FitSummary::Fitted {
                best: r.best,
                ks_stat: best.ks_stat,
                passes_95: best.passes_95,
                within_tight: r.within_tight,
                within_loose: r.within_loose,
                low_confidence: r.low_confidence,
                sample_size: r.sample_size,
            }
        }
        FitOutcome::Failed { error, .. } => FitSummary::Failed { error: error.clone() },
    }
}

fn method_name(m: HurstMethod) -> &'static str {
    match m {
        HurstMethod::VarianceTime => "variance_time",
        HurstMethod::RescaledRange => "rescaled_range",
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&require(path)?).map_err(|e| data(path.display(), e))
}

pub fn run(_cfg: &Config, layout: &CityLayout) -> Result<()> {
    let cameras = layout
        .traced_cameras()
        .map_err(|e| data(format!("report input missing: {}", layout.density_dir().display()), e))?;
    if cameras.is_empty() {
        return Err(CliError::Data(format!("report input missing: no traces in {}", layout.density_dir().display())));
    }

    // (source, name inside the bundle)
    let mut copies: Vec<(PathBuf, String)> = Vec::new();
    let mut camera_summaries = BTreeMap::new();
    let mut fitted: Vec<FitReport> = Vec::new();
    for cam in &cameras {
        let outcome: FitOutcome = parse_json(&layout.camera_fit(cam))?;
        let hurst: Vec<HurstReport> = parse_json(&layout.hurst(cam))?;
        if let FitOutcome::Report(r) = &outcome {
            let cdf = layout.camera_cdf(cam);
            require(&cdf)?;
            copies.push((cdf, format!("cdf/{cam}.csv")));
            fitted.push((**r).clone());
        }
        copies.push((layout.hurst(cam), format!("hurst/{cam}.json")));
        let hurst = hurst.iter().map(|h| (method_name(h.estimate.method).to_string(), h.estimate.h)).collect();
        camera_summaries.insert(cam.clone(), CameraSummary { fit: summarize(&outcome), hurst });
    }

    let aggregate: FitOutcome = parse_json(&layout.aggregate_fit())?;
    if matches!(aggregate, FitOutcome::Report(_)) {
        let cdf = layout.aggregate_cdf();
        require(&cdf)?;
        copies.push((cdf, "cdf/aggregate.csv".to_string()));
    }
    for (src, name) in [
        (layout.fit_summary(), "fit_summary.csv"),
        (layout.hourly(), "hourly.csv"),
        (layout.removed_csv(), "removed.csv"),
    ] {
        require(&src)?;
        copies.push((src, name.to_string()));
    }

    let mut removed_by_reason = BTreeMap::new();
    for (_, reason) in parse_removed_csv(&require(&layout.removed_csv())?) {
        *removed_by_reason.entry(reason).or_insert(0) += 1;
    }
    let mut best_family_counts = BTreeMap::new();
    for r in &fitted {
        *best_family_counts.entry(format!("{:?}", r.best)).or_insert(0) += 1;
    }
    let fraction = |pred: fn(&FitReport) -> bool| {
        if fitted.is_empty() {
            0.0
        } else {
            fitted.iter().filter(|r| pred(r)).count() as f64 / fitted.len() as f64
        }
    };

    copies.sort_by(|a, b| a.1.cmp(&b.1));
    let out = layout.report_dir();
    for (src, name) in &copies {
        let bytes = std::fs::read(src).map_err(|e| data(src.display(), e))?;
        write_output(&out.join(name), &bytes)?;
    }

    let summary = CitySummary {
        city: layout.city.clone(),
        cameras: camera_summaries,
        aggregate: summarize(&aggregate),
        fitted_cameras: fitted.len(),
        fraction_within_tight: fraction(|r| r.within_tight),
        fraction_within_loose: fraction(|r| r.within_loose),
        best_family_counts,
        removed_by_reason,
        ks_note: fitted.first().map(|r| r.note.clone()),
        files: copies.into_iter().map(|(_, n)| n).collect(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_output(&out.join("summary.json"), json.as_bytes())?;
    log::info!("{}: report written to {}", layout.city, out.display());
    Ok(())
}
