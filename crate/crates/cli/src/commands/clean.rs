use std::collections::HashMap;

use densigraph_core::ingestion::format_utc;
use densigraph_core::quality::{
    clean_trace, extract_features, fit_clusters, removed_csv, ClusterModel, ImageFeatures, LabeledSet, RemovalReason,
    SeedLabel, TraceEntry,
};
use rayon::prelude::*;

use super::{city_records, FrameBytes};
use crate::config::Config;
use crate::error::{data, read_text, write_output, CliError, Result};
use crate::layout::CityLayout;

pub const KEPT_HEADER: &str = "camera_id,captured_at,relative_path";

fn load_labels(cfg: &Config, layout: &CityLayout) -> Result<Option<Vec<SeedLabel>>> {
    let path = cfg.labels_path.clone().unwrap_or_else(|| layout.default_labels());
    if !path.is_file() {
        if cfg.labels_path.is_some() {
            return Err(CliError::Data(format!("labels file {} not found", path.display())));
        }
        return Ok(None);
    }
    let labels = serde_json::from_str(&read_text(&path)?).map_err(|e| data(path.display(), e))?;
    Ok(Some(labels))
}

fn cluster_model(
    cfg: &Config,
    layout: &CityLayout,
    entries: &[TraceEntry],
) -> Result<Option<ClusterModel>> {
    let Some(labels) = load_labels(cfg, layout)? else {
        log::warn!("{}: no seed labels; cluster pass skipped", layout.city);
        return Ok(None);
    };
    let by_path: HashMap<&str, &ImageFeatures> =
        entries.iter().map(|e| (e.record.relative_path.as_str(), &e.features)).collect();
    let mut labeled = LabeledSet { points: Vec::new() };
    for l in &labels {
        let f = by_path
            .get(l.relative_path.as_str())
            .ok_or_else(|| CliError::Data(format!("labeled image {} is not in the manifest", l.relative_path)))?;
        labeled.points.push(((*f).clone(), l.label));
    }
    let passing: Vec<ImageFeatures> = entries
        .iter()
        .filter(|e| densigraph_core::quality::rule_filter(&e.features).is_ok())
        .map(|e| e.features.clone())
        .collect();
    let model = fit_clusters(&passing, &labeled, cfg.cluster_k, cfg.seed).map_err(|e| data(&layout.city, e))?;
    Ok(Some(model))
}

pub fn run(cfg: &Config, layout: &CityLayout) -> Result<()> {
    let records = city_records(layout)?;
    let bytes = FrameBytes::new(layout, &records);
    let entries: Vec<TraceEntry> = records
        .into_par_iter()
        .map(|record| {
            let features = extract_features(&bytes.read(&record)?);
            Ok(TraceEntry { record, features, density: None })
        })
        .collect::<Result<_>>()?;

    let model = cluster_model(cfg, layout, &entries)?;
    let total = entries.len();
    let cleaned = clean_trace(entries, model.as_ref());

    let mut kept = String::from(KEPT_HEADER);
    kept.push('\n');
    for e in &cleaned.kept {
        kept.push_str(&format!(
            "{},{},{}\n",
            e.record.camera_id,
            format_utc(e.record.captured_at),
            e.record.relative_path
        ));
    }
    write_output(&layout.kept_csv(), kept.as_bytes())?;
    write_output(&layout.removed_csv(), removed_csv(&cleaned.removed).as_bytes())?;
    if let Some(m) = &model {
        let json = serde_json::to_string_pretty(m).expect("model serializes");
        write_output(&layout.cluster_model(), json.as_bytes())?;
    }

    let mut counts: Vec<(RemovalReason, usize)> = Vec::new();
    for (_, r) in &cleaned.removed {
        match counts.iter_mut().find(|(k, _)| k == r) {
            Some((_, n)) => *n += 1,
            None => counts.push((*r, 1)),
        }
    }
    counts.sort();
    log::info!("{}: kept {} of {total}; removed {:?}", layout.city, cleaned.kept.len(), counts);
    Ok(())
}

/// Kept frames from a previous clean pass: `(camera_id, relative_path)` in file order.
pub fn read_kept(layout: &CityLayout) -> Result<Option<Vec<(String, String)>>> {
    let path = layout.kept_csv();
    if !path.is_file() {
        return Ok(None);
    }
    let text = read_text(&path)?;
    let mut lines = text.lines();
    if lines.next() != Some(KEPT_HEADER) {
        return Err(CliError::Data(format!("{}: unexpected header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.splitn(3, ',').collect();
            match cols.as_slice() {
                [cam, _, rel] => Ok((cam.to_string(), rel.to_string())),
                _ => Err(CliError::Data(format!("{}: malformed line {l:?}", path.display()))),
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}
