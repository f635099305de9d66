use std::collections::{BTreeMap, HashSet};

use densigraph_core::density::{process_sequence, write_trace_csv, Frame};
use densigraph_core::ingestion::{FrameStatus, ManifestRecord};
use densigraph_core::pnm;
use rayon::prelude::*;

use super::{city_records, clean::read_kept};
use crate::config::Config;
use crate::error::{data, write_output, Result};
use crate::layout::CityLayout;

fn load_frames(layout: &CityLayout, camera: &str, records: &[ManifestRecord]) -> Result<Vec<Frame>> {
    records
        .iter()
        .map(|r| {
            let path = layout.root.join(&r.relative_path);
            let bytes = std::fs::read(&path).map_err(|e| data(path.display(), e))?;
            let raster = pnm::decode(&bytes).map_err(|e| data(path.display(), e))?;
            Frame::new(camera, r.captured_at, raster.width, raster.height, raster.to_gray())
                .map_err(|e| data(path.display(), e))
        })
        .collect()
}

pub fn run(cfg: &Config, layout: &CityLayout) -> Result<()> {
    let records = city_records(layout)?;
    let selected: Vec<ManifestRecord> = match read_kept(layout)? {
        Some(kept) => {
            let keep: HashSet<String> = kept.into_iter().map(|(_, rel)| rel).collect();
            records.into_iter().filter(|r| keep.contains(&r.relative_path)).collect()
        }
        None => {
            log::warn!("{}: no clean pass found; using every stored frame", layout.city);
            records.into_iter().filter(|r| r.status == FrameStatus::Stored).collect()
        }
    };
    let mut by_camera: BTreeMap<String, Vec<ManifestRecord>> = BTreeMap::new();
    for r in selected {
        by_camera.entry(r.camera_id.clone()).or_default().push(r);
    }
    let params = cfg.density_params();
    let rows: Vec<(String, usize)> = by_camera
        .par_iter()
        .map(|(camera, recs)| {
            let frames = load_frames(layout, camera, recs)?;
            let trace = process_sequence(&frames, &params).map_err(|e| data(format!("{}/{camera}", layout.city), e))?;
            write_output(&layout.trace(camera), write_trace_csv(&trace).as_bytes())?;
            Ok((camera.clone(), trace.len()))
        })
        .collect::<Result<_>>()?;
    for (camera, n) in rows {
        log::info!("{}/{camera}: {n} density records", layout.city);
    }
    Ok(())
}
