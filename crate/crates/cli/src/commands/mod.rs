pub mod clean;
pub mod crawl;
pub mod density;
pub mod fit;
pub mod lrd;
pub mod report;
pub mod synth;

use std::collections::HashMap;

use densigraph_core::ingestion::{scan_manifest, ContentHash, FrameStatus, ManifestFilter, ManifestRecord};

use crate::config::Config;
use crate::error::{data, CliError, Result};
use crate::layout::CityLayout;

/// Runs `stage` for the named city, or for every city under the data root.
pub fn for_each_city(
    cfg: &Config,
    city: Option<&str>,
    stage: fn(&Config, &CityLayout) -> Result<()>,
) -> Result<()> {
    if !cfg.data_root.is_dir() {
        return Err(CliError::Data(format!("data root {} does not exist", cfg.data_root.display())));
    }
    let cities = match city {
        Some(c) => vec![c.to_string()],
        None => {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(&cfg.data_root).map_err(|e| data(cfg.data_root.display(), e))? {
                let path = entry.map_err(|e| data(cfg.data_root.display(), e))?.path();
                if path.join("manifest.jsonl").is_file() {
                    if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                        found.push(name.to_string());
                    }
                }
            }
            found.sort();
            found
        }
    };
    if cities.is_empty() {
        return Err(CliError::Data(format!("no city manifests under {}", cfg.data_root.display())));
    }
    for c in cities {
        let layout = CityLayout::new(&cfg.data_root, &c);
        if !layout.manifest().is_file() {
            return Err(CliError::Data(format!(
                "no manifest for city {c} at {} (run synth or crawl first)",
                layout.manifest().display()
            )));
        }
        log::info!("{c}: starting");
        stage(cfg, &layout)?;
    }
    Ok(())
}

pub fn city_records(layout: &CityLayout) -> Result<Vec<ManifestRecord>> {
    let filter = ManifestFilter { city: Some(layout.city.clone()), ..Default::default() };
    scan_manifest(&layout.root, &filter).map_err(|e| data(&layout.city, e))
}

/// Bytes behind a manifest record. Duplicates resolve to the stored frame
/// with the same hash; failed fetches have no bytes.
pub struct FrameBytes<'a> {
    layout: &'a CityLayout,
    stored: HashMap<ContentHash, String>,
}

impl<'a> FrameBytes<'a> {
    pub fn new(layout: &'a CityLayout, records: &[ManifestRecord]) -> Self {
        let stored = records
            .iter()
            .filter(|r| r.status == FrameStatus::Stored)
            .map(|r| (r.content_hash, r.relative_path.clone()))
            .collect();
        FrameBytes { layout, stored }
    }

    pub fn read(&self, rec: &ManifestRecord) -> Result<Vec<u8>> {
        let rel = match rec.status {
            FrameStatus::Failed => return Ok(Vec::new()),
            FrameStatus::Stored => &rec.relative_path,
            FrameStatus::Duplicate => match self.stored.get(&rec.content_hash) {
                Some(p) => p,
                None => return Ok(Vec::new()),
            },
        };
        let path = self.layout.root.join(rel);
        std::fs::read(&path).map_err(|e| data(path.display(), e))
    }
}
