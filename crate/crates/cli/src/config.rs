use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use densigraph_core::density::{DensityMode, DensityParams, DEFAULT_TAU, DEFAULT_WINDOW};
use densigraph_core::quality::DEFAULT_K;
use densigraph_core::stats::DeviationThresholds;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const ROOT_ENV: &str = "DENSIGRAPH_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_root: PathBuf,
    pub catalog_path: Option<PathBuf>,
    /// Hand-labeled seed images; defaults to `<root>/<city>/labels.json`.
    pub labels_path: Option<PathBuf>,
    pub tau: f64,
    pub window_z: usize,
    pub cluster_k: usize,
    pub seed: u64,
    /// Minutes east of UTC, per city.
    pub utc_offsets: BTreeMap<String, i32>,
    pub ks_thresholds: DeviationThresholds,
    pub density_mode: DensityMode,
    pub background_refresh: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_root: PathBuf::from("data"),
            catalog_path: None,
            labels_path: None,
            tau: DEFAULT_TAU,
            window_z: DEFAULT_WINDOW,
            cluster_k: DEFAULT_K,
            seed: 0,
            utc_offsets: BTreeMap::new(),
            ks_thresholds: DeviationThresholds::default(),
            density_mode: DensityMode::Intensity,
            background_refresh: None,
        }
    }
}

/// Command-line overrides; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_root: Option<PathBuf>,
    pub catalog_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub tau: Option<f64>,
    pub window_z: Option<usize>,
    pub cluster_k: Option<usize>,
    pub seed: Option<u64>,
    pub utc_offsets: Vec<(String, i32)>,
    pub ks_tight: Option<f64>,
    pub ks_loose: Option<f64>,
    pub density_mode: Option<DensityMode>,
    pub background_refresh: Option<usize>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Layers: defaults < file < environment < flags. Relative paths in the
    /// file are taken relative to the file's directory.
    pub fn load(file: Option<&Path>, env_root: Option<String>, flags: &Overrides) -> Result<Config> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
                let mut cfg: Config = serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("."));
                resolve(base, &mut cfg.data_root);
                for p in [&mut cfg.catalog_path, &mut cfg.labels_path].into_iter().flatten() {
                    resolve(base, p);
                }
                cfg
            }
            None => Config::default(),
        };
        if let Some(root) = env_root.filter(|r| !r.is_empty()) {
            cfg.data_root = PathBuf::from(root);
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = flags.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        take!(data_root, tau, window_z, cluster_k, seed, density_mode);
        if flags.catalog_path.is_some() {
            cfg.catalog_path = flags.catalog_path.clone();
        }
        if flags.labels_path.is_some() {
            cfg.labels_path = flags.labels_path.clone();
        }
        if flags.background_refresh.is_some() {
            cfg.background_refresh = flags.background_refresh;
        }
        if let Some(t) = flags.ks_tight {
            cfg.ks_thresholds.tight = t;
        }
        if let Some(l) = flags.ks_loose {
            cfg.ks_thresholds.loose = l;
        }
        for (city, off) in &flags.utc_offsets {
            cfg.utc_offsets.insert(city.clone(), *off);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if !(0.0..=255.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 255], got {}", self.tau));
        }
        if self.window_z < 2 {
            return bad(format!("window_z must be at least 2, got {}", self.window_z));
        }
        if self.cluster_k < 2 {
            return bad(format!("cluster_k must be at least 2, got {}", self.cluster_k));
        }
        let DeviationThresholds { tight, loose } = self.ks_thresholds;
        if !(0.0 < tight && tight <= loose && loose <= 1.0) {
            return bad(format!("ks thresholds need 0 < tight <= loose <= 1, got {tight}, {loose}"));
        }
        if let Some((city, off)) = self.utc_offsets.iter().find(|(_, o)| o.abs() > 18 * 60) {
            return bad(format!("utc offset for {city} out of range: {off} minutes"));
        }
        Ok(())
    }

    pub fn utc_offset(&self, city: &str) -> i32 {
        self.utc_offsets.get(city).copied().unwrap_or_else(|| {
            log::warn!("no utc offset configured for {city}; using UTC");
            0
        })
    }

    pub fn density_params(&self) -> DensityParams {
        DensityParams {
            window_z: self.window_z,
            tau: self.tau,
            mode: self.density_mode,
            refresh_every: self.background_refresh,
        }
    }
}
