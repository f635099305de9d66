//! Artifact locations under `<root>/<city>/`.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct CityLayout {
    pub root: PathBuf,
    pub city: String,
}

impl CityLayout {
    pub fn new(root: &Path, city: &str) -> Self {
        CityLayout { root: root.to_path_buf(), city: city.to_string() }
    }

    pub fn dir(&self) -> PathBuf {
        self.root.join(&self.city)
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir().join("manifest.jsonl")
    }

    pub fn default_labels(&self) -> PathBuf {
        self.dir().join("labels.json")
    }

    pub fn removed_csv(&self) -> PathBuf {
        self.dir().join("clean").join("removed.csv")
    }

    pub fn kept_csv(&self) -> PathBuf {
        self.dir().join("clean").join("kept.csv")
    }

    pub fn cluster_model(&self) -> PathBuf {
        self.dir().join("clean").join("model.json")
    }

    pub fn density_dir(&self) -> PathBuf {
        self.dir().join("density")
    }

    pub fn trace(&self, camera: &str) -> PathBuf {
        self.density_dir().join(format!("{camera}.csv"))
    }

    pub fn fit_dir(&self) -> PathBuf {
        self.dir().join("fit")
    }

    pub fn camera_fit(&self, camera: &str) -> PathBuf {
        self.fit_dir().join("cameras").join(format!("{camera}.json"))
    }

    pub fn aggregate_fit(&self) -> PathBuf {
        self.fit_dir().join("aggregate.json")
    }

    pub fn fit_summary(&self) -> PathBuf {
        self.fit_dir().join("summary.csv")
    }

    pub fn camera_cdf(&self, camera: &str) -> PathBuf {
        self.fit_dir().join("cdf").join("cameras").join(format!("{camera}.csv"))
    }

    pub fn aggregate_cdf(&self) -> PathBuf {
        self.fit_dir().join("cdf").join("aggregate.csv")
    }

    pub fn lrd_dir(&self) -> PathBuf {
        self.dir().join("lrd")
    }

    pub fn hurst(&self, camera: &str) -> PathBuf {
        self.lrd_dir().join(format!("{camera}.json"))
    }

    pub fn hourly(&self) -> PathBuf {
        self.lrd_dir().join("hourly.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir().join("report")
    }

    /// Cameras with a density trace, sorted.
    pub fn traced_cameras(&self) -> std::io::Result<Vec<String>> {
        let mut cams = Vec::new();
        for entry in std::fs::read_dir(self.density_dir())? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    cams.push(stem.to_string());
                }
            }
        }
        cams.sort();
        Ok(cams)
    }
}
