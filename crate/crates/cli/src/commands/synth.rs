use std::path::PathBuf;

use clap::{Args, ValueEnum};
use densigraph_core::ingestion::FrameStore;
use densigraph_core::pnm::encode_pgm;
use densigraph_core::quality::{Label, SeedLabel};
use densigraph_core::synth::{diurnal_scene, error_template, render_scene_sequence, rng, traffic_scene, SceneSpec};
use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::Config;
use crate::error::{data, read_text, write_output, CliError, Result};
use crate::layout::CityLayout;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// SceneSpec JSON file (one spec or an array of specs).
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Generate seeded scenes instead of reading a spec file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of cameras for a preset.
    #[arg(long, default_value_t = 2)]
    pub cameras: usize,
    /// Frames per camera for the traffic preset.
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    /// Frame width for the traffic preset.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Frame height for the traffic preset.
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    /// Seconds between frames for the diurnal preset.
    #[arg(long, default_value_t = 300)]
    pub interval: u32,
    /// Fraction of frames replaced by error banners, corrupt or empty files.
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
    /// Size of the labeled seed set written alongside injected outliers.
    #[arg(long, default_value_t = 10)]
    pub labels: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Traffic,
    Diurnal,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    One(Box<SceneSpec>),
    Many(Vec<SceneSpec>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Injected {
    Banner { dark: bool },
    Corrupt,
    Empty,
}

fn specs(cfg: &Config, city: &str, args: &SynthArgs) -> Result<Vec<SceneSpec>> {
    match (&args.spec, args.preset) {
        (Some(path), _) => {
            let text = read_text(path)?;
            let parsed: SpecFile = serde_json::from_str(&text).map_err(|e| data(path.display(), e))?;
            Ok(match parsed {
                SpecFile::One(s) => vec![*s],
                SpecFile::Many(v) => v,
            })
        }
        (None, Some(Preset::Traffic)) => Ok((0..args.cameras)
            .map(|i| {
                let mut s = traffic_scene(cfg.seed.wrapping_add(i as u64), args.width, args.height, args.frames, 4.0);
                s.camera_id = format!("cam{i:02}");
                s
            })
            .collect()),
        (None, Some(Preset::Diurnal)) => Ok((0..args.cameras)
            .map(|i| {
                let mut s = diurnal_scene(cfg.seed.wrapping_add(i as u64), cfg.utc_offset(city), args.interval);
                s.camera_id = format!("cam{i:02}");
                s
            })
            .collect()),
        (None, None) => Err(CliError::Usage("synth needs --spec FILE or --preset NAME".into())),
    }
}

pub fn run(cfg: &Config, city: Option<&str>, args: &SynthArgs) -> Result<()> {
    let city = city.ok_or_else(|| CliError::Usage("synth needs --city".into()))?;
    if !(0.0..=0.5).contains(&args.outliers) {
        return Err(CliError::Usage(format!("--outliers must lie in [0, 0.5], got {}", args.outliers)));
    }
    let specs = specs(cfg, city, args)?;
    let mut ids: Vec<&str> = specs.iter().map(|s| s.camera_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Data("scene specs share a camera_id".into()));
    }
    let rendered: Vec<(SceneSpec, Vec<Vec<u8>>)> = specs
        .into_par_iter()
        .map(|spec| {
            let frames = render_scene_sequence(&spec).map_err(|e| data(&spec.camera_id, e))?;
            let px = frames.into_iter().map(|f| f.pixels).collect();
            Ok((spec, px))
        })
        .collect::<Result<_>>()?;

    let layout = CityLayout::new(&cfg.data_root, city);
    let mut store = FrameStore::open(&cfg.data_root, city).map_err(|e| data(city, e))?;
    let mut inject = rng(cfg.seed ^ 0x0005_eed0_u64);
    let mut banners = Vec::new();
    let mut regular = Vec::new();
    let mut written = 0usize;
    for (spec, frames) in &rendered {
        let last = store.last_capture(&spec.camera_id);
        for (t, px) in frames.iter().enumerate() {
            // draws happen for every frame so reruns replay the same choices
            let roll: f64 = inject.random();
            let kind = inject.random_range(0..4u8);
            let at = spec.timestamp(t);
            let injected = (roll < args.outliers).then_some(match kind {
                0 => Injected::Corrupt,
                1 => Injected::Empty,
                k => Injected::Banner { dark: k == 2 },
            });
            let bytes = match injected {
                None => encode_pgm(spec.width, spec.height, px),
                Some(Injected::Banner { dark }) => {
                    encode_pgm(spec.width, spec.height, &error_template(&mut inject, spec.width, spec.height, dark))
                }
                Some(Injected::Corrupt) => {
                    let full = encode_pgm(spec.width, spec.height, px);
                    full[..full.len() / 2].to_vec()
                }
                Some(Injected::Empty) => Vec::new(),
            };
            if last.is_some_and(|l| at <= l) {
                continue;
            }
            let rec = store.store_frame(&spec.camera_id, at, &bytes).map_err(|e| data(city, e))?;
            written += 1;
            match injected {
                Some(Injected::Banner { dark }) => banners.push((dark, rec.relative_path)),
                None => regular.push(rec.relative_path),
                _ => {}
            }
        }
    }
    log::info!("{city}: stored {written} frames from {} scenes", rendered.len());

    if args.outliers > 0.0 && written > 0 {
        let labels = seed_labels(&regular, &banners, args.labels);
        let json = serde_json::to_string_pretty(&labels).expect("labels serialize");
        write_output(&layout.default_labels(), json.as_bytes())?;
        log::info!("{city}: wrote {} seed labels", labels.len());
    }
    Ok(())
}

/// Seed labels in the 7:3 regular-to-outlier ratio, banners alternating
/// polarity so both kinds are represented.
fn seed_labels(regular: &[String], banners: &[(bool, String)], total: usize) -> Vec<SeedLabel> {
    let n_out = (total * 3).div_ceil(10);
    let mut out = Vec::new();
    let (dark, light): (Vec<_>, Vec<_>) = banners.iter().partition(|(d, _)| *d);
    let mut queues = [dark.into_iter(), light.into_iter()];
    let mut picked = 0;
    'fill: while picked < n_out {
        let mut progressed = false;
        for q in &mut queues {
            if picked == n_out {
                break 'fill;
            }
            if let Some((_, p)) = q.next() {
                out.push(SeedLabel { relative_path: p.clone(), label: Label::Outlier });
                picked += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    // evenly strided so every camera and time of day is represented
    let n_reg = (total - picked).min(regular.len());
    out.extend((0..n_reg).map(|i| SeedLabel {
        relative_path: regular[(2 * i + 1) * regular.len() / (2 * n_reg)].clone(),
        label: Label::Regular,
    }));
    out.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_labels_cover_both_banner_kinds() {
        let regular: Vec<String> = (0..20).map(|i| format!("r{i:02}")).collect();
        let banners = vec![(true, "d1".into()), (true, "d2".into()), (false, "l1".into())];
        let labels = seed_labels(&regular, &banners, 10);
        assert_eq!(labels.len(), 10);
        let outliers: Vec<_> = labels.iter().filter(|l| l.label == Label::Outlier).map(|l| l.relative_path.as_str()).collect();
        assert_eq!(outliers, vec!["d1", "d2", "l1"]);
    }
}
