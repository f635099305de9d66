//! Temporal background subtraction and density extraction.
//!
//! A per-camera background is the pixelwise mean of the first `z` frames.
//! Each frame minus that background is thresholded at `tau`, and the
//! surviving intensities are summed into a raw density `d`.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TAU: f64 = 25.0;
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DensityError {
    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("need at least {needed} frames, got {available}")]
    InsufficientFrames { needed: usize, available: usize },
    #[error("frames from more than one camera ({0} and {1})")]
    MixedCameras(String, String),
    #[error("invalid frame: {0}")]
    InvalidFrame(&'static str),
}

/// ITU-R 601 luma, rounded and clamped to 8 bits.
pub fn to_grayscale(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub width: usize,
    pub height: usize,
    /// Row-major grayscale intensities.
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(
        camera_id: impl Into<String>,
        captured_at: DateTime<Utc>,
        width: usize,
        height: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, DensityError> {
        if width == 0 || height == 0 {
            return Err(DensityError::InvalidFrame("zero dimension"));
        }
        if pixels.len() != width * height {
            return Err(DensityError::InvalidFrame("pixel count does not match shape"));
        }
        Ok(Frame {
            camera_id: camera_id.into(),
            captured_at,
            width,
            height,
            pixels,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Static low-pass image for one camera. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    pub camera_id: String,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub window_size: usize,
    pub built_from: Vec<DateTime<Utc>>,
}

/// Builds the background as the pixelwise mean of the first `z` frames.
///
/// Accumulation is done in integers, so the result does not depend on the
/// order of the `z` frames.
pub fn build_background(frames: &[Frame], z: usize) -> Result<BackgroundModel, DensityError> {
    let needed = z.max(2);
    if frames.len() < needed || z < 2 {
        return Err(DensityError::InsufficientFrames {
            needed,
            available: frames.len(),
        });
    }
    let window = &frames[..z];
    let first = &window[0];
    let mut sums = vec![0u64; first.pixels.len()];
    for f in window {
        if f.shape() != first.shape() {
            return Err(DensityError::ShapeMismatch {
                expected: first.shape(),
                found: f.shape(),
            });
        }
        if f.camera_id != first.camera_id {
            return Err(DensityError::MixedCameras(
                first.camera_id.clone(),
                f.camera_id.clone(),
            ));
        }
        for (s, &p) in sums.iter_mut().zip(&f.pixels) {
            *s += p as u64;
        }
    }
    Ok(BackgroundModel {
        camera_id: first.camera_id.clone(),
        width: first.width,
        height: first.height,
        values: sums.into_iter().map(|s| s as f64 / z as f64).collect(),
        window_size: z,
        built_from: window.iter().map(|f| f.captured_at).collect(),
    })
}

/// High-pass residual after thresholding; values are 0 or `> tau`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thresholded {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

pub fn high_pass(
    frame: &Frame,
    bg: &BackgroundModel,
    tau: f64,
) -> Result<Thresholded, DensityError> {
    if frame.shape() != (bg.width, bg.height) {
        return Err(DensityError::ShapeMismatch {
            expected: (bg.width, bg.height),
            found: frame.shape(),
        });
    }
    let values = frame
        .pixels
        .iter()
        .zip(&bg.values)
        .map(|(&p, &b)| {
            let diff = p as f64 - b;
            if diff > tau {
                diff.round() as u8
            } else {
                0
            }
        })
        .collect();
    Ok(Thresholded {
        width: frame.width,
        height: frame.height,
        values,
    })
}

/// How the thresholded residual is reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// Sum of surviving intensities, normalized by `m * n * 255`.
    #[default]
    Intensity,
    /// Number of surviving pixels, normalized by `m * n`.
    ActivePixels,
}

/// Returns `(d, normalized)`.
pub fn density(img: &Thresholded, mode: DensityMode) -> (u64, f64) {
    let area = (img.width * img.height) as f64;
    match mode {
        DensityMode::Intensity => {
            let d: u64 = img.values.iter().map(|&v| v as u64).sum();
            (d, d as f64 / (area * 255.0))
        }
        DensityMode::ActivePixels => {
            let d = img.values.iter().filter(|&&v| v > 0).count() as u64;
            (d, d as f64 / area)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub raw_density: u64,
    pub normalized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    pub window_z: usize,
    pub tau: f64,
    pub mode: DensityMode,
    /// Rebuild the background every `k` frames from the `z` frames
    /// preceding the block. `None` keeps one background per camera.
    pub refresh_every: Option<usize>,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams {
            window_z: DEFAULT_WINDOW,
            tau: DEFAULT_TAU,
            mode: DensityMode::Intensity,
            refresh_every: None,
        }
    }
}

/// Runs the full extraction over one camera's time-ordered frames.
pub fn process_sequence(
    frames: &[Frame],
    params: &DensityParams,
) -> Result<Vec<DensityRecord>, DensityError> {
    let z = params.window_z;
    let mut bg = build_background(frames, z)?;
    let mut out = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        if let Some(k) = params.refresh_every.filter(|&k| k > 0) {
            if i >= z && i % k == 0 {
                bg = build_background(&frames[i - z..i], z)?;
            }
        }
        let hp = high_pass(frame, &bg, params.tau)?;
        let (raw_density, normalized) = density(&hp, params.mode);
        out.push(DensityRecord {
            camera_id: frame.camera_id.clone(),
            captured_at: frame.captured_at,
            raw_density,
            normalized,
        });
    }
    out.sort_by_key(|r| r.captured_at);
    Ok(out)
}

pub const TRACE_HEADER: &str = "camera_id,captured_at,raw_density,normalized";

pub fn write_trace_csv(records: &[DensityRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.camera_id,
            r.captured_at.to_rfc3339_opts(SecondsFormat::Secs, true),
            r.raw_density,
            r.normalized
        ));
    }
    s
}

#[derive(Debug, Error)]
#[error("trace line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<DensityRecord>, TraceParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => {
            return Err(TraceParseError {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| TraceParseError {
            line: i + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(err("expected 4 columns"));
        }
        out.push(DensityRecord {
            camera_id: cols[0].to_string(),
            captured_at: DateTime::parse_from_rfc3339(cols[1])
                .map_err(|_| err("bad timestamp"))?
                .with_timezone(&Utc),
            raw_density: cols[2].parse().map_err(|_| err("bad raw_density"))?,
            normalized: cols[3].parse().map_err(|_| err("bad normalized"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(i: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + i * 30, 0).unwrap()
    }

    fn frame(i: i64, w: usize, h: usize, px: Vec<u8>) -> Frame {
        Frame::new("cam", ts(i), w, h, px).unwrap()
    }

    #[test]
    fn grayscale_weights() {
        assert_eq!(to_grayscale(128, 128, 128), 128);
        assert_eq!(to_grayscale(255, 255, 255), 255);
        // 0.299 * 255 = 76.245
        assert_eq!(to_grayscale(255, 0, 0), 76);
        assert_eq!(to_grayscale(0, 255, 0), 150);
        assert_eq!(to_grayscale(0, 0, 255), 29);
    }

    #[test]
    fn background_of_identical_frames_is_exact() {
        let px: Vec<u8> = (0..16).map(|v| v * 13).collect();
        let frames: Vec<_> = (0..5).map(|i| frame(i, 4, 4, px.clone())).collect();
        let bg = build_background(&frames, 5).unwrap();
        let expect: Vec<f64> = px.iter().map(|&p| p as f64).collect();
        assert_eq!(bg.values, expect);
        assert_eq!(bg.built_from.len(), 5);
    }

    #[test]
    fn background_is_arithmetic_mean() {
        let frames = vec![frame(0, 3, 3, vec![0; 9]), frame(1, 3, 3, vec![100; 9])];
        let bg = build_background(&frames, 2).unwrap();
        assert!(bg.values.iter().all(|&v| v == 50.0));
    }

    #[test]
    fn background_uses_only_first_z() {
        let frames = vec![
            frame(0, 1, 1, vec![10]),
            frame(1, 1, 1, vec![20]),
            frame(2, 1, 1, vec![250]),
        ];
        assert_eq!(build_background(&frames, 2).unwrap().values, vec![15.0]);
    }

    #[test]
    fn background_errors() {
        let frames = vec![frame(0, 2, 2, vec![0; 4]), frame(1, 2, 1, vec![0; 2])];
        assert!(matches!(
            build_background(&frames, 2),
            Err(DensityError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            build_background(&frames[..1], 2),
            Err(DensityError::InsufficientFrames { .. })
        ));
        assert!(matches!(
            build_background(&frames, 3),
            Err(DensityError::InsufficientFrames { .. })
        ));
        assert!(matches!(
            build_background(&frames, 1),
            Err(DensityError::InsufficientFrames { .. })
        ));
    }

    fn zero_bg(w: usize, h: usize) -> BackgroundModel {
        let frames = vec![frame(0, w, h, vec![0; w * h]), frame(1, w, h, vec![0; w * h])];
        build_background(&frames, 2).unwrap()
    }

    #[test]
    fn high_pass_self_subtraction_is_zero() {
        let px: Vec<u8> = (0..25).map(|v| v * 10).collect();
        let frames = vec![frame(0, 5, 5, px.clone()), frame(1, 5, 5, px.clone())];
        let bg = build_background(&frames, 2).unwrap();
        let hp = high_pass(&frames[0], &bg, 0.0).unwrap();
        assert!(hp.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn high_pass_threshold() {
        let bg = zero_bg(10, 10);
        let mut px = vec![0u8; 100];
        px[42] = 200;
        let hp = high_pass(&frame(2, 10, 10, px.clone()), &bg, 25.0).unwrap();
        assert_eq!(hp.values[42], 200);
        assert_eq!(hp.values.iter().filter(|&&v| v > 0).count(), 1);

        px[42] = 20;
        let hp = high_pass(&frame(2, 10, 10, px), &bg, 25.0).unwrap();
        assert!(hp.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn negative_differences_are_dropped() {
        let frames = vec![frame(0, 1, 1, vec![200]), frame(1, 1, 1, vec![200])];
        let bg = build_background(&frames, 2).unwrap();
        let hp = high_pass(&frame(2, 1, 1, vec![0]), &bg, 25.0).unwrap();
        assert_eq!(hp.values, vec![0]);
    }

    #[test]
    fn high_pass_shape_mismatch() {
        let bg = zero_bg(2, 2);
        assert!(high_pass(&frame(0, 1, 4, vec![0; 4]), &bg, 25.0).is_err());
    }

    #[test]
    fn density_values() {
        let zero = Thresholded { width: 4, height: 4, values: vec![0; 16] };
        assert_eq!(density(&zero, DensityMode::Intensity), (0, 0.0));

        let full = Thresholded { width: 100, height: 100, values: vec![255; 10_000] };
        assert_eq!(density(&full, DensityMode::Intensity), (2_550_000, 1.0));

        let mut v = vec![0; 100];
        v[0] = 200;
        let one = Thresholded { width: 10, height: 10, values: v };
        let (d, norm) = density(&one, DensityMode::Intensity);
        assert_eq!(d, 200);
        assert!((norm - 0.007843).abs() < 1e-6);
        assert_eq!(density(&one, DensityMode::ActivePixels), (1, 0.01));
    }

    #[test]
    fn sequence_of_identical_frames_has_zero_density() {
        let frames: Vec<_> = (0..150).map(|i| frame(i, 8, 8, vec![90; 64])).collect();
        let recs = process_sequence(&frames, &DensityParams::default()).unwrap();
        assert_eq!(recs.len(), 150);
        assert!(recs.iter().all(|r| r.raw_density == 0 && r.normalized == 0.0));
    }

    #[test]
    fn sequence_needs_z_frames() {
        let frames: Vec<_> = (0..50).map(|i| frame(i, 2, 2, vec![0; 4])).collect();
        assert!(matches!(
            process_sequence(&frames, &DensityParams::default()),
            Err(DensityError::InsufficientFrames { needed: 100, available: 50 })
        ));
    }

    #[test]
    fn sliding_background_tracks_illumination_change() {
        // Scene brightens by 60 halfway through; a static background would
        // flag every later pixel.
        let frames: Vec<_> = (0..40)
            .map(|i| frame(i, 4, 4, vec![if i < 20 { 50 } else { 110 }; 16]))
            .collect();
        let fixed = DensityParams { window_z: 10, ..Default::default() };
        let recs = process_sequence(&frames, &fixed).unwrap();
        assert!(recs[35].raw_density > 0);

        let sliding = DensityParams { refresh_every: Some(10), ..fixed };
        let recs = process_sequence(&frames, &sliding).unwrap();
        assert_eq!(recs[35].raw_density, 0);
    }

    #[test]
    fn trace_csv_roundtrip() {
        let recs = vec![DensityRecord {
            camera_id: "syd-1".into(),
            captured_at: ts(0),
            raw_density: 200,
            normalized: 200.0 / 25500.0,
        }];
        let text = write_trace_csv(&recs);
        assert_eq!(
            text,
            "camera_id,captured_at,raw_density,normalized\nsyd-1,2023-11-14T22:13:20Z,200,0.007843\n"
        );
        let back = parse_trace_csv(&text).unwrap();
        assert_eq!(back[0].raw_density, 200);
        assert_eq!(back[0].captured_at, ts(0));
        assert!(parse_trace_csv("nope\n").is_err());
    }
}
