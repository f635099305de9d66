//! Seeded oracle generators: synthetic traffic scenes with exact coverage,
//! distribution samplers and exact fractional Gaussian noise.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::Frame;
use crate::lrd::TimeSeries;
#[cfg(feature = "codecs")]
use crate::pnm::encode_png_gray;
use crate::stats::Distribution;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("frame index {index} out of range (frame_count {frame_count})")]
    IndexOutOfRange { index: usize, frame_count: usize },
    #[error("invalid distribution parameters: {0:?}")]
    InvalidParams(Distribution),
    #[error("Hurst exponent must lie in (0, 1), got {0}")]
    InvalidH(f64),
    #[error("series length must be at least 2, got {0}")]
    TooShort(usize),
    #[error("circulant embedding has negative eigenvalues up to size {0}")]
    EmbeddingFailure(usize),
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Uniform draw on the open interval (0, 1).
fn open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Box–Muller standard normal.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1 = open_unit(rng);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Background {
    Uniform(u8),
    Map(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleEvent {
    /// First frame the vehicle is visible.
    pub enter_frame: usize,
    /// First frame it is gone again.
    pub exit_frame: usize,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub intensity: u8,
}

impl VehicleEvent {
    pub fn active_at(&self, t: usize) -> bool {
        self.enter_frame <= t && t < self.exit_frame
    }
}

fn default_camera() -> String {
    "synth-0".into()
}

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2012, 3, 5, 0, 0, 0).unwrap()
}

fn default_interval() -> u32 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Background,
    #[serde(default)]
    pub vehicle_events: Vec<VehicleEvent>,
    #[serde(default)]
    pub noise_stddev: f64,
    pub frame_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_camera")]
    pub camera_id: String,
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
    #[serde(default = "default_interval")]
    pub interval_seconds: u32,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, background: Background, frame_count: usize) -> Self {
        SceneSpec {
            width,
            height,
            background,
            vehicle_events: Vec::new(),
            noise_stddev: 0.0,
            frame_count,
            seed: 0,
            camera_id: default_camera(),
            start: default_start(),
            interval_seconds: default_interval(),
        }
    }

    pub fn background_pixels(&self) -> Vec<u8> {
        match &self.background {
            Background::Uniform(v) => vec![*v; self.width * self.height],
            Background::Map(m) => m.clone(),
        }
    }

    pub fn timestamp(&self, t: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(t as i64 * self.interval_seconds as i64)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 {
            return bad("zero dimension".into());
        }
        if self.frame_count == 0 {
            return bad("frame_count must be positive".into());
        }
        if self.interval_seconds == 0 {
            return bad("interval_seconds must be positive".into());
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return bad("noise_stddev must be finite and >= 0".into());
        }
        if let Background::Map(m) = &self.background {
            if m.len() != self.width * self.height {
                return bad("background map does not match shape".into());
            }
        }
        let bg = self.background_pixels();
        for (i, ev) in self.vehicle_events.iter().enumerate() {
            if ev.width == 0 || ev.height == 0 {
                return bad(format!("vehicle {i}: empty rectangle"));
            }
            if ev.x + ev.width > self.width || ev.y + ev.height > self.height {
                return bad(format!("vehicle {i}: rectangle out of bounds"));
            }
            if !(ev.enter_frame < ev.exit_frame && ev.exit_frame <= self.frame_count) {
                return bad(format!("vehicle {i}: need enter < exit <= frame_count"));
            }
            let min_contrast = rect_pixels(ev, self.width)
                .map(|p| (ev.intensity as f64 - bg[p] as f64).abs())
                .fold(f64::INFINITY, f64::min);
            if min_contrast <= 2.0 * self.noise_stddev {
                return bad(format!("vehicle {i}: contrast {min_contrast} within noise"));
            }
        }
        Ok(())
    }
}

fn rect_pixels(ev: &VehicleEvent, width: usize) -> impl Iterator<Item = usize> + '_ {
    (ev.y..ev.y + ev.height).flat_map(move |r| (ev.x..ev.x + ev.width).map(move |c| r * width + c))
}

/// Noiseless frame `t`: background with active rectangles painted in event order.
fn paint(spec: &SceneSpec, bg: &[u8], t: usize) -> Vec<u8> {
    let mut px = bg.to_vec();
    for ev in spec.vehicle_events.iter().filter(|e| e.active_at(t)) {
        for p in rect_pixels(ev, spec.width) {
            px[p] = ev.intensity;
        }
    }
    px
}

pub fn render_scene_sequence(spec: &SceneSpec) -> Result<Vec<Frame>, SynthError> {
    spec.validate()?;
    let bg = spec.background_pixels();
    let mut rng = rng(spec.seed);
    let frames = (0..spec.frame_count)
        .map(|t| {
            let mut px = paint(spec, &bg, t);
            if spec.noise_stddev > 0.0 {
                for p in px.iter_mut() {
                    let v = *p as f64 + spec.noise_stddev * standard_normal(&mut rng);
                    *p = v.round().clamp(0.0, 255.0) as u8;
                }
            }
            Frame::new(spec.camera_id.clone(), spec.timestamp(t), spec.width, spec.height, px)
                .expect("validated shape")
        })
        .collect();
    Ok(frames)
}

/// Exact fraction of the image covered by the union of rectangles active at `t`.
pub fn coverage_truth(spec: &SceneSpec, t: usize) -> Result<f64, SynthError> {
    if t >= spec.frame_count {
        return Err(SynthError::IndexOutOfRange {
            index: t,
            frame_count: spec.frame_count,
        });
    }
    let mut mask = vec![false; spec.width * spec.height];
    for ev in spec.vehicle_events.iter().filter(|e| e.active_at(t)) {
        for p in rect_pixels(ev, spec.width) {
            mask[p] = true;
        }
    }
    let covered = mask.iter().filter(|&&m| m).count();
    Ok(covered as f64 / mask.len() as f64)
}

/// Marsaglia–Tsang gamma variate with unit scale.
fn gamma_unit(shape: f64, rng: &mut impl Rng) -> f64 {
    if shape < 1.0 {
        let u = open_unit(rng);
        return gamma_unit(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u = open_unit(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

pub fn sample_distribution(dist: &Distribution, n: usize, seed: u64) -> Result<Vec<f64>, SynthError> {
    if !dist.is_valid() {
        return Err(SynthError::InvalidParams(*dist));
    }
    let mut rng = rng(seed);
    let out = (0..n)
        .map(|_| match *dist {
            Distribution::Normal { mean, std_dev } => mean + std_dev * standard_normal(&mut rng),
            Distribution::Gamma { shape, scale } => scale * gamma_unit(shape, &mut rng),
            _ => dist.quantile(open_unit(&mut rng)).expect("closed-form quantile"),
        })
        .collect();
    Ok(out)
}

/// Autocovariance of unit-variance fGn at lag `k`.
pub fn fgn_autocovariance(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * h;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

/// Exact fractional Gaussian noise by circulant embedding of the covariance.
pub fn gen_fgn(h: f64, n: usize, seed: u64) -> Result<TimeSeries, SynthError> {
    if !(h > 0.0 && h < 1.0) {
        return Err(SynthError::InvalidH(h));
    }
    if n < 2 {
        return Err(SynthError::TooShort(n));
    }
    let mut half = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let eigen = loop {
        let m = 2 * half;
        let mut c: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); m];
        for (j, cj) in c.iter_mut().enumerate().take(half + 1) {
            cj.re = fgn_autocovariance(h, j);
        }
        for j in 1..half {
            c[m - j].re = fgn_autocovariance(h, j);
        }
        planner.plan_fft_forward(m).process(&mut c);
        let max = c.iter().map(|z| z.re).fold(0.0, f64::max);
        let min = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min >= -1e-10 * max {
            break c.into_iter().map(|z| z.re.max(0.0)).collect::<Vec<_>>();
        }
        if half >= 64 * n.next_power_of_two() {
            return Err(SynthError::EmbeddingFailure(m));
        }
        half *= 2;
    };
    let m = eigen.len();
    let mut rng = rng(seed);
    let mut w: Vec<Complex64> = eigen
        .iter()
        .map(|&lambda| {
            let s = (lambda / m as f64).sqrt();
            Complex64::new(s * standard_normal(&mut rng), s * standard_normal(&mut rng))
        })
        .collect();
    planner.plan_fft_forward(m).process(&mut w);
    let values = w[..n].iter().map(|z| z.re).collect();
    Ok(TimeSeries {
        subject: format!("fgn-h{h:.2}"),
        t0: default_start(),
        step: 1.0,
        values,
    })
}

/// Textured road background: horizontal gradient plus dashed lane marks.
pub fn road_background(width: usize, height: usize, base: u8) -> Vec<u8> {
    let mut px = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let grad = (30 * c / width.max(1)) as u8;
            let lane = r % 25 == 12 && (c / 6) % 2 == 0;
            px.push(base.saturating_add(grad).saturating_add(if lane { 25 } else { 0 }));
        }
    }
    px
}

fn random_vehicle(
    rng: &mut impl Rng,
    width: usize,
    height: usize,
    enter: usize,
    exit: usize,
    intensity: u8,
) -> VehicleEvent {
    let w = rng.random_range(6..=16usize).min(width);
    let h = rng.random_range(4..=10usize).min(height);
    VehicleEvent {
        enter_frame: enter,
        exit_frame: exit,
        x: rng.random_range(0..=width - w),
        y: rng.random_range(0..=height - h),
        width: w,
        height: h,
        intensity,
    }
}

/// Populates `spec` with vehicles so that the number visible at frame `t`
/// tracks `target(t)`; vehicles last 3–12 frames.
fn spawn_to_target(spec: &mut SceneSpec, rng: &mut impl Rng, target: impl Fn(usize) -> usize) {
    for t in 0..spec.frame_count {
        let active = spec.vehicle_events.iter().filter(|e| e.active_at(t)).count();
        for _ in active..target(t) {
            let exit = (t + rng.random_range(3..=12usize)).min(spec.frame_count);
            let intensity = rng.random_range(180..=230u8);
            let ev = random_vehicle(rng, spec.width, spec.height, t, exit, intensity);
            spec.vehicle_events.push(ev);
        }
    }
}

/// Busy-road scene: 1–8 concurrent bright vehicles over a textured road.
pub fn traffic_scene(seed: u64, width: usize, height: usize, frame_count: usize, noise_stddev: f64) -> SceneSpec {
    let mut rng = rng(seed ^ 0x5ce7e);
    let mut spec = SceneSpec::new(
        width,
        height,
        Background::Map(road_background(width, height, rng.random_range(40..=70u8))),
        frame_count,
    );
    spec.noise_stddev = noise_stddev;
    spec.seed = seed;
    spec.camera_id = format!("synth-{seed}");
    // piecewise-constant target concurrency in [1, 8]
    let mut targets = Vec::with_capacity(frame_count);
    let mut level = rng.random_range(1..=8usize);
    while targets.len() < frame_count {
        let run = rng.random_range(5..=20usize);
        targets.extend(std::iter::repeat_n(level, run));
        level = rng.random_range(1..=8usize);
    }
    spawn_to_target(&mut spec, &mut rng, |t| targets[t]);
    spec
}

/// Scene in which no pixel is covered in more than `max_fraction` of the
/// frames of either half of the sequence. Vehicles are `contrast` levels
/// brighter than the uniform background.
pub fn sparse_occlusion_scene(
    seed: u64,
    size: usize,
    frame_count: usize,
    max_fraction: f64,
    contrast: u8,
    noise_stddev: f64,
) -> SceneSpec {
    let mut rng = rng(seed ^ 0x0cc1);
    let base = 90u8;
    let mut spec = SceneSpec::new(size, size, Background::Uniform(base), frame_count);
    spec.noise_stddev = noise_stddev;
    spec.seed = seed;
    let half = frame_count / 2;
    let budget = (max_fraction * half as f64).floor() as u32;
    let mut used = [vec![0u32; size * size], vec![0u32; size * size]];
    for _ in 0..20 * frame_count {
        let enter = rng.random_range(0..frame_count);
        let exit = (enter + rng.random_range(1..=3usize)).min(frame_count);
        let ev = random_vehicle(&mut rng, size, size, enter, exit, base + contrast);
        let fits = rect_pixels(&ev, size).all(|p| {
            (enter..exit).filter(|&t| t < half).count() as u32 + used[0][p] <= budget
                && (enter..exit).filter(|&t| t >= half).count() as u32 + used[1][p] <= budget
        });
        if fits {
            for p in rect_pixels(&ev, size).collect::<Vec<_>>() {
                used[0][p] += (enter..exit).filter(|&t| t < half).count() as u32;
                used[1][p] += (enter..exit).filter(|&t| t >= half).count() as u32;
            }
            spec.vehicle_events.push(ev);
        }
    }
    spec
}

/// Empty road for `z` frames, then one more non-overlapping vehicle every
/// `step` frames until the grid of slots is full.
pub fn monotone_scene(z: usize, step: usize, slots: usize) -> SceneSpec {
    let (w, h) = (96, 48);
    let frame_count = z + step * slots;
    let mut spec = SceneSpec::new(w, h, Background::Map(road_background(w, h, 60)), frame_count);
    let per_row = w / 12;
    for j in 0..slots {
        let (col, row) = (j % per_row, j / per_row);
        assert!(row * 8 + 6 <= h, "too many slots for the grid");
        spec.vehicle_events.push(VehicleEvent {
            enter_frame: z + j * step,
            exit_frame: frame_count,
            x: col * 12 + 1,
            y: row * 8 + 1,
            width: 10,
            height: 6,
            intensity: 220,
        });
    }
    spec
}

/// Expected number of visible vehicles at local hour `hour` (fractional):
/// morning and evening peaks, a midday trough and near-empty nights.
pub fn diurnal_intensity(hour: f64) -> f64 {
    let bump = |c: f64| 6.0 * (-(hour - c).powi(2) / (2.0 * 0.8 * 0.8)).exp();
    let daytime = if (6.5..=20.5).contains(&hour) { 1.0 } else { 0.0 };
    0.3 + daytime + bump(8.5) + bump(17.5)
}

/// One day of frames at `interval_seconds`, starting at local midnight.
pub fn diurnal_scene(seed: u64, utc_offset_minutes: i32, interval_seconds: u32) -> SceneSpec {
    let mut rng = rng(seed ^ 0xd1a1);
    let (w, h) = (80, 80);
    let frame_count = (86_400 / interval_seconds) as usize;
    let mut spec = SceneSpec::new(w, h, Background::Map(road_background(w, h, 50)), frame_count);
    spec.seed = seed;
    spec.noise_stddev = 3.0;
    spec.interval_seconds = interval_seconds;
    spec.camera_id = format!("diurnal-{seed}");
    spec.start = default_start() - Duration::minutes(utc_offset_minutes as i64);
    let secs = interval_seconds as f64;
    let targets: Vec<usize> = (0..frame_count)
        .map(|t| {
            let lambda = diurnal_intensity(t as f64 * secs / 3600.0);
            // integer part plus a Bernoulli draw for the remainder
            lambda.floor() as usize + usize::from(rng.random::<f64>() < lambda.fract())
        })
        .collect();
    spawn_to_target(&mut spec, &mut rng, |t| targets[t]);
    spec
}

/// Generating label of a synthetic quality-corpus image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorpusTruth {
    Regular,
    /// Placeholder banner; `dark` selects light ink on a dark panel.
    ErrorTemplate { dark: bool },
    Corrupt,
    ZeroSize,
}

impl CorpusTruth {
    pub fn is_outlier(self) -> bool {
        self != CorpusTruth::Regular
    }
}

#[derive(Debug, Clone)]
pub struct CorpusImage {
    pub name: String,
    pub bytes: Vec<u8>,
    pub truth: CorpusTruth,
}

/// Camera-failure placeholder: flat panel with blocky text rows.
pub fn error_template(rng: &mut impl Rng, width: usize, height: usize, dark: bool) -> Vec<u8> {
    let (panel, ink) = if dark {
        (rng.random_range(15..=35u8), rng.random_range(225..=250u8))
    } else {
        (rng.random_range(215..=240u8), rng.random_range(5..=30u8))
    };
    let mut px = vec![panel; width * height];
    let rows = rng.random_range(2..=4usize);
    for line in 0..rows {
        let y0 = height / 4 + line * 12;
        let mut x = width / 10;
        while x + 4 < width - width / 10 && y0 + 7 < height {
            if rng.random_bool(0.8) {
                for r in y0..y0 + 7 {
                    for c in x..x + 4 {
                        px[r * width + c] = ink;
                    }
                }
            }
            x += 6;
        }
    }
    px
}

#[cfg(feature = "codecs")]
fn corrupt_bytes(rng: &mut impl Rng, valid: &[u8]) -> Vec<u8> {
    match rng.random_range(0..3) {
        0 => valid[..valid.len() / 2].to_vec(),
        1 => {
            let mut v = valid.to_vec();
            let mid = v.len() / 2;
            for b in &mut v[mid - 16..mid + 16] {
                *b = rng.random();
            }
            v
        }
        _ => (0..valid.len()).map(|_| rng.random::<u8>()).collect(),
    }
}

/// Mixed corpus of PNG files: regular traffic frames from several cameras
/// plus injected outliers (error templates, corrupt bytes, zero-size files),
/// shuffled.
#[cfg(feature = "codecs")]
pub fn quality_corpus(seed: u64, total: usize, outlier_fraction: f64) -> Vec<CorpusImage> {
    let mut rng = rng(seed ^ 0xbad1);
    let (w, h) = (64, 48);
    let n_out = (total as f64 * outlier_fraction).round() as usize;
    let n_zero = n_out / 5;
    let n_corrupt = n_out / 5;
    let n_template = n_out - n_zero - n_corrupt;
    let n_regular = total - n_out;

    let cameras = 5;
    let mut regular = Vec::with_capacity(n_regular);
    for cam in 0..cameras {
        let count = n_regular / cameras + usize::from(cam < n_regular % cameras);
        let spec = traffic_scene(seed.wrapping_add(cam as u64 * 7919), w, h, count.max(1), 4.0);
        for f in render_scene_sequence(&spec).expect("generated scene is valid").into_iter().take(count) {
            regular.push(encode_png_gray(w, h, &f.pixels));
        }
    }

    let mut items: Vec<(Vec<u8>, CorpusTruth)> =
        regular.iter().cloned().map(|b| (b, CorpusTruth::Regular)).collect();
    for i in 0..n_template {
        let dark = i % 2 == 0;
        items.push((encode_png_gray(w, h, &error_template(&mut rng, w, h, dark)), CorpusTruth::ErrorTemplate { dark }));
    }
    for i in 0..n_corrupt {
        items.push((corrupt_bytes(&mut rng, &regular[i % regular.len()]), CorpusTruth::Corrupt));
    }
    for _ in 0..n_zero {
        items.push((Vec::new(), CorpusTruth::ZeroSize));
    }
    // Fisher–Yates with the seeded stream
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
    items
        .into_iter()
        .enumerate()
        .map(|(i, (bytes, truth))| CorpusImage { name: format!("img{i:04}.png"), bytes, truth })
        .collect()
}

/// Indices of a hand-labeling seed set: the first `regular` regular frames
/// and `outlier` banners, alternating banner polarity so each kind of
/// placeholder is represented.
pub fn seed_label_indices(corpus: &[CorpusImage], regular: usize, outlier: usize) -> Vec<usize> {
    let mut picked: Vec<usize> =
        corpus.iter().enumerate().filter(|(_, c)| c.truth == CorpusTruth::Regular).map(|(i, _)| i).take(regular).collect();
    let mut by_kind = [false, true].map(|dark| {
        corpus
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.truth == CorpusTruth::ErrorTemplate { dark })
            .map(|(i, _)| i)
    });
    let mut exhausted = [false; 2];
    while picked.len() < regular + outlier && !(exhausted[0] && exhausted[1]) {
        for (kind, it) in by_kind.iter_mut().enumerate() {
            if picked.len() == regular + outlier {
                break;
            }
            match it.next() {
                Some(i) => picked.push(i),
                None => exhausted[kind] = true,
            }
        }
    }
    picked.sort_unstable();
    picked
}
