//! Browser bindings for three interactive views: density extraction on a
//! synthetic road scene, distribution fitting, and Hurst estimation on
//! fractional Gaussian noise. Every export returns a JSON string.

use densigraph_core::density::{build_background, density, high_pass, DensityMode};
use densigraph_core::lrd::{default_block_sizes, default_scales, rs_hurst, variance_time_hurst, HurstEstimate};
use densigraph_core::stats::{rank_fits, DeviationThresholds, Distribution, Family};
use densigraph_core::synth::{coverage_truth, gen_fgn, render_scene_sequence, rng, sample_distribution, traffic_scene};
use rand::seq::SliceRandom;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SCENE_W: usize = 96;
const SCENE_H: usize = 64;
const WINDOW: usize = 100;
const CURVE_POINTS: usize = 120;
const MAX_SAMPLES: usize = 200_000;
const MAX_SERIES: usize = 1 << 20;

#[derive(Serialize)]
struct DensityView {
    width: usize,
    height: usize,
    frame: Vec<u8>,
    background: Vec<u8>,
    mask: Vec<u8>,
    normalized: Vec<f64>,
    coverage: Vec<f64>,
    pearson: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

pub fn density_view(seed: u64, frames: usize, tau: f64, noise: f64, show: usize) -> Result<String, String> {
    if !(WINDOW + 1..=2000).contains(&frames) {
        return Err(format!("frames must lie in {}..=2000", WINDOW + 1));
    }
    let spec = traffic_scene(seed, SCENE_W, SCENE_H, frames, noise);
    let rendered = render_scene_sequence(&spec).map_err(|e| e.to_string())?;
    let bg = build_background(&rendered, WINDOW).map_err(|e| e.to_string())?;
    let mut normalized = Vec::with_capacity(frames);
    let mut mask = Vec::new();
    let show = show.min(frames - 1);
    for (t, f) in rendered.iter().enumerate() {
        let hp = high_pass(f, &bg, tau).map_err(|e| e.to_string())?;
        normalized.push(density(&hp, DensityMode::Intensity).1);
        if t == show {
            mask = hp.values;
        }
    }
    let coverage = (0..frames).map(|t| coverage_truth(&spec, t)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let view = DensityView {
        width: SCENE_W,
        height: SCENE_H,
        frame: rendered[show].pixels.clone(),
        background: bg.values.iter().map(|v| v.round() as u8).collect(),
        mask,
        pearson: pearson(&normalized, &coverage),
        normalized,
        coverage,
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Serialize)]
struct Candidate {
    family: String,
    params: Vec<(&'static str, f64)>,
    ks_stat: f64,
    passes_95: bool,
    curve: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct FitView {
    best: String,
    critical_value_95: f64,
    empirical: Vec<(f64, f64)>,
    candidates: Vec<Candidate>,
}

fn distribution(family: &str, a: f64, b: f64) -> Result<Distribution, String> {
    let d = match Family::parse(family).ok_or_else(|| format!("unknown family {family:?}"))? {
        Family::Exponential => Distribution::Exponential { rate: a },
        Family::Normal => Distribution::Normal { mean: a, std_dev: b },
        Family::Gamma => Distribution::Gamma { shape: a, scale: b },
        Family::Weibull => Distribution::Weibull { shape: a, scale: b },
        Family::LogLogistic => Distribution::LogLogistic { scale: a, shape: b },
    };
    if !d.is_valid() {
        return Err(format!("invalid parameters for {family}"));
    }
    Ok(d)
}

/// Draws `n` values from the named family and ranks all five fits.
pub fn fit_view(family: &str, a: f64, b: f64, n: usize, seed: u64) -> Result<String, String> {
    if !(2..=MAX_SAMPLES).contains(&n) {
        return Err(format!("sample size must lie in 2..={MAX_SAMPLES}"));
    }
    let truth = distribution(family, a, b)?;
    let sample = sample_distribution(&truth, n, seed).map_err(|e| e.to_string())?;
    let report = rank_fits("demo", &sample, &Family::ALL, DeviationThresholds::default()).map_err(|e| e.to_string())?;

    let mut xs: Vec<f64> = sample.into_iter().filter(|&x| x > 0.0).collect();
    xs.sort_by(f64::total_cmp);
    let m = xs.len();
    let stride = m.div_ceil(400).max(1);
    let empirical = (0..m).step_by(stride).map(|i| (xs[i], (i + 1) as f64 / m as f64)).collect();
    let (lo, hi) = (xs[0], xs[m - 1]);
    let grid: Vec<f64> = (0..CURVE_POINTS).map(|g| lo + (hi - lo) * g as f64 / (CURVE_POINTS - 1) as f64).collect();
    let candidates = report
        .candidates
        .iter()
        .map(|c| Candidate {
            family: format!("{:?}", c.dist.family()),
            params: c.dist.params(),
            ks_stat: c.ks_stat,
            passes_95: c.passes_95,
            curve: grid.iter().map(|&x| (x, c.dist.cdf(x))).collect(),
        })
        .collect();
    let view = FitView { best: format!("{:?}", report.best), critical_value_95: report.critical_value_95, empirical, candidates };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Serialize)]
struct HurstView {
    preview: Vec<f64>,
    variance_time: Option<HurstEstimate>,
    rescaled_range: Option<HurstEstimate>,
}

/// Generates fGn with target `h`, optionally shuffles it, and runs both estimators.
pub fn hurst_view(h: f64, n: usize, seed: u64, shuffle: bool) -> Result<String, String> {
    if !(1024..=MAX_SERIES).contains(&n) {
        return Err(format!("length must lie in 1024..={MAX_SERIES}"));
    }
    let mut series = gen_fgn(h, n, seed).map_err(|e| e.to_string())?;
    if shuffle {
        series.values.shuffle(&mut rng(seed ^ 0x5aff1e));
    }
    let view = HurstView {
        preview: series.values.iter().take(1024).copied().collect(),
        variance_time: variance_time_hurst(&series, &default_scales(n)).ok(),
        rescaled_range: rs_hurst(&series, &default_block_sizes(n)).ok(),
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[wasm_bindgen(js_name = densityView)]
pub fn density_view_js(seed: u32, frames: u32, tau: f64, noise: f64, show: u32) -> Result<String, JsError> {
    density_view(seed as u64, frames as usize, tau, noise, show as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fitView)]
pub fn fit_view_js(family: &str, a: f64, b: f64, n: u32, seed: u32) -> Result<String, JsError> {
    fit_view(family, a, b, n as usize, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = hurstView)]
pub fn hurst_view_js(h: f64, n: u32, seed: u32, shuffle: bool) -> Result<String, JsError> {
    hurst_view(h, n as usize, seed as u64, shuffle).map_err(|e| JsError::new(&e))
}
