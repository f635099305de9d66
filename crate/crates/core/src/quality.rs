//! Outlier frame detection: rule filters for zero-size and undecodable
//! images, then standardized k-means with labels propagated from a small
//! hand-labeled seed set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityRecord;
use crate::ingestion::{FrameStatus, ManifestRecord};
use crate::pnm;

pub const DEFAULT_K: usize = 4;
const EDGE_STEP: i32 = 16;
const MAX_ITER: usize = 100;
const MOTION_TOL: f64 = 1e-6;
const RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub byte_size: u64,
    pub decode_ok: bool,
    pub width: usize,
    pub height: usize,
    pub mean_intensity: Vec<f64>,
    pub intensity_variance: Vec<f64>,
    /// Fraction of horizontal neighbour pairs differing by more than 16.
    pub edge_density: f64,
}

impl ImageFeatures {
    fn failed(byte_size: u64) -> Self {
        ImageFeatures {
            byte_size,
            decode_ok: false,
            width: 0,
            height: 0,
            mean_intensity: vec![0.0],
            intensity_variance: vec![0.0],
            edge_density: 0.0,
        }
    }

    pub fn vector(&self) -> Vec<f64> {
        let mut v = vec![self.byte_size as f64, self.width as f64, self.height as f64];
        v.extend(&self.mean_intensity);
        v.extend(&self.intensity_variance);
        v.push(self.edge_density);
        v
    }
}

pub fn extract_features(bytes: &[u8]) -> ImageFeatures {
    let byte_size = bytes.len() as u64;
    let Ok(raster) = pnm::decode(bytes) else {
        return ImageFeatures::failed(byte_size);
    };
    let ch = raster.channels;
    let npx = (raster.width * raster.height) as f64;
    let mut means = vec![0.0; ch];
    let mut vars = vec![0.0; ch];
    for c in 0..ch {
        let vals = raster.data.iter().skip(c).step_by(ch).map(|&v| v as f64);
        let m = vals.clone().sum::<f64>() / npx;
        means[c] = m;
        vars[c] = vals.map(|v| (v - m).powi(2)).sum::<f64>() / npx;
    }
    let gray = raster.to_gray();
    let pairs = (raster.width - 1) * raster.height;
    let edges = if pairs == 0 {
        0
    } else {
        gray.chunks_exact(raster.width)
            .flat_map(|row| row.windows(2))
            .filter(|w| (w[0] as i32 - w[1] as i32).abs() > EDGE_STEP)
            .count()
    };
    ImageFeatures {
        byte_size,
        decode_ok: true,
        width: raster.width,
        height: raster.height,
        mean_intensity: means,
        intensity_variance: vars,
        edge_density: if pairs == 0 { 0.0 } else { edges as f64 / pairs as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RemovalReason {
    ZeroSize,
    DecodeError,
    Duplicate,
    ClusterOutlier,
}

pub fn rule_filter(features: &ImageFeatures) -> Result<(), RemovalReason> {
    if features.byte_size == 0 {
        Err(RemovalReason::ZeroSize)
    } else if !features.decode_ok {
        Err(RemovalReason::DecodeError)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Regular,
    Outlier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub points: Vec<(ImageFeatures, Label)>,
}

/// Entry of the labeled seed file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLabel {
    pub relative_path: String,
    pub label: Label,
}

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("every feature dimension has zero variance and labels disagree")]
    DegenerateFeatures,
    #[error("need at least k = {k} unlabeled points, got {got}")]
    TooFewPoints { k: usize, got: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("labeled set needs at least one point")]
    NoLabels,
    #[error("feature vectors have inconsistent arity ({0} vs {1})")]
    ArityMismatch(usize, usize),
}

/// Per-dimension affine map to zero mean and unit variance; dimensions with
/// zero variance are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// `(source dimension, mean, std-dev)` for each retained dimension.
    pub dims: Vec<(usize, f64, f64)>,
}

impl Standardization {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len() as f64;
        let arity = rows[0].len();
        let dims = (0..arity)
            .filter_map(|d| {
                let m = rows.iter().map(|r| r[d]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                (sd > 1e-12 * (1.0 + m.abs())).then_some((d, m, sd))
            })
            .collect();
        Standardization { dims }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        self.dims.iter().map(|&(d, m, sd)| (raw[d] - m) / sd).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub cluster_labels: Vec<Label>,
    pub standardization: Standardization,
    pub arity: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (dd, p) in d2.iter_mut().zip(points) {
            *dd = dd.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> f64 {
    points.iter().map(|p| dist2(p, &centroids[nearest(centroids, p)])).sum()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let dim = centroids[0].len();
    for _ in 0..MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for p in points {
            let c = nearest(&centroids, p);
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut motion: f64 = 0.0;
        for (i, c) in centroids.iter_mut().enumerate() {
            if counts[i] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[i].iter().map(|s| s / counts[i] as f64).collect();
            motion = motion.max(dist2(c, &next).sqrt());
            *c = next;
        }
        if motion < MOTION_TOL {
            break;
        }
    }
    centroids
}

/// Fits standardized k-means on `unlabeled ∪ labeled` and labels each
/// cluster by majority vote of the labeled points it captures. Clusters
/// with no vote (or a tied vote) take the label of the nearest voted
/// centroid, or of the nearest labeled point when no cluster has a vote.
pub fn fit_clusters(
    unlabeled: &[ImageFeatures],
    labeled: &LabeledSet,
    k: usize,
    seed: u64,
) -> Result<ClusterModel, QualityError> {
    if k < 2 {
        return Err(QualityError::InvalidK(k));
    }
    if unlabeled.len() < k {
        return Err(QualityError::TooFewPoints { k, got: unlabeled.len() });
    }
    if labeled.points.is_empty() {
        return Err(QualityError::NoLabels);
    }
    let raw: Vec<Vec<f64>> = unlabeled
        .iter()
        .map(ImageFeatures::vector)
        .chain(labeled.points.iter().map(|(f, _)| f.vector()))
        .collect();
    let arity = raw[0].len();
    if let Some(bad) = raw.iter().find(|r| r.len() != arity) {
        return Err(QualityError::ArityMismatch(arity, bad.len()));
    }
    let standardization = Standardization::fit(&raw);
    let labels: Vec<Label> = labeled.points.iter().map(|(_, l)| *l).collect();
    if standardization.dims.is_empty() {
        // Every point is identical; only an unambiguous label set is usable.
        if labels.iter().any(|&l| l != labels[0]) {
            return Err(QualityError::DegenerateFeatures);
        }
        return Ok(ClusterModel {
            k,
            centroids: vec![Vec::new(); k],
            cluster_labels: vec![labels[0]; k],
            standardization,
            arity,
        });
    }
    let points: Vec<Vec<f64>> = raw.iter().map(|r| standardization.apply(r)).collect();
    // Several seeded k-means++ starts; the lowest within-cluster sum of
    // squares wins, earliest start on ties.
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = Vec::new();
    let mut best = f64::INFINITY;
    for _ in 0..RESTARTS {
        let c = lloyd(&points, kmeans_pp_init(&points, k, &mut rng));
        let w = inertia(&points, &c);
        if w < best {
            best = w;
            centroids = c;
        }
    }

    let labeled_pts = &points[unlabeled.len()..];
    let mut votes = vec![(0usize, 0usize); k];
    for (p, l) in labeled_pts.iter().zip(&labels) {
        let c = nearest(&centroids, p);
        match l {
            Label::Regular => votes[c].0 += 1,
            Label::Outlier => votes[c].1 += 1,
        }
    }
    let voted: Vec<Option<Label>> = votes
        .iter()
        .map(|&(r, o)| match r.cmp(&o) {
            std::cmp::Ordering::Greater => Some(Label::Regular),
            std::cmp::Ordering::Less => Some(Label::Outlier),
            std::cmp::Ordering::Equal => None,
        })
        .collect();
    let cluster_labels = (0..k)
        .map(|i| {
            if let Some(l) = voted[i] {
                return l;
            }
            let donor = (0..k)
                .filter(|&j| voted[j].is_some())
                .min_by(|&a, &b| {
                    dist2(&centroids[i], &centroids[a]).total_cmp(&dist2(&centroids[i], &centroids[b]))
                });
            match donor {
                Some(j) => voted[j].unwrap(),
                None => labels[nearest(labeled_pts, &centroids[i])],
            }
        })
        .collect();
    Ok(ClusterModel { k, centroids, cluster_labels, standardization, arity })
}

/// Label of the nearest centroid in standardized space. Vectors of the
/// wrong arity cannot belong to the fitted corpus and are outliers.
pub fn classify(model: &ClusterModel, features: &ImageFeatures) -> Label {
    let raw = features.vector();
    if raw.len() != model.arity {
        return Label::Outlier;
    }
    let p = model.standardization.apply(&raw);
    model.cluster_labels[nearest(&model.centroids, &p)]
}

/// One frame moving through the cleaning pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub record: ManifestRecord,
    pub features: ImageFeatures,
    pub density: Option<DensityRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cleaned {
    pub kept: Vec<TraceEntry>,
    pub removed: Vec<(TraceEntry, RemovalReason)>,
}

/// Partitions time-ordered entries into kept and removed. Rules run first,
/// then ingestion duplicates and repeated density samples, then the cluster
/// model when one is supplied.
pub fn clean_trace(entries: Vec<TraceEntry>, model: Option<&ClusterModel>) -> Cleaned {
    let mut out = Cleaned::default();
    let mut last_density: Option<(chrono::DateTime<chrono::Utc>, u64, String)> = None;
    for e in entries {
        let reason = rule_filter(&e.features).err().or_else(|| {
            let repeated = e.density.as_ref().is_some_and(|d| {
                last_density.as_ref().is_some_and(|(t, raw, cam)| {
                    *t == d.captured_at && *raw == d.raw_density && *cam == d.camera_id
                })
            });
            if e.record.status == FrameStatus::Duplicate || repeated {
                Some(RemovalReason::Duplicate)
            } else if model.is_some_and(|m| classify(m, &e.features) == Label::Outlier) {
                Some(RemovalReason::ClusterOutlier)
            } else {
                None
            }
        });
        if let Some(d) = &e.density {
            last_density = Some((d.captured_at, d.raw_density, d.camera_id.clone()));
        }
        match reason {
            Some(r) => out.removed.push((e, r)),
            None => out.kept.push(e),
        }
    }
    out
}

pub fn removed_csv(removed: &[(TraceEntry, RemovalReason)]) -> String {
    let mut s = String::from("relative_path,reason\n");
    for (e, r) in removed {
        s.push_str(&format!("{},{:?}\n", e.record.relative_path, r));
    }
    s
}

pub fn parse_removed_csv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .skip(1)
        .filter_map(|l| l.rsplit_once(','))
        .map(|(p, r)| (p.to_string(), r.to_string()))
        .collect()
}
