use chrono::{DateTime, Duration, FixedOffset, NaiveTime, TimeZone, Utc};
use proptest::collection::vec;
use proptest::prelude::*;

use densigraph_core::density::{
    build_background, density, high_pass, process_sequence, DensityMode, DensityParams, DensityRecord, Frame,
};
use densigraph_core::ingestion::{
    scan_manifest, schedule_next_fetch, CameraMeta, ContentHash, DaylightWindow, FetchDecision, FrameStatus,
    FrameStore, ManifestFilter, ManifestRecord,
};
use densigraph_core::lrd::{aggregate_series, rs_hurst, variance_time_hurst, TimeSeries};
use densigraph_core::pnm::encode_pgm;
use densigraph_core::quality::{
    classify, clean_trace, extract_features, fit_clusters, ImageFeatures, Label, LabeledSet, RemovalReason,
    Standardization, TraceEntry,
};
use densigraph_core::stats::{
    fit, ks_statistic, rank_fits, DeviationThresholds, Distribution, Family,
};
use densigraph_core::synth::{coverage_truth, render_scene_sequence, sample_distribution, Background, SceneSpec, VehicleEvent};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 1000, ..ProptestConfig::default() }
}

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2012, 3, 5, 6, 0, 0).unwrap()
}

fn frames_from(w: usize, h: usize, pixels: &[Vec<u8>]) -> Vec<Frame> {
    pixels
        .iter()
        .enumerate()
        .map(|(i, p)| Frame::new("cam", t0() + Duration::seconds(i as i64), w, h, p.clone()).unwrap())
        .collect()
}

/// (width, height, z, frames) with z + 1 frames so one frame lies past the window.
fn frame_stack() -> impl Strategy<Value = (usize, usize, usize, Vec<Vec<u8>>)> {
    (1usize..10, 1usize..10, 2usize..6).prop_flat_map(|(w, h, z)| {
        (Just(w), Just(h), Just(z), vec(vec(any::<u8>(), w * h), z + 1))
    })
}

fn tseries(values: Vec<f64>) -> TimeSeries {
    TimeSeries { subject: "s".into(), t0: t0(), step: 30.0, values }
}

fn dist_strategy() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (0.05f64..20.0).prop_map(|rate| Distribution::Exponential { rate }),
        (-50.0f64..50.0, 0.1f64..10.0).prop_map(|(mean, std_dev)| Distribution::Normal { mean, std_dev }),
        (0.3f64..10.0, 0.1f64..10.0).prop_map(|(shape, scale)| Distribution::Gamma { shape, scale }),
        (0.4f64..6.0, 0.1f64..10.0).prop_map(|(shape, scale)| Distribution::Weibull { shape, scale }),
        (0.1f64..10.0, 1.2f64..8.0).prop_map(|(scale, shape)| Distribution::LogLogistic { scale, shape }),
    ]
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(config())]

    // ---- density ----
    fn normalized_density_is_bounded_and_zero_iff_empty(
        (w, h, z, px) in frame_stack(), tau in 0.0f64..255.0, active in any::<bool>()
    ) {
        let frames = frames_from(w, h, &px);
        let bg = build_background(&frames, z).unwrap();
        let mode = if active { DensityMode::ActivePixels } else { DensityMode::Intensity };
        for f in &frames {
            let hp = high_pass(f, &bg, tau).unwrap();
            let (d, norm) = density(&hp, mode);
            prop_assert!((0.0..=1.0).contains(&norm));
            let any_above = f.pixels.iter().zip(&bg.values).any(|(&p, &b)| p as f64 - b > tau);
            prop_assert_eq!(d == 0, !any_above);
        }
    }
    fn density_decreases_with_tau((w, h, z, px) in frame_stack(), a in 0.0f64..255.0, b in 0.0f64..255.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let frames = frames_from(w, h, &px);
        let bg = build_background(&frames, z).unwrap();
        for mode in [DensityMode::Intensity, DensityMode::ActivePixels] {
            for f in &frames {
                let d_lo = density(&high_pass(f, &bg, lo).unwrap(), mode).0;
                let d_hi = density(&high_pass(f, &bg, hi).unwrap(), mode).0;
                prop_assert!(d_lo >= d_hi);
            }
        }
    }
    fn painting_a_vehicle_increases_density(
        (w, h, z, px) in frame_stack(), tau in 0.0f64..200.0, mask in vec(any::<bool>(), 81), lift in 1u8..40
    ) {
        let frames = frames_from(w, h, &px);
        let bg = build_background(&frames, z).unwrap();
        let frame = &frames[z];
        let before = density(&high_pass(frame, &bg, tau).unwrap(), DensityMode::Intensity).0;
        let mut painted = frame.clone();
        let mut changed = false;
        for (i, (&p, &b)) in frame.pixels.iter().zip(&bg.values).enumerate() {
            let target = (b + tau).floor() + lift as f64;
            // only background pixels, and only where a brighter value exists
            if mask[i % mask.len()] && p as f64 - b <= tau && target <= 255.0 {
                painted.pixels[i] = target as u8;
                changed = true;
            }
        }
        let after = density(&high_pass(&painted, &bg, tau).unwrap(), DensityMode::Intensity).0;
        if changed {
            prop_assert!(after > before, "before {} after {}", before, after);
        } else {
            prop_assert_eq!(after, before);
        }
    }
    fn background_ignores_frame_order(
        ((w, h, z, px), perm) in frame_stack().prop_flat_map(|s| {
            let z = s.2;
            (Just(s), Just((0..z).collect::<Vec<usize>>()).prop_shuffle())
        })
    ) {
        let frames = frames_from(w, h, &px);
        let shuffled: Vec<Frame> = perm.iter().map(|&i| frames[i].clone()).collect();
        let a = build_background(&frames, z).unwrap();
        let b = build_background(&shuffled, z).unwrap();
        prop_assert_eq!(a.values, b.values);
    }
    fn extraction_is_deterministic((w, h, z, px) in frame_stack(), tau in 0.0f64..255.0, refresh in proptest::option::of(1usize..4)) {
        let frames = frames_from(w, h, &px);
        let params = DensityParams { window_z: z, tau, mode: DensityMode::Intensity, refresh_every: refresh };
        let a = process_sequence(&frames, &params).unwrap();
        let b = process_sequence(&frames, &params).unwrap();
        prop_assert_eq!(a.len(), frames.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.raw_density, y.raw_density);
            prop_assert_eq!(x.normalized.to_bits(), y.normalized.to_bits());
        }
    }

    // ---- ingestion ----
    fn schedule_never_misses_a_refresh(
        refresh in 2u32..7200, secs in 0u32..86_400, offset_min in -720i32..=840, start_h in 0u32..12, span_h in 1u32..12
    ) {
        let cam = CameraMeta {
            camera_id: "c".into(),
            city: "x".into(),
            latitude: 0.0,
            longitude: 0.0,
            refresh_interval: refresh,
            source_url: None,
            daylight_window: DaylightWindow(
                NaiveTime::from_hms_opt(start_h, 0, 0).unwrap(),
                NaiveTime::from_hms_opt(start_h + span_h, 0, 0).unwrap(),
            ),
        };
        let tz = FixedOffset::east_opt(offset_min * 60).unwrap();
        let now = tz.with_ymd_and_hms(2012, 3, 5, 0, 0, 0).unwrap() + Duration::seconds(secs as i64);
        match schedule_next_fetch(&cam, now) {
            FetchDecision::At(t) => {
                prop_assert!(cam.daylight_window.contains(now.time()));
                prop_assert!(t > now && t < now + Duration::seconds(refresh as i64));
            }
            FetchDecision::Skip(t) => {
                prop_assert!(!cam.daylight_window.contains(now.time()));
                prop_assert!(t > now && t - now <= Duration::hours(24));
                prop_assert_eq!(t.time(), cam.daylight_window.0);
            }
        }
    }
    fn duplicate_count_matches_consecutive_repeats(payloads in vec(0u8..3, 1..25)) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FrameStore::open(dir.path(), "city").unwrap();
        let bytes: Vec<Vec<u8>> = payloads.iter().map(|&p| encode_pgm(2, 1, &[p, p])).collect();
        let mut dups = 0;
        for (i, b) in bytes.iter().enumerate() {
            let rec = store.store_frame("cam", t0() + Duration::seconds(i as i64), b).unwrap();
            dups += (rec.status == FrameStatus::Duplicate) as usize;
        }
        let expected = payloads.windows(2).filter(|w| w[0] == w[1]).count();
        prop_assert_eq!(dups, expected);
    }
    fn scan_is_ordered_permutation_of_stored(
        events in vec((0usize..2, 0usize..3, 1i64..50, 0u8..4), 1..30)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let cities = ["north", "south"];
        let mut stores: Vec<FrameStore> = cities.iter().map(|c| FrameStore::open(dir.path(), c).unwrap()).collect();
        let mut clock = std::collections::HashMap::new();
        let mut stored: Vec<ManifestRecord> = Vec::new();
        for (city, cam, gap, payload) in events {
            let cam_id = format!("{}-{cam}", cities[city]);
            let t = clock.entry(cam_id.clone()).or_insert(t0());
            *t += Duration::seconds(gap);
            let bytes = if payload == 0 { Vec::new() } else { encode_pgm(1, 1, &[payload]) };
            stored.push(stores[city].store_frame(&cam_id, *t, &bytes).unwrap());
        }
        let scanned = scan_manifest(dir.path(), &ManifestFilter::default()).unwrap();
        for w in scanned.windows(2) {
            prop_assert!((w[0].camera_id.as_str(), w[0].captured_at) < (w[1].camera_id.as_str(), w[1].captured_at));
        }
        let key = |r: &ManifestRecord| (r.camera_id.clone(), r.captured_at);
        stored.sort_by_key(key);
        prop_assert_eq!(scanned, stored);
    }

    // ---- quality ----
    fn clean_trace_partitions_input(
        kinds in vec((0u8..4, 0u8..3, 0u64..5), 0..30), use_model in any::<bool>()
    ) {
        let good = [encode_pgm(4, 4, &[40; 16]), encode_pgm(4, 4, &[200; 16])];
        let entries: Vec<TraceEntry> = kinds
            .iter()
            .enumerate()
            .map(|(i, &(kind, status, d))| {
                let bytes: Vec<u8> = match kind {
                    0 => Vec::new(),
                    1 => b"P5 nonsense".to_vec(),
                    k => good[(k - 2) as usize].clone(),
                };
                let captured_at = t0() + Duration::seconds(i as i64 / 2);
                TraceEntry {
                    record: ManifestRecord {
                        camera_id: "c".into(),
                        captured_at,
                        relative_path: format!("p{i}"),
                        byte_size: bytes.len() as u64,
                        content_hash: ContentHash::of(&bytes),
                        status: [FrameStatus::Stored, FrameStatus::Duplicate, FrameStatus::Failed][status as usize],
                    },
                    features: extract_features(&bytes),
                    density: Some(DensityRecord { camera_id: "c".into(), captured_at, raw_density: d, normalized: d as f64 / 8.0 }),
                }
            })
            .collect();
        let model = {
            let a = extract_features(&good[0]);
            let b = extract_features(&good[1]);
            let labeled = LabeledSet { points: vec![(a.clone(), Label::Regular), (b.clone(), Label::Outlier)] };
            fit_clusters(&[a.clone(), a, b.clone(), b], &labeled, 2, 3).unwrap()
        };
        let out = clean_trace(entries.clone(), use_model.then_some(&model));
        prop_assert_eq!(out.kept.len() + out.removed.len(), entries.len());
        let mut seen: Vec<&str> = out.kept.iter().map(|e| e.record.relative_path.as_str())
            .chain(out.removed.iter().map(|(e, _)| e.record.relative_path.as_str()))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), entries.len());
        // kept is an order-preserving, unmodified subsequence
        let mut it = entries.iter();
        for k in &out.kept {
            prop_assert!(it.any(|e| e == k));
        }
        for (e, r) in &out.removed {
            if e.features.byte_size == 0 {
                prop_assert_eq!(*r, RemovalReason::ZeroSize);
            } else if !e.features.decode_ok {
                prop_assert_eq!(*r, RemovalReason::DecodeError);
            }
        }
    }
    fn standardization_is_idempotent_and_fit_deterministic(
        rows in vec((0.0f64..255.0, 0.0f64..5000.0, 0.0f64..1.0), 4..40), seed in any::<u64>()
    ) {
        let feats: Vec<ImageFeatures> = rows
            .iter()
            .map(|&(m, v, e)| ImageFeatures {
                byte_size: 100,
                decode_ok: true,
                width: 8,
                height: 8,
                mean_intensity: vec![m],
                intensity_variance: vec![v],
                edge_density: e,
            })
            .collect();
        let raw: Vec<Vec<f64>> = feats.iter().map(ImageFeatures::vector).collect();
        let s1 = Standardization::fit(&raw);
        let z: Vec<Vec<f64>> = raw.iter().map(|r| s1.apply(r)).collect();
        if !s1.dims.is_empty() {
            let s2 = Standardization::fit(&z);
            for (r, zr) in z.iter().zip(&z) {
                for (a, b) in s2.apply(r).iter().zip(zr) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
        let labeled = LabeledSet { points: vec![(feats[0].clone(), Label::Regular), (feats[1].clone(), Label::Outlier)] };
        match (fit_clusters(&feats, &labeled, 2, seed), fit_clusters(&feats, &labeled, 2, seed)) {
            (Ok(a), Ok(b)) => {
                for f in &feats {
                    prop_assert_eq!(classify(&a, f), classify(&b, f));
                }
                prop_assert_eq!(a, b);
            }
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    // ---- stats ----
    fn fitters_are_scale_equivariant(dist in dist_strategy(), seed in any::<u64>(), n in 30usize..200, c in 0.01f64..100.0) {
        let sample = sample_distribution(&dist, n, seed).unwrap();
        let family = dist.family();
        let sample: Vec<f64> = if family == Family::Normal { sample } else { sample.into_iter().filter(|&x| x > 0.0).collect() };
        let scaled: Vec<f64> = sample.iter().map(|x| x * c).collect();
        let (Ok(a), Ok(b)) = (fit(family, &sample), fit(family, &scaled)) else {
            return Ok(());
        };
        let tol = 1e-6;
        match (a, b) {
            (Distribution::Exponential { rate: r1 }, Distribution::Exponential { rate: r2 }) => {
                prop_assert!(rel_close(1.0 / r1 * c, 1.0 / r2, tol));
            }
            (Distribution::Normal { mean: m1, std_dev: s1 }, Distribution::Normal { mean: m2, std_dev: s2 }) => {
                prop_assert!((m1 * c - m2).abs() <= tol * (s2 + m2.abs()));
                prop_assert!(rel_close(s1 * c, s2, tol));
            }
            (Distribution::Gamma { shape: k1, scale: t1 }, Distribution::Gamma { shape: k2, scale: t2 })
            | (Distribution::Weibull { shape: k1, scale: t1 }, Distribution::Weibull { shape: k2, scale: t2 }) => {
                prop_assert!(rel_close(k1, k2, tol), "{} vs {}", k1, k2);
                prop_assert!(rel_close(t1 * c, t2, tol), "{} vs {}", t1 * c, t2);
            }
            (Distribution::LogLogistic { scale: a1, shape: b1 }, Distribution::LogLogistic { scale: a2, shape: b2 }) => {
                prop_assert!(rel_close(b1, b2, tol), "{} vs {}", b1, b2);
                prop_assert!(rel_close(a1 * c, a2, tol), "{} vs {}", a1 * c, a2);
            }
            _ => prop_assert!(false, "family changed"),
        }
    }
    fn ks_is_invariant_under_increasing_transforms(dist in dist_strategy(), seed in any::<u64>(), n in 1usize..300) {
        let sample = sample_distribution(&dist, n, seed).unwrap();
        let d = ks_statistic(&sample, |x| dist.cdf(x));
        let pit: Vec<f64> = sample.iter().map(|&x| dist.cdf(x)).collect();
        let d_pit = ks_statistic(&pit, |u| u.clamp(0.0, 1.0));
        prop_assert!((d - d_pit).abs() < 1e-12);
        // a second transform: y = x³ against the pushed-forward CDF
        let cubed: Vec<f64> = sample.iter().map(|x| x.powi(3)).collect();
        let d_cubed = ks_statistic(&cubed, |y| dist.cdf(y.cbrt()));
        prop_assert!((d - d_cubed).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d));
    }
    fn cdf_is_monotone_with_limits(dist in dist_strategy(), mut xs in vec(-100.0f64..100.0, 2..50)) {
        xs.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for &x in &xs {
            let f = dist.cdf(x);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f >= prev);
            prev = f;
        }
        prop_assert_eq!(dist.cdf(f64::NEG_INFINITY), 0.0);
        prop_assert_eq!(dist.cdf(f64::INFINITY), 1.0);
    }
    fn ranking_is_total_and_deterministic(
        dist in dist_strategy(), seed in any::<u64>(), n in 5usize..200,
        fams in proptest::sample::subsequence(Family::ALL.to_vec(), 1..=5)
    ) {
        let sample = sample_distribution(&dist, n, seed).unwrap();
        let a = rank_fits("s", &sample, &fams, DeviationThresholds::default());
        let b = rank_fits("s", &sample, &fams, DeviationThresholds::default());
        prop_assert_eq!(&a, &b);
        if let Ok(r) = a {
            prop_assert_eq!(r.best, r.candidates[0].dist.family());
            for w in r.candidates.windows(2) {
                prop_assert!(w[0].ks_stat < w[1].ks_stat
                    || (w[0].ks_stat == w[1].ks_stat && w[0].dist.family() < w[1].dist.family()));
            }
            prop_assert_eq!(r.candidates.len() + r.failures.len(), fams.len());
            prop_assert_eq!(r.within_tight, r.candidates[0].ks_stat <= 0.03);
            prop_assert_eq!(r.within_loose, r.candidates[0].ks_stat <= 0.05);
        }
    }

    // ---- lrd ----
    fn aggregation_preserves_mean(values in vec(-1e3f64..1e3, 1..400), m_seed in any::<usize>()) {
        let m = 1 + m_seed % values.len();
        let agg = aggregate_series(&tseries(values.clone()), m).unwrap();
        let used = (values.len() / m) * m;
        let direct = values[..used].iter().sum::<f64>() / used as f64;
        let via = agg.values.iter().sum::<f64>() / agg.values.len() as f64;
        prop_assert!((direct - via).abs() < 1e-12 * (1.0 + direct.abs()) * 1e3);
        prop_assert_eq!(agg.step, 30.0 * m as f64);
    }
    fn aggregation_composes(values in vec(-1e3f64..1e3, 1..400), a in 1usize..8, b in 1usize..8) {
        prop_assume!(values.len() >= a * b);
        let s = tseries(values);
        let twice = aggregate_series(&aggregate_series(&s, a).unwrap(), b).unwrap();
        let once = aggregate_series(&s, a * b).unwrap();
        prop_assert_eq!(twice.values.len(), once.values.len());
        for (x, y) in twice.values.iter().zip(&once.values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(twice.step, once.step);
    }
    fn hurst_estimates_are_affine_invariant(
        seed in any::<u64>(), a in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0], b in -1e3f64..1e3
    ) {
        let base = sample_distribution(&Distribution::Normal { mean: 0.0, std_dev: 1.0 }, 2048, seed).unwrap();
        let s = tseries(base.clone());
        let t = tseries(base.iter().map(|x| a * x + b).collect());
        let scales = [1, 2, 4, 8, 16, 32];
        let blocks = [16, 32, 64, 128];
        let vt = (variance_time_hurst(&s, &scales).unwrap().h, variance_time_hurst(&t, &scales).unwrap().h);
        let rs = (rs_hurst(&s, &blocks).unwrap().h, rs_hurst(&t, &blocks).unwrap().h);
        prop_assert!((vt.0 - vt.1).abs() < 1e-6);
        prop_assert!((rs.0 - rs.1).abs() < 1e-6);
    }

    // ---- synth ----
    fn rendered_pixels_match_coverage(
        (w, h, rects) in (4usize..40, 4usize..40).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), vec((0..w, 0..h, 1..=w, 1..=h, 0usize..4, 1usize..5), 0..6))
        }),
        bg in 0u8..100
    ) {
        let mut spec = SceneSpec::new(w, h, Background::Uniform(bg), 6);
        for (x, y, rw, rh, enter, len) in rects {
            spec.vehicle_events.push(VehicleEvent {
                enter_frame: enter,
                exit_frame: (enter + len).min(6),
                x,
                y,
                width: rw.min(w - x),
                height: rh.min(h - y),
                intensity: 200,
            });
        }
        let frames = render_scene_sequence(&spec).unwrap();
        for (t, f) in frames.iter().enumerate() {
            let differing = f.pixels.iter().filter(|&&p| p != bg).count();
            let cov = coverage_truth(&spec, t).unwrap();
            prop_assert_eq!(differing, (cov * (w * h) as f64).round() as usize);
        }
    }
}

/// Every property, by name, for callers that want to time or report them.
pub fn suite() -> Vec<(&'static str, fn())> {
    vec![
        ("normalized_density_is_bounded_and_zero_iff_empty", normalized_density_is_bounded_and_zero_iff_empty),
        ("density_decreases_with_tau", density_decreases_with_tau),
        ("painting_a_vehicle_increases_density", painting_a_vehicle_increases_density),
        ("background_ignores_frame_order", background_ignores_frame_order),
        ("extraction_is_deterministic", extraction_is_deterministic),
        ("schedule_never_misses_a_refresh", schedule_never_misses_a_refresh),
        ("duplicate_count_matches_consecutive_repeats", duplicate_count_matches_consecutive_repeats),
        ("scan_is_ordered_permutation_of_stored", scan_is_ordered_permutation_of_stored),
        ("clean_trace_partitions_input", clean_trace_partitions_input),
        ("standardization_is_idempotent_and_fit_deterministic", standardization_is_idempotent_and_fit_deterministic),
        ("fitters_are_scale_equivariant", fitters_are_scale_equivariant),
        ("ks_is_invariant_under_increasing_transforms", ks_is_invariant_under_increasing_transforms),
        ("cdf_is_monotone_with_limits", cdf_is_monotone_with_limits),
        ("ranking_is_total_and_deterministic", ranking_is_total_and_deterministic),
        ("aggregation_preserves_mean", aggregation_preserves_mean),
        ("aggregation_composes", aggregation_composes),
        ("hurst_estimates_are_affine_invariant", hurst_estimates_are_affine_invariant),
        ("rendered_pixels_match_coverage", rendered_pixels_match_coverage),
    ]
}
