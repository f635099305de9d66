use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Duration, FixedOffset, SubsecRound, Utc};
use clap::Args;
use densigraph_core::ingestion::{parse_catalog, schedule_next_fetch, CameraMeta, FetchDecision, FrameStore};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{data, read_text, CliError, Result};

const HTTP_TIMEOUT: StdDuration = StdDuration::from_secs(20);
const MAX_FRAME_BYTES: u64 = 32 << 20;
const TICK: StdDuration = StdDuration::from_millis(100);

#[derive(Debug, Args)]
pub struct CrawlArgs {
    /// Stop after this many seconds; otherwise run until interrupted.
    #[arg(long)]
    pub duration: Option<u64>,
}

struct Slot {
    camera: CameraMeta,
    offset: FixedOffset,
    due: DateTime<Utc>,
}

fn stop_flag() -> Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
            log::warn!("no interrupt handler ({e}); use --duration to stop");
        }
        flag
    })
    .clone()
}

fn fetch(agent: &ureq::Agent, url: &str) -> std::result::Result<Vec<u8>, String> {
    let mut resp = agent.get(url).call().map_err(|e| e.to_string())?;
    resp.body_mut()
        .with_config()
        .limit(MAX_FRAME_BYTES)
        .read_to_vec()
        .map_err(|e| e.to_string())
}

/// Capture time for a new frame: now at whole-second resolution, nudged
/// past the camera's last record so manifest order stays strict.
fn capture_time(store: &FrameStore, camera_id: &str) -> DateTime<Utc> {
    let now = Utc::now().trunc_subsecs(0);
    match store.last_capture(camera_id) {
        Some(last) if now <= last => last + Duration::seconds(1),
        _ => now,
    }
}

pub fn run(cfg: &Config, city: Option<&str>, args: &CrawlArgs) -> Result<()> {
    let catalog_path = cfg
        .catalog_path
        .as_ref()
        .ok_or_else(|| CliError::Usage("crawl needs --catalog or catalog_path in the config".into()))?;
    let catalog = parse_catalog(&read_text(catalog_path)?).map_err(|e| data(catalog_path.display(), e))?;
    let cameras: Vec<CameraMeta> = catalog.into_iter().filter(|c| city.is_none_or(|n| c.city == n)).collect();
    if cameras.is_empty() {
        return Err(CliError::Data(format!("no cameras in {} for the selected city", catalog_path.display())));
    }

    let mut stores: BTreeMap<String, FrameStore> = BTreeMap::new();
    let mut offsets: BTreeMap<String, FixedOffset> = BTreeMap::new();
    for c in &cameras {
        if !stores.contains_key(&c.city) {
            let store = FrameStore::open(&cfg.data_root, &c.city).map_err(|e| data(&c.city, e))?;
            stores.insert(c.city.clone(), store);
            let minutes = cfg.utc_offset(&c.city);
            let offset = FixedOffset::east_opt(minutes * 60)
                .ok_or_else(|| CliError::Usage(format!("utc offset {minutes} for {} out of range", c.city)))?;
            offsets.insert(c.city.clone(), offset);
        }
    }
    let start = Utc::now();
    let mut slots: Vec<Slot> = cameras
        .into_iter()
        .filter_map(|camera| {
            if camera.source_url.is_none() {
                log::warn!("{}/{}: no source_url; skipped", camera.city, camera.camera_id);
                return None;
            }
            let offset = offsets[&camera.city];
            Some(Slot { camera, offset, due: start })
        })
        .collect();
    if slots.is_empty() {
        return Err(CliError::Data("no camera in the catalog has a source_url".into()));
    }

    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(HTTP_TIMEOUT)).build().into();
    let stop = stop_flag();
    let deadline = args.duration.map(|s| Instant::now() + StdDuration::from_secs(s));
    let mut fetched = 0usize;
    let mut failed = 0usize;
    log::info!("crawling {} cameras", slots.len());

    loop {
        if stop.load(Ordering::SeqCst) || deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let now = Utc::now();
        let mut due = Vec::new();
        for (i, slot) in slots.iter_mut().enumerate() {
            if slot.due > now {
                continue;
            }
            // Out-of-window cameras are pushed to their next opening without a fetch.
            match schedule_next_fetch(&slot.camera, now.with_timezone(&slot.offset)) {
                FetchDecision::Skip(opening) => slot.due = opening.with_timezone(&Utc),
                FetchDecision::At(next) => {
                    slot.due = next.with_timezone(&Utc);
                    due.push(i);
                }
            }
        }
        if due.is_empty() {
            std::thread::sleep(TICK);
            continue;
        }

        let results: Vec<(usize, std::result::Result<Vec<u8>, String>)> = due
            .par_iter()
            .map(|&i| (i, fetch(&agent, slots[i].camera.source_url.as_deref().expect("filtered"))))
            .collect();
        for (i, result) in results {
            let cam = &slots[i].camera;
            let store = stores.get_mut(&cam.city).expect("store opened");
            let at = capture_time(store, &cam.camera_id);
            let rec = match result {
                Ok(bytes) => store.store_frame(&cam.camera_id, at, &bytes),
                Err(e) => {
                    log::warn!("{}/{}: fetch failed: {e}", cam.city, cam.camera_id);
                    store.record_failure(&cam.camera_id, at)
                }
            }
            .map_err(|e| data(format!("{}/{}", cam.city, cam.camera_id), e))?;
            fetched += 1;
            if rec.status == densigraph_core::ingestion::FrameStatus::Failed {
                failed += 1;
            }
            log::debug!("{}/{}: {:?} {}", cam.city, cam.camera_id, rec.status, rec.relative_path);
        }
    }
    log::info!("crawl stopped after {fetched} fetches ({failed} failed)");
    Ok(())
}
