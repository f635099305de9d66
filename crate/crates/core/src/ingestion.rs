//! Camera catalog, fetch scheduling, exact-duplicate detection and the
//! on-disk frame store with its append-only manifest.
//!
//! Layout under a data root:
//!
//! ```text
//! <root>/<city>/manifest.jsonl
//! <root>/<city>/<camera_id>/<YYYYMMDD>/<HHMMSS>.<ext>
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, FixedOffset, NaiveTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pnm::ImageKind;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FETCH_FACTOR: f64 = 0.9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid camera catalog: {0}")]
    InvalidCatalog(String),
    #[error("camera {camera_id}: timestamp {captured_at} is not after last stored {last}")]
    OutOfOrderTimestamp {
        camera_id: String,
        captured_at: DateTime<Utc>,
        last: DateTime<Utc>,
    },
    #[error("storage failure: {0}")]
    StorageFull(#[from] io::Error),
    #[error("no manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("corrupt manifest {path} line {line}: {reason}")]
    CorruptManifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Local-time interval during which a camera is polled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaylightWindow(pub NaiveTime, pub NaiveTime);

impl Default for DaylightWindow {
    fn default() -> Self {
        DaylightWindow(
            NaiveTime::from_hms_opt(6, 0, 0).unwrap(),
            NaiveTime::from_hms_opt(18, 0, 0).unwrap(),
        )
    }
}

impl DaylightWindow {
    pub fn contains(&self, t: NaiveTime) -> bool {
        self.0 <= t && t < self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub camera_id: String,
    pub city: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Camera refresh period in seconds.
    pub refresh_interval: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default)]
    pub daylight_window: DaylightWindow,
}

impl CameraMeta {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.camera_id.is_empty() || self.camera_id.contains(['/', '\\']) {
            return Err(IngestError::InvalidCatalog(format!(
                "bad camera_id {:?}",
                self.camera_id
            )));
        }
        if self.city.is_empty() || self.city.contains(['/', '\\']) {
            return Err(IngestError::InvalidCatalog(format!("bad city {:?}", self.city)));
        }
        if self.refresh_interval == 0 {
            return Err(IngestError::InvalidCatalog(format!(
                "{}: refresh_interval must be > 0",
                self.camera_id
            )));
        }
        if self.daylight_window.0 >= self.daylight_window.1 {
            return Err(IngestError::InvalidCatalog(format!(
                "{}: daylight window start must precede end",
                self.camera_id
            )));
        }
        Ok(())
    }
}

/// Parses and validates a JSON camera catalog.
pub fn parse_catalog(json: &str) -> Result<Vec<CameraMeta>, IngestError> {
    let cams: Vec<CameraMeta> =
        serde_json::from_str(json).map_err(|e| IngestError::InvalidCatalog(e.to_string()))?;
    let mut seen = HashSet::new();
    for c in &cams {
        c.validate()?;
        if !seen.insert(c.camera_id.as_str()) {
            return Err(IngestError::InvalidCatalog(format!(
                "duplicate camera_id {}",
                c.camera_id
            )));
        }
    }
    Ok(cams)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchDecision {
    At(DateTime<FixedOffset>),
    /// Outside the daylight window; resume at the next window opening.
    Skip(DateTime<FixedOffset>),
}

pub fn fetch_delay_secs(refresh_interval: u32) -> i64 {
    ((FETCH_FACTOR * refresh_interval as f64).floor() as i64).max(1)
}

/// `now` must carry the camera's local offset.
pub fn schedule_next_fetch(camera: &CameraMeta, now: DateTime<FixedOffset>) -> FetchDecision {
    let DaylightWindow(start, end) = camera.daylight_window;
    let local = now.time();
    if camera.daylight_window.contains(local) {
        return FetchDecision::At(now + Duration::seconds(fetch_delay_secs(camera.refresh_interval)));
    }
    let mut day = now.date_naive();
    if local >= end {
        day = day.succ_opt().expect("date in range");
    }
    let opening = day
        .and_time(start)
        .and_local_timezone(*now.offset())
        .single()
        .expect("fixed offsets are unambiguous");
    FetchDecision::Skip(opening)
}

/// SHA-256 of raw frame bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(ContentHash(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dedup {
    Duplicate,
    Fresh(ContentHash),
}

pub fn dedup_check(bytes: &[u8], last_hash: Option<&ContentHash>) -> Dedup {
    let h = ContentHash::of(bytes);
    if last_hash == Some(&h) {
        Dedup::Duplicate
    } else {
        Dedup::Fresh(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameStatus {
    Stored,
    Duplicate,
    Failed,
}

mod rfc3339_secs {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub camera_id: String,
    #[serde(with = "rfc3339_secs")]
    pub captured_at: DateTime<Utc>,
    /// Path relative to the data root, `/`-separated.
    pub relative_path: String,
    pub byte_size: u64,
    pub content_hash: ContentHash,
    pub status: FrameStatus,
}

pub fn layout_path(city: &str, camera_id: &str, captured_at: DateTime<Utc>, ext: &str) -> String {
    format!(
        "{city}/{camera_id}/{}/{}.{ext}",
        captured_at.format("%Y%m%d"),
        captured_at.format("%H%M%S")
    )
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

struct CameraState {
    last_at: DateTime<Utc>,
    last_hash: Option<ContentHash>,
}

/// Single writer for one city's frames and manifest.
pub struct FrameStore {
    root: PathBuf,
    city: String,
    manifest: File,
    cameras: HashMap<String, CameraState>,
}

impl FrameStore {
    /// Opens (or creates) the city's manifest and replays it to recover
    /// per-camera ordering and dedup state.
    pub fn open(root: impl Into<PathBuf>, city: &str) -> Result<Self, IngestError> {
        let root = root.into();
        let dir = root.join(city);
        fs::create_dir_all(&dir)?;
        let path = dir.join(MANIFEST_FILE);
        let mut cameras: HashMap<String, CameraState> = HashMap::new();
        if path.exists() {
            for rec in read_manifest(&path)? {
                let st = cameras.entry(rec.camera_id.clone()).or_insert(CameraState {
                    last_at: rec.captured_at,
                    last_hash: None,
                });
                st.last_at = st.last_at.max(rec.captured_at);
                if rec.status == FrameStatus::Stored {
                    st.last_hash = Some(rec.content_hash);
                }
            }
        }
        let manifest = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(FrameStore {
            root,
            city: city.to_string(),
            manifest,
            cameras,
        })
    }

    pub fn city(&self) -> &str {
        &self.city
    }

    /// Latest capture time recorded for `camera_id`, any status.
    pub fn last_capture(&self, camera_id: &str) -> Option<DateTime<Utc>> {
        self.cameras.get(camera_id).map(|s| s.last_at)
    }

    /// Persists one fetched frame. Empty input is recorded as `failed`
    /// without touching the frame tree; a byte-identical repeat of the
    /// camera's previous stored frame is recorded as `duplicate` and not
    /// written.
    pub fn store_frame(
        &mut self,
        camera_id: &str,
        captured_at: DateTime<Utc>,
        bytes: &[u8],
    ) -> Result<ManifestRecord, IngestError> {
        if let Some(st) = self.cameras.get(camera_id) {
            if captured_at <= st.last_at {
                return Err(IngestError::OutOfOrderTimestamp {
                    camera_id: camera_id.to_string(),
                    captured_at,
                    last: st.last_at,
                });
            }
        }
        let ext = ImageKind::sniff(bytes).extension();
        let relative_path = layout_path(&self.city, camera_id, captured_at, ext);
        let last_hash = self.cameras.get(camera_id).and_then(|s| s.last_hash);

        let (status, content_hash) = if bytes.is_empty() {
            (FrameStatus::Failed, ContentHash::of(bytes))
        } else {
            match dedup_check(bytes, last_hash.as_ref()) {
                Dedup::Duplicate => (FrameStatus::Duplicate, last_hash.unwrap()),
                Dedup::Fresh(h) => {
                    write_atomic(&self.root.join(&relative_path), bytes)?;
                    (FrameStatus::Stored, h)
                }
            }
        };
        let rec = ManifestRecord {
            camera_id: camera_id.to_string(),
            captured_at,
            relative_path,
            byte_size: bytes.len() as u64,
            content_hash,
            status,
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        self.manifest.write_all(line.as_bytes())?;
        self.manifest.flush()?;

        let st = self.cameras.entry(camera_id.to_string()).or_insert(CameraState {
            last_at: captured_at,
            last_hash: None,
        });
        st.last_at = captured_at;
        if status == FrameStatus::Stored {
            st.last_hash = Some(content_hash);
        }
        Ok(rec)
    }

    /// Records a fetch that produced no usable bytes (e.g. non-2xx reply).
    pub fn record_failure(
        &mut self,
        camera_id: &str,
        captured_at: DateTime<Utc>,
    ) -> Result<ManifestRecord, IngestError> {
        self.store_frame(camera_id, captured_at, &[])
    }
}

/// Reads every complete line of a manifest. A final line without a
/// terminating newline is an in-flight append and is ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, IngestError> {
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IngestError::CorruptManifest {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Conjunctive filter; `None` fields match everything. The time range is
/// half-open `[from, to)`.
#[derive(Debug, Clone, Default)]
pub struct ManifestFilter {
    pub camera_id: Option<String>,
    pub city: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl ManifestFilter {
    fn matches(&self, r: &ManifestRecord) -> bool {
        self.camera_id.as_ref().is_none_or(|c| *c == r.camera_id)
            && self.from.is_none_or(|f| r.captured_at >= f)
            && self.to.is_none_or(|t| r.captured_at < t)
    }
}

/// Lists manifest records under `root`, sorted by `(camera_id, captured_at)`.
///
/// Every city directory must hold a manifest; a filter naming a city with
/// no manifest is also a `MissingManifest` error.
pub fn scan_manifest(
    root: &Path,
    filter: &ManifestFilter,
) -> Result<Vec<ManifestRecord>, IngestError> {
    let cities: Vec<PathBuf> = match &filter.city {
        Some(c) => vec![root.join(c)],
        None => {
            let mut dirs = Vec::new();
            for entry in fs::read_dir(root)? {
                let entry = entry?;
                if entry.file_type()?.is_dir() {
                    dirs.push(entry.path());
                }
            }
            dirs.sort();
            dirs
        }
    };
    let mut out = Vec::new();
    for dir in cities {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(IngestError::MissingManifest(path));
        }
        out.extend(read_manifest(&path)?.into_iter().filter(|r| filter.matches(r)));
    }
    out.sort_by(|a, b| {
        (a.camera_id.as_str(), a.captured_at).cmp(&(b.camera_id.as_str(), b.captured_at))
    });
    Ok(out)
}

pub fn format_utc(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn cam(refresh: u32) -> CameraMeta {
        CameraMeta {
            camera_id: "syd-001".into(),
            city: "sydney".into(),
            latitude: -33.87,
            longitude: 151.21,
            refresh_interval: refresh,
            source_url: None,
            daylight_window: DaylightWindow::default(),
        }
    }

    fn local(h: u32, m: u32, s: u32) -> DateTime<FixedOffset> {
        FixedOffset::east_opt(10 * 3600)
            .unwrap()
            .with_ymd_and_hms(2012, 3, 5, h, m, s)
            .unwrap()
    }

    #[test]
    fn schedule_inside_window() {
        assert_eq!(schedule_next_fetch(&cam(30), local(10, 0, 0)), FetchDecision::At(local(10, 0, 27)));
        assert_eq!(schedule_next_fetch(&cam(10), local(10, 0, 0)), FetchDecision::At(local(10, 0, 9)));
        assert_eq!(schedule_next_fetch(&cam(1), local(10, 0, 0)), FetchDecision::At(local(10, 0, 1)));
    }

    #[test]
    fn schedule_outside_window() {
        let FetchDecision::Skip(t) = schedule_next_fetch(&cam(30), local(19, 0, 0)) else {
            panic!("expected skip");
        };
        assert_eq!(t, local(6, 0, 0) + Duration::days(1));
        assert_eq!(schedule_next_fetch(&cam(30), local(5, 0, 0)), FetchDecision::Skip(local(6, 0, 0)));
        // the window is half-open
        assert!(matches!(schedule_next_fetch(&cam(30), local(18, 0, 0)), FetchDecision::Skip(_)));
        assert!(matches!(schedule_next_fetch(&cam(30), local(6, 0, 0)), FetchDecision::At(_)));
    }

    #[test]
    fn catalog_validation() {
        let ok = r#"[{"camera_id":"a","city":"sydney","latitude":0,"longitude":0,"refresh_interval":30},
                     {"camera_id":"b","city":"sydney","latitude":0,"longitude":0,"refresh_interval":60,
                      "source_url":"http://x/b.jpg","daylight_window":["07:00:00","19:30:00"]}]"#;
        let cams = parse_catalog(ok).unwrap();
        assert_eq!(cams[0].daylight_window, DaylightWindow::default());
        assert_eq!(cams[1].daylight_window.1, NaiveTime::from_hms_opt(19, 30, 0).unwrap());

        let dup = r#"[{"camera_id":"a","city":"c","latitude":0,"longitude":0,"refresh_interval":30},
                      {"camera_id":"a","city":"c","latitude":0,"longitude":0,"refresh_interval":30}]"#;
        assert!(parse_catalog(dup).is_err());
        let zero = r#"[{"camera_id":"a","city":"c","latitude":0,"longitude":0,"refresh_interval":0}]"#;
        assert!(parse_catalog(zero).is_err());
        let inverted = r#"[{"camera_id":"a","city":"c","latitude":0,"longitude":0,"refresh_interval":5,
                           "daylight_window":["18:00:00","06:00:00"]}]"#;
        assert!(parse_catalog(inverted).is_err());
    }

    #[test]
    fn dedup_semantics() {
        let a = b"frame-bytes".to_vec();
        let Dedup::Fresh(h) = dedup_check(&a, None) else { panic!() };
        assert_eq!(dedup_check(&a, Some(&h)), Dedup::Duplicate);
        let mut b = a.clone();
        b[3] ^= 1;
        assert!(matches!(dedup_check(&b, Some(&h)), Dedup::Fresh(_)));
    }

    #[test]
    fn hash_hex_is_lowercase_sha256() {
        assert_eq!(
            ContentHash::of(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    fn t(i: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2012, 3, 5, 0, 0, 0).unwrap() + Duration::seconds(30 * i)
    }

    #[test]
    fn store_frame_statuses_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FrameStore::open(dir.path(), "sydney").unwrap();
        let mut img = b"P5 1 1 255\n".to_vec();
        img.resize(40_960, 7);

        let rec = store.store_frame("syd-001", t(1), &img).unwrap();
        assert_eq!(rec.status, FrameStatus::Stored);
        assert_eq!(rec.byte_size, 40_960);
        assert_eq!(rec.relative_path, "sydney/syd-001/20120305/000030.pgm");
        assert_eq!(fs::read(dir.path().join(&rec.relative_path)).unwrap(), img);

        let rec = store.store_frame("syd-001", t(2), &[]).unwrap();
        assert_eq!((rec.status, rec.byte_size), (FrameStatus::Failed, 0));
        assert!(!dir.path().join(&rec.relative_path).exists());

        let rec = store.store_frame("syd-001", t(3), &img).unwrap();
        assert_eq!(rec.status, FrameStatus::Duplicate);
        assert!(!dir.path().join(&rec.relative_path).exists());

        let err = store.store_frame("syd-001", t(3), &img).unwrap_err();
        assert!(matches!(err, IngestError::OutOfOrderTimestamp { .. }));

        let line = fs::read_to_string(dir.path().join("sydney/manifest.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["byte_size", "camera_id", "captured_at", "content_hash", "relative_path", "status"]
        );
        assert_eq!(first["captured_at"], "2012-03-05T00:00:30Z");
    }

    #[test]
    fn reopening_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = FrameStore::open(dir.path(), "sydney").unwrap();
            store.store_frame("c", t(1), b"abc").unwrap();
        }
        let mut store = FrameStore::open(dir.path(), "sydney").unwrap();
        assert!(store.store_frame("c", t(1), b"xyz").is_err());
        assert_eq!(store.store_frame("c", t(2), b"abc").unwrap().status, FrameStatus::Duplicate);
    }

    #[test]
    fn scan_empty_root_and_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_manifest(dir.path(), &ManifestFilter::default()).unwrap().is_empty());
        fs::create_dir(dir.path().join("toronto")).unwrap();
        assert!(matches!(
            scan_manifest(dir.path(), &ManifestFilter::default()),
            Err(IngestError::MissingManifest(_))
        ));
    }

    #[test]
    fn scan_returns_failures_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FrameStore::open(dir.path(), "sydney").unwrap();
        for (i, cam) in [(3, "b"), (2, "a"), (4, "b")] {
            store.store_frame(cam, t(i), format!("{cam}{i}").as_bytes()).unwrap();
        }
        store.store_frame("a", t(5), &[]).unwrap();
        let recs = scan_manifest(dir.path(), &ManifestFilter::default()).unwrap();
        let keys: Vec<_> = recs.iter().map(|r| (r.camera_id.as_str(), r.captured_at)).collect();
        assert_eq!(keys, vec![("a", t(2)), ("a", t(5)), ("b", t(3)), ("b", t(4))]);
        assert_eq!(recs.iter().filter(|r| r.status == FrameStatus::Stored).count(), 3);

        let f = ManifestFilter { camera_id: Some("a".into()), from: Some(t(3)), ..Default::default() };
        assert_eq!(scan_manifest(dir.path(), &f).unwrap().len(), 1);
    }

    #[test]
    fn partial_trailing_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FrameStore::open(dir.path(), "x").unwrap();
        store.store_frame("c", t(1), b"abc").unwrap();
        drop(store);
        let p = dir.path().join("x/manifest.jsonl");
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"camera_id\":\"c\",\"capt").unwrap();
        assert_eq!(read_manifest(&p).unwrap().len(), 1);
    }
}
