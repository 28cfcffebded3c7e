//! In-memory, append-only, circular, segmented frame log with timestamp
//! point/range queries, background persistence, and CRC-checked recovery.
//!
//! The log is a ring of fixed-budget segments. Exactly one segment is
//! active (unsealed) at a time; appends that would overflow it seal it
//! (CRC computed, persistence scheduled) and recycle the oldest segment.
//! Each segment sits behind its own reader-writer lock, so readers on
//! sealed segments never block the writer, and recycling waits only for
//! readers of the segment being recycled. All reads are served from
//! memory; disk exists purely for crash recovery.
//!
//! Segment file: magic `MEZSEG01`, u32 entry count, concatenated encoded
//! frames, u32 CRC32 (IEEE) over everything after the magic. Filename
//! `<camera_id>-<first_ts_micros>.seg`. With encryption at rest enabled the
//! region after the magic is an AEAD box (24-byte nonce prefix).

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::frame::{CameraId, Frame, Timestamp};

pub const SEGMENT_MAGIC: [u8; 8] = *b"MEZSEG01";
const NONCE_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("invalid log config: {0}")]
    InvalidConfig(String),
    #[error("frame of {bytes} bytes exceeds the per-segment budget of {budget} bytes")]
    FrameTooLarge { bytes: usize, budget: usize },
    #[error("invalid range: start {start} > end {end}")]
    InvalidRange { start: Timestamp, end: Timestamp },
    #[error("persistence is not configured for this log")]
    PersistenceDisabled,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("log i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Encryption-at-rest hook. Implementations must be authenticated: `open`
/// rejects tampered ciphertexts, which recovery then treats as corruption.
pub trait SegmentCipher: Send + Sync {
    fn seal(&self, plaintext: &[u8]) -> Vec<u8>;
    fn open(&self, sealed: &[u8]) -> Result<Vec<u8>, CipherError>;
}

#[derive(Debug, Error)]
#[error("segment decryption failed")]
pub struct CipherError;

/// XChaCha20-Poly1305 cipher with a random nonce prepended to each segment.
pub struct AeadSegmentCipher {
    cipher: XChaCha20Poly1305,
}

impl AeadSegmentCipher {
    pub fn new(key: [u8; 32]) -> Self {
        AeadSegmentCipher {
            cipher: XChaCha20Poly1305::new((&key).into()),
        }
    }
}

impl SegmentCipher for AeadSegmentCipher {
    fn seal(&self, plaintext: &[u8]) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        rand::Rng::fill(&mut rand::rng(), &mut nonce[..]);
        let mut out = nonce.to_vec();
        let ct = self
            .cipher
            .encrypt(&XNonce::from(nonce), plaintext)
            .expect("in-memory encryption cannot fail");
        out.extend_from_slice(&ct);
        out
    }

    fn open(&self, sealed: &[u8]) -> Result<Vec<u8>, CipherError> {
        if sealed.len() < NONCE_LEN {
            return Err(CipherError);
        }
        let (nonce, ct) = sealed.split_at(NONCE_LEN);
        let nonce = XNonce::try_from(nonce).map_err(|_| CipherError)?;
        self.cipher.decrypt(&nonce, ct).map_err(|_| CipherError)
    }
}

/// Log configuration. The per-segment byte budget is
/// `capacity_bytes / segment_count`; frames larger than one budget are
/// rejected outright.
#[derive(Clone)]
pub struct LogConfig {
    pub capacity_bytes: usize,
    pub segment_count: usize,
    pub persist_dir: Option<PathBuf>,
    pub encrypt_at_rest: Option<Arc<dyn SegmentCipher>>,
}

impl std::fmt::Debug for LogConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogConfig")
            .field("capacity_bytes", &self.capacity_bytes)
            .field("segment_count", &self.segment_count)
            .field("persist_dir", &self.persist_dir)
            .field("encrypt_at_rest", &self.encrypt_at_rest.is_some())
            .finish()
    }
}

impl LogConfig {
    pub fn new(capacity_bytes: usize, segment_count: usize) -> Self {
        LogConfig {
            capacity_bytes,
            segment_count,
            persist_dir: None,
            encrypt_at_rest: None,
        }
    }

    pub fn with_persist_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.persist_dir = Some(dir.into());
        self
    }

    pub fn with_cipher(mut self, cipher: Arc<dyn SegmentCipher>) -> Self {
        self.encrypt_at_rest = Some(cipher);
        self
    }

    fn validate(&self) -> Result<(), LogError> {
        if self.segment_count < 2 {
            return Err(LogError::InvalidConfig(format!(
                "segment_count must be >= 2, got {}",
                self.segment_count
            )));
        }
        if self.capacity_bytes / self.segment_count == 0 {
            return Err(LogError::InvalidConfig(format!(
                "capacity {} too small for {} segments",
                self.capacity_bytes, self.segment_count
            )));
        }
        Ok(())
    }

    fn segment_budget(&self) -> usize {
        self.capacity_bytes / self.segment_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Appended,
    /// Timestamp at or before the newest entry; log unchanged. The caller
    /// decides whether to drop or resync.
    RejectedStale,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub loaded_segments: usize,
    pub discarded_segments: usize,
    pub recovered_frames: usize,
}

/// Inclusive range query result.
#[derive(Debug, Clone)]
pub struct RangeResult<T> {
    pub entries: Vec<T>,
    /// Set when the requested start precedes the oldest resident entry,
    /// i.e. the log can only provide partial coverage.
    pub truncated_start: bool,
}

#[derive(Default)]
struct Segment {
    entries: Vec<(u64, Arc<[u8]>)>,
    bytes: usize,
    sealed: bool,
    crc32: Option<u32>,
}

impl Segment {
    fn first_ts(&self) -> Option<u64> {
        self.entries.first().map(|e| e.0)
    }

    fn last_ts(&self) -> Option<u64> {
        self.entries.last().map(|e| e.0)
    }

    fn reset_active(&mut self) {
        self.entries.clear();
        self.bytes = 0;
        self.sealed = false;
        self.crc32 = None;
    }
}

struct WriterState {
    active: usize,
    last_ts: Option<u64>,
}

enum PersistJob {
    Write {
        path: PathBuf,
        body: Vec<u8>,
        cipher: Option<Arc<dyn SegmentCipher>>,
    },
    Sync(mpsc::SyncSender<()>),
}

struct PersistHandle {
    tx: Option<mpsc::Sender<PersistJob>>,
    join: Option<std::thread::JoinHandle<()>>,
}

impl Drop for PersistHandle {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

struct Shared {
    budget: usize,
    nslots: usize,
    persist_dir: Option<PathBuf>,
    cipher: Option<Arc<dyn SegmentCipher>>,
    slots: Vec<RwLock<Segment>>,
    writer: Mutex<WriterState>,
    active: AtomicUsize,
    persist: Option<PersistHandle>,
    newest: Mutex<Option<u64>>,
    newest_cv: Condvar,
}

/// Handle to one camera's log. Clones share the log. One logical writer
/// per log; any number of concurrent readers.
#[derive(Clone)]
pub struct MemLog {
    shared: Arc<Shared>,
}

impl MemLog {
    pub fn new(config: LogConfig) -> Result<Self, LogError> {
        Self::build(config, Vec::new(), None)
    }

    fn build(
        config: LogConfig,
        recovered: Vec<Vec<(u64, Arc<[u8]>)>>,
        last_ts: Option<u64>,
    ) -> Result<Self, LogError> {
        config.validate()?;
        let nslots = config.segment_count;
        assert!(
            recovered.len() < nslots,
            "recovered segments must leave an active slot"
        );
        let mut slots: Vec<RwLock<Segment>> = (0..nslots)
            .map(|_| RwLock::new(Segment::default()))
            .collect();
        for (i, entries) in recovered.iter().enumerate() {
            let seg = slots[i].get_mut();
            seg.bytes = entries.iter().map(|(_, b)| b.len()).sum();
            seg.entries = entries.clone();
            seg.sealed = true;
            seg.crc32 = Some(segment_crc(entries));
        }
        let active = recovered.len();
        let persist = match &config.persist_dir {
            Some(dir) => Some(spawn_persist_thread(dir.clone())?),
            None => None,
        };
        Ok(MemLog {
            shared: Arc::new(Shared {
                budget: config.segment_budget(),
                nslots,
                persist_dir: config.persist_dir,
                cipher: config.encrypt_at_rest,
                slots,
                writer: Mutex::new(WriterState { active, last_ts }),
                active: AtomicUsize::new(active),
                persist,
                newest: Mutex::new(last_ts),
                newest_cv: Condvar::new(),
            }),
        })
    }

    /// Append a frame. Serializes it and delegates to
    /// [`Self::append_encoded`].
    pub fn append(&self, frame: &Frame) -> Result<AppendOutcome, LogError> {
        let bytes: Arc<[u8]> = codec::serialize_frame(frame).into();
        self.append_encoded(frame.ts(), bytes)
    }

    /// Append an already-encoded frame. The header is validated cheaply and
    /// its timestamp must match `ts`; callers own full payload validation.
    pub fn append_encoded(
        &self,
        ts: Timestamp,
        bytes: Arc<[u8]>,
    ) -> Result<AppendOutcome, LogError> {
        let header = codec::peek_frame(&bytes)?;
        if header.ts != ts || header.encoded_len != bytes.len() {
            return Err(LogError::Codec(CodecError::PayloadMismatch {
                expected: header.encoded_len,
                actual: bytes.len(),
            }));
        }
        if bytes.len() > self.shared.budget {
            return Err(LogError::FrameTooLarge {
                bytes: bytes.len(),
                budget: self.shared.budget,
            });
        }

        let mut writer = self.shared.writer.lock();
        if let Some(last) = writer.last_ts {
            if ts.micros() <= last {
                return Ok(AppendOutcome::RejectedStale);
            }
        }

        let needs_seal = {
            let seg = self.shared.slots[writer.active].read();
            seg.bytes + bytes.len() > self.shared.budget
        };
        if needs_seal {
            self.seal_active_locked(&mut writer);
        }
        {
            let mut seg = self.shared.slots[writer.active].write();
            seg.bytes += bytes.len();
            seg.entries.push((ts.micros(), bytes));
        }
        writer.last_ts = Some(ts.micros());
        drop(writer);

        *self.shared.newest.lock() = Some(ts.micros());
        self.shared.newest_cv.notify_all();
        Ok(AppendOutcome::Appended)
    }

    /// Seal the active segment (if non-empty) and schedule persistence.
    /// Used at shutdown; the append path seals automatically on overflow.
    pub fn flush(&self) {
        let mut writer = self.shared.writer.lock();
        let active_has_entries = !self.shared.slots[writer.active].read().entries.is_empty();
        if active_has_entries {
            self.seal_active_locked(&mut writer);
        }
    }

    /// Seals `writer.active` and advances to the next ring slot, recycling
    /// (evicting) whatever it holds. Caller holds the writer lock.
    fn seal_active_locked(&self, writer: &mut WriterState) {
        {
            let mut seg = self.shared.slots[writer.active].write();
            if seg.entries.is_empty() {
                return;
            }
            seg.sealed = true;
            let crc = segment_crc(&seg.entries);
            seg.crc32 = Some(crc);
            self.schedule_persist(&seg.entries);
        }
        let next = (writer.active + 1) % self.shared.nslots;
        {
            // waits only for readers of the segment being recycled
            let mut seg = self.shared.slots[next].write();
            seg.reset_active();
        }
        writer.active = next;
        self.shared.active.store(next, Ordering::Release);
    }

    fn schedule_persist(&self, entries: &[(u64, Arc<[u8]>)]) {
        let (Some(handle), Some(dir)) = (&self.shared.persist, &self.shared.persist_dir) else {
            return;
        };
        let Some(tx) = &handle.tx else { return };
        let first = entries.first().expect("sealed segments are non-empty");
        let camera = match codec::peek_frame(&first.1) {
            Ok(h) => h.camera_id,
            Err(e) => {
                log::warn!("skipping persistence of unparseable segment: {e}");
                return;
            }
        };
        let mut body =
            Vec::with_capacity(4 + entries.iter().map(|(_, b)| b.len()).sum::<usize>() + 4);
        body.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (_, bytes) in entries {
            body.extend_from_slice(bytes);
        }
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        let path = dir.join(format!("{}-{}.seg", camera.as_str(), first.0));
        let job = PersistJob::Write {
            path,
            body,
            cipher: self.shared.cipher.clone(),
        };
        if tx.send(job).is_err() {
            log::warn!("persistence thread gone; segment not persisted");
        }
    }

    /// Block until all scheduled segment writes have hit the filesystem.
    pub fn sync_persistence(&self) {
        if let Some(handle) = &self.shared.persist {
            if let Some(tx) = &handle.tx {
                let (ack_tx, ack_rx) = mpsc::sync_channel(0);
                if tx.send(PersistJob::Sync(ack_tx)).is_ok() {
                    let _ = ack_rx.recv();
                }
            }
        }
    }

    /// Exact-timestamp point query, binary search within the covering
    /// segment.
    pub fn get(&self, ts: Timestamp) -> Option<Frame> {
        let bytes = self.get_encoded(ts)?;
        match codec::deserialize_frame(&bytes) {
            Ok((frame, _)) => Some(frame),
            Err(e) => {
                log::warn!("resident frame at {ts} failed to decode: {e}");
                None
            }
        }
    }

    pub fn get_encoded(&self, ts: Timestamp) -> Option<Arc<[u8]>> {
        let t = ts.micros();
        for idx in self.ring_order() {
            let seg = self.shared.slots[idx].read();
            match (seg.first_ts(), seg.last_ts()) {
                (Some(first), Some(last)) if first <= t && t <= last => {
                    if let Ok(i) = seg.entries.binary_search_by_key(&t, |e| e.0) {
                        return Some(seg.entries[i].1.clone());
                    }
                }
                _ => {}
            }
        }
        None
    }

    /// All resident frames with `start <= ts <= end`, ascending.
    pub fn get_range(
        &self,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<RangeResult<Frame>, LogError> {
        let raw = self.get_range_encoded(start, end)?;
        let mut entries = Vec::with_capacity(raw.entries.len());
        for (ts, bytes) in raw.entries {
            match codec::deserialize_frame(&bytes) {
                Ok((frame, _)) => entries.push(frame),
                Err(e) => log::warn!("resident frame at {ts} failed to decode: {e}"),
            }
        }
        Ok(RangeResult {
            entries,
            truncated_start: raw.truncated_start,
        })
    }

    pub fn get_range_encoded(
        &self,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<RangeResult<(Timestamp, Arc<[u8]>)>, LogError> {
        if start > end {
            return Err(LogError::InvalidRange { start, end });
        }
        let (s, e) = (start.micros(), end.micros());
        let mut out: Vec<(u64, Arc<[u8]>)> = Vec::new();
        let mut oldest: Option<u64> = None;
        for idx in self.ring_order() {
            let seg = self.shared.slots[idx].read();
            let (Some(first), Some(last)) = (seg.first_ts(), seg.last_ts()) else {
                continue;
            };
            oldest = Some(oldest.map_or(first, |o: u64| o.min(first)));
            if last < s || first > e {
                continue;
            }
            let lo = seg.entries.partition_point(|&(t, _)| t < s);
            let hi = seg.entries.partition_point(|&(t, _)| t <= e);
            out.extend(seg.entries[lo..hi].iter().cloned());
        }
        // a slot can be recycled mid-scan; sorting restores global order
        out.sort_by_key(|&(t, _)| t);
        out.dedup_by_key(|&mut (t, _)| t);
        let truncated_start = matches!(oldest, Some(o) if s < o);
        Ok(RangeResult {
            entries: out
                .into_iter()
                .map(|(t, b)| (Timestamp::from_micros(t), b))
                .collect(),
            truncated_start,
        })
    }

    /// Newest appended timestamp, if any.
    pub fn last_ts(&self) -> Option<Timestamp> {
        self.shared.newest.lock().map(Timestamp::from_micros)
    }

    /// Oldest resident timestamp, if any.
    pub fn oldest_ts(&self) -> Option<Timestamp> {
        self.ring_order()
            .into_iter()
            .filter_map(|i| self.shared.slots[i].read().first_ts())
            .min()
            .map(Timestamp::from_micros)
    }

    /// Total bytes resident across all segments.
    pub fn resident_bytes(&self) -> usize {
        (0..self.shared.nslots)
            .map(|i| self.shared.slots[i].read().bytes)
            .sum()
    }

    /// Number of resident frames.
    pub fn len(&self) -> usize {
        (0..self.shared.nslots)
            .map(|i| self.shared.slots[i].read().entries.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block until an entry newer than `after` exists (or timeout). Used by
    /// delivery loops that follow the live tail.
    pub fn wait_for_newer(&self, after: Option<Timestamp>, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        let mut newest = self.shared.newest.lock();
        loop {
            let fresh = match (*newest, after) {
                (Some(n), Some(a)) => n > a.micros(),
                (Some(_), None) => true,
                (None, _) => false,
            };
            if fresh {
                return true;
            }
            if self
                .shared
                .newest_cv
                .wait_until(&mut newest, deadline)
                .timed_out()
            {
                return false;
            }
        }
    }

    /// Slot indices oldest-to-newest, ending at the active slot.
    fn ring_order(&self) -> Vec<usize> {
        let active = self.shared.active.load(Ordering::Acquire);
        (1..=self.shared.nslots)
            .map(|j| (active + j) % self.shared.nslots)
            .collect()
    }

    /// Rebuild one camera's log from persisted segments, discarding files
    /// whose CRC (or AEAD tag) fails or that are truncated. The discard
    /// count covers every unreadable file in the directory.
    pub fn recover(
        config: LogConfig,
        camera: &CameraId,
    ) -> Result<(Self, RecoveryReport), LogError> {
        config.validate()?;
        let (mut by_camera, discarded) = scan_dir(&config)?;
        let segs = by_camera.remove(camera).unwrap_or_default();
        let (log, mut report) = Self::from_loaded(config, segs)?;
        report.discarded_segments = discarded;
        Ok((log, report))
    }

    /// Scan the persist dir once and rebuild every camera's log found
    /// there. The aggregate report counts loads across all cameras; the
    /// discard count covers all unreadable files.
    pub fn recover_all(
        config: LogConfig,
    ) -> Result<(Vec<(CameraId, MemLog)>, RecoveryReport), LogError> {
        config.validate()?;
        let (by_camera, discarded) = scan_dir(&config)?;
        let mut report = RecoveryReport {
            discarded_segments: discarded,
            ..RecoveryReport::default()
        };
        let mut logs = Vec::new();
        for (camera, segs) in by_camera {
            let (log, r) = Self::from_loaded(config.clone(), segs)?;
            report.loaded_segments += r.loaded_segments;
            report.recovered_frames += r.recovered_frames;
            logs.push((camera, log));
        }
        Ok((logs, report))
    }

    /// Keep the newest loaded segments that fit the ring (one slot stays
    /// active) and the byte capacity, then build the log around them.
    fn from_loaded(
        config: LogConfig,
        mut segs: Vec<LoadedSegment>,
    ) -> Result<(Self, RecoveryReport), LogError> {
        segs.sort_by_key(|s| s.first_ts);
        let budget = config.segment_budget();
        let max_segments = config.segment_count - 1;
        let mut kept: Vec<LoadedSegment> = Vec::new();
        let mut bytes = 0usize;
        for seg in segs.into_iter().rev() {
            if kept.len() == max_segments || bytes + seg.bytes > budget * max_segments {
                break;
            }
            bytes += seg.bytes;
            kept.push(seg);
        }
        kept.reverse();
        let report = RecoveryReport {
            loaded_segments: kept.len(),
            discarded_segments: 0,
            recovered_frames: kept.iter().map(|s| s.entries.len()).sum(),
        };
        let last_ts = kept.last().and_then(|s| s.entries.last().map(|e| e.0));
        let entries: Vec<Vec<(u64, Arc<[u8]>)>> = kept.into_iter().map(|s| s.entries).collect();
        let log = Self::build(config, entries, last_ts)?;
        Ok((log, report))
    }
}

/// Read every `.seg` file in the persist dir, grouped by camera; the second
/// element counts discarded (unreadable) files.
fn scan_dir(
    config: &LogConfig,
) -> Result<
    (
        std::collections::BTreeMap<CameraId, Vec<LoadedSegment>>,
        usize,
    ),
    LogError,
> {
    let Some(dir) = &config.persist_dir else {
        return Err(LogError::PersistenceDisabled);
    };
    let mut by_camera: std::collections::BTreeMap<CameraId, Vec<LoadedSegment>> =
        std::collections::BTreeMap::new();
    let mut discarded = 0usize;
    if dir.exists() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "seg"))
            .collect();
        paths.sort();
        for path in paths {
            match load_segment_file(&path, config.encrypt_at_rest.as_deref()) {
                Ok(seg) => by_camera.entry(seg.camera.clone()).or_default().push(seg),
                Err(reason) => {
                    log::warn!("discarding segment {}: {reason}", path.display());
                    discarded += 1;
                }
            }
        }
    }
    Ok((by_camera, discarded))
}

fn segment_crc(entries: &[(u64, Arc<[u8]>)]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for (_, bytes) in entries {
        hasher.update(bytes);
    }
    hasher.finalize()
}

struct LoadedSegment {
    camera: CameraId,
    first_ts: u64,
    bytes: usize,
    entries: Vec<(u64, Arc<[u8]>)>,
}

fn load_segment_file(
    path: &Path,
    cipher: Option<&dyn SegmentCipher>,
) -> Result<LoadedSegment, String> {
    let raw = std::fs::read(path).map_err(|e| format!("read failed: {e}"))?;
    if raw.len() < SEGMENT_MAGIC.len() || raw[..SEGMENT_MAGIC.len()] != SEGMENT_MAGIC {
        return Err("bad magic".into());
    }
    let body_raw = &raw[SEGMENT_MAGIC.len()..];
    let body: Vec<u8> = match cipher {
        Some(c) => c.open(body_raw).map_err(|e| e.to_string())?,
        None => body_raw.to_vec(),
    };
    if body.len() < 8 {
        return Err("truncated body".into());
    }
    let (payload, trailer) = body.split_at(body.len() - 4);
    let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(payload) != stored_crc {
        return Err("crc mismatch".into());
    }
    let count = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    let mut camera: Option<CameraId> = None;
    let mut cursor = &payload[4..];
    let mut last_ts: Option<u64> = None;
    for _ in 0..count {
        let (frame_len, ts, cam) = {
            let h = codec::peek_frame(cursor).map_err(|e| format!("frame decode: {e}"))?;
            (h.encoded_len, h.ts.micros(), h.camera_id)
        };
        match &camera {
            None => camera = Some(cam),
            Some(c) if *c != cam => return Err("mixed camera ids in one segment".into()),
            _ => {}
        }
        if last_ts.is_some_and(|l| ts <= l) {
            return Err("timestamps not strictly ascending".into());
        }
        last_ts = Some(ts);
        let bytes: Arc<[u8]> = cursor[..frame_len].to_vec().into();
        entries.push((ts, bytes));
        cursor = &cursor[frame_len..];
    }
    if !cursor.is_empty() {
        return Err("trailing bytes after declared entries".into());
    }
    let camera = camera.ok_or("empty segment")?;
    let first_ts = entries.first().map(|e| e.0).unwrap();
    let bytes = entries.iter().map(|(_, b)| b.len()).sum();
    Ok(LoadedSegment {
        camera,
        first_ts,
        bytes,
        entries,
    })
}

fn spawn_persist_thread(dir: PathBuf) -> Result<PersistHandle, LogError> {
    std::fs::create_dir_all(&dir)?;
    let (tx, rx) = mpsc::channel::<PersistJob>();
    let join = std::thread::Builder::new()
        .name("memlog-persist".into())
        .spawn(move || {
            while let Ok(job) = rx.recv() {
                match job {
                    PersistJob::Write { path, body, cipher } => {
                        if let Err(e) = write_segment_file(&path, &body, cipher.as_deref()) {
                            // best-effort: recovery-only storage, the
                            // in-memory log is unaffected
                            log::warn!("segment persistence to {} failed: {e}", path.display());
                        }
                    }
                    PersistJob::Sync(ack) => {
                        let _ = ack.send(());
                    }
                }
            }
        })?;
    Ok(PersistHandle {
        tx: Some(tx),
        join: Some(join),
    })
}

fn write_segment_file(
    path: &Path,
    body: &[u8],
    cipher: Option<&dyn SegmentCipher>,
) -> std::io::Result<()> {
    let mut contents = Vec::with_capacity(SEGMENT_MAGIC.len() + body.len());
    contents.extend_from_slice(&SEGMENT_MAGIC);
    match cipher {
        Some(c) => contents.extend_from_slice(&c.seal(body)),
        None => contents.extend_from_slice(body),
    }
    let tmp = path.with_extension("seg.tmp");
    std::fs::write(&tmp, &contents)?;
    std::fs::rename(&tmp, path)
}
