//! Segment persistence and crash recovery: CRC self-consistency, corrupt and
//! truncated file discard, encryption at rest, and pre-crash oracle
//! equivalence.

use std::sync::Arc;

use framebus_core::memlog::{
    AeadSegmentCipher, LogConfig, MemLog, RecoveryReport, SegmentCipher, SEGMENT_MAGIC,
};
use framebus_core::{CameraId, Colorspace, Frame, Timestamp};

fn cam() -> CameraId {
    CameraId::new("reccam").unwrap()
}

fn frame(ts: u64, fill: u8) -> Frame {
    Frame::new(
        Timestamp::from_micros(ts),
        cam(),
        16,
        8,
        Colorspace::Gray,
        vec![fill; 128],
    )
    .unwrap()
}

/// Append exactly enough equal-sized frames to seal `segments` segments
/// (plus one frame left in the active segment), returning everything
/// appended.
fn fill_segments(log: &MemLog, segments: usize, start_ts: u64, budget: usize) -> Vec<Frame> {
    let encoded = framebus_core::codec::encoded_size(&frame(start_ts, 0)) as usize;
    let per_segment = budget / encoded;
    assert!(per_segment >= 1);
    let total = per_segment * segments + 1;
    let mut frames = Vec::new();
    for i in 0..total {
        let f = frame(start_ts + 10 * i as u64, (i * 13 % 251) as u8);
        log.append(&f).unwrap();
        frames.push(f);
    }
    frames
}

fn seg_files(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "seg"))
        .collect();
    v.sort();
    v
}

#[test]
fn sealed_segment_file_has_self_consistent_crc() {
    let dir = tempfile::tempdir().unwrap();
    let config = LogConfig::new(4096, 4).with_persist_dir(dir.path());
    let log = MemLog::new(config).unwrap();
    for i in 0..3u64 {
        log.append(&frame(10 + i * 10, i as u8)).unwrap();
    }
    log.flush();
    log.sync_persistence();

    let files = seg_files(dir.path());
    assert_eq!(files.len(), 1);
    let raw = std::fs::read(&files[0]).unwrap();
    assert_eq!(&raw[..8], &SEGMENT_MAGIC);
    let body = &raw[8..];
    let (payload, trailer) = body.split_at(body.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    assert_eq!(
        crc32fast::hash(payload),
        stored,
        "recomputed CRC matches trailer"
    );
    let count = u32::from_le_bytes(payload[..4].try_into().unwrap());
    assert_eq!(count, 3);
    let name = files[0].file_name().unwrap().to_string_lossy().into_owned();
    assert_eq!(name, "reccam-10.seg");
}

#[test]
fn persistence_disabled_creates_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let log = MemLog::new(LogConfig::new(4096, 4)).unwrap();
    for i in 0..50u64 {
        log.append(&frame(i + 1, i as u8)).unwrap();
    }
    log.flush();
    assert!(log.get(Timestamp::from_micros(50)).is_some());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn empty_persist_dir_recovers_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = LogConfig::new(4096, 4).with_persist_dir(dir.path());
    let (log, report) = MemLog::recover(config, &cam()).unwrap();
    assert!(log.is_empty());
    assert_eq!(report, RecoveryReport::default());
}

#[test]
fn recovery_discards_truncated_and_corrupt_segments() {
    let dir = tempfile::tempdir().unwrap();
    let config = LogConfig::new(8192, 8).with_persist_dir(dir.path());
    let pre_crash: Vec<Frame>;
    {
        let log = MemLog::new(config.clone()).unwrap();
        pre_crash = fill_segments(&log, 4, 10, 1024);
        log.flush();
        log.sync_persistence();
    }
    let files = seg_files(dir.path());
    assert!(
        files.len() >= 3,
        "need at least 3 persisted segments, got {}",
        files.len()
    );

    // truncate the middle file by one byte
    let middle = &files[files.len() / 2];
    let raw = std::fs::read(middle).unwrap();
    std::fs::write(middle, &raw[..raw.len() - 1]).unwrap();

    let (log, report) = MemLog::recover(config.clone(), &cam()).unwrap();
    assert_eq!(report.discarded_segments, 1);
    assert_eq!(report.loaded_segments, files.len() - 1);

    // surviving frames must equal the pre-crash oracle minus the frames of
    // the discarded segment
    let discarded_span = segment_span(&raw);
    let survivors = log
        .get_range(Timestamp::from_micros(0), Timestamp::from_micros(u64::MAX))
        .unwrap();
    let expected: Vec<&Frame> = pre_crash
        .iter()
        .filter(|f| {
            let t = f.ts().micros();
            !(discarded_span.0 <= t && t <= discarded_span.1)
        })
        .collect();
    assert_eq!(survivors.entries.len(), expected.len());
    for (got, want) in survivors.entries.iter().zip(expected) {
        assert_eq!(&got, &want);
    }

    // a bit-flip in the payload is likewise discarded
    let files = seg_files(dir.path());
    let victim = files.last().unwrap();
    let mut raw = std::fs::read(victim).unwrap();
    let idx = raw.len() / 2;
    raw[idx] ^= 0x40;
    std::fs::write(victim, &raw).unwrap();
    let (_, report2) = MemLog::recover(config, &cam()).unwrap();
    assert_eq!(report2.discarded_segments, 2);
}

/// Timestamp span of a plaintext segment file (used to know which frames
/// the discarded file held).
fn segment_span(raw: &[u8]) -> (u64, u64) {
    let payload = &raw[8..raw.len() - 4];
    let count = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
    let mut cursor = &payload[4..];
    let mut first = None;
    let mut last = 0;
    for _ in 0..count {
        let h = framebus_core::codec::peek_frame(cursor).unwrap();
        first.get_or_insert(h.ts.micros());
        last = h.ts.micros();
        cursor = &cursor[h.encoded_len..];
    }
    (first.unwrap(), last)
}

#[test]
fn recovered_log_accepts_only_newer_appends() {
    let dir = tempfile::tempdir().unwrap();
    let config = LogConfig::new(8192, 8).with_persist_dir(dir.path());
    {
        let log = MemLog::new(config.clone()).unwrap();
        fill_segments(&log, 2, 10, 1024);
        log.flush();
        log.sync_persistence();
    }
    let (log, _) = MemLog::recover(config, &cam()).unwrap();
    let last = log.last_ts().unwrap();
    use framebus_core::memlog::AppendOutcome;
    assert_eq!(
        log.append(&frame(last.micros(), 1)).unwrap(),
        AppendOutcome::RejectedStale
    );
    assert_eq!(
        log.append(&frame(last.micros() + 1, 1)).unwrap(),
        AppendOutcome::Appended
    );
}

#[test]
fn encryption_at_rest_round_trips_and_hides_plaintext() {
    let dir = tempfile::tempdir().unwrap();
    let cipher: Arc<dyn SegmentCipher> = Arc::new(AeadSegmentCipher::new([9u8; 32]));
    let config = LogConfig::new(4096, 4)
        .with_persist_dir(dir.path())
        .with_cipher(cipher);
    let frames: Vec<Frame> = (0..3).map(|i| frame(100 + i * 10, 200)).collect();
    {
        let log = MemLog::new(config.clone()).unwrap();
        for f in &frames {
            log.append(f).unwrap();
        }
        log.flush();
        log.sync_persistence();
    }
    let files = seg_files(dir.path());
    assert_eq!(files.len(), 1);
    let raw = std::fs::read(&files[0]).unwrap();
    assert_eq!(&raw[..8], &SEGMENT_MAGIC);
    // ciphertext: the frame magic must not appear after the header
    let needle = b"MEZ1";
    assert!(
        !raw[8..].windows(4).any(|w| w == needle),
        "plaintext frame marker leaked into the encrypted segment"
    );

    let (log, report) = MemLog::recover(config.clone(), &cam()).unwrap();
    assert_eq!(report.loaded_segments, 1);
    assert_eq!(report.recovered_frames, 3);
    for f in &frames {
        assert_eq!(
            log.get(f.ts()).as_ref(),
            Some(f),
            "decrypts to identical frames"
        );
    }

    // recovery with the wrong key discards the segment
    let wrong: Arc<dyn SegmentCipher> = Arc::new(AeadSegmentCipher::new([8u8; 32]));
    let bad_config = LogConfig::new(4096, 4)
        .with_persist_dir(dir.path())
        .with_cipher(wrong);
    let (log2, report2) = MemLog::recover(bad_config, &cam()).unwrap();
    assert!(log2.is_empty());
    assert_eq!(report2.discarded_segments, 1);
}

#[test]
fn recover_all_groups_by_camera() {
    let dir = tempfile::tempdir().unwrap();
    let config = LogConfig::new(8192, 4).with_persist_dir(dir.path());
    for name in ["cama", "camb"] {
        let log = MemLog::new(config.clone()).unwrap();
        let camera = CameraId::new(name).unwrap();
        for i in 0..3u64 {
            let f = Frame::new(
                Timestamp::from_micros(10 + i),
                camera.clone(),
                4,
                4,
                Colorspace::Gray,
                vec![i as u8; 16],
            )
            .unwrap();
            log.append(&f).unwrap();
        }
        log.flush();
        log.sync_persistence();
    }
    let (logs, report) = MemLog::recover_all(config).unwrap();
    assert_eq!(logs.len(), 2);
    assert_eq!(report.loaded_segments, 2);
    assert_eq!(report.recovered_frames, 6);
    let names: Vec<&str> = logs.iter().map(|(c, _)| c.as_str()).collect();
    assert_eq!(names, ["cama", "camb"]);
}
