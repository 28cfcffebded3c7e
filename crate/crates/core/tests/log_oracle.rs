//! Randomized equivalence of the segmented log against an independent
//! linear-scan bounded-buffer oracle: same byte budget, same whole-segment
//! eviction policy, no locks, no indexes.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framebus_core::codec::serialize_frame;
use framebus_core::memlog::{AppendOutcome, LogConfig, MemLog};
use framebus_core::{CameraId, Colorspace, Frame, Timestamp};

/// Straight-line model of the log contract: a deque of sealed segments plus
/// an active buffer, evicting whole segments from the front on wraparound.
struct OracleLog {
    sealed: VecDeque<Vec<(u64, Frame, usize)>>,
    active: Vec<(u64, Frame, usize)>,
    active_bytes: usize,
    budget: usize,
    max_sealed: usize,
    last_ts: Option<u64>,
}

impl OracleLog {
    fn new(capacity: usize, segments: usize) -> Self {
        OracleLog {
            sealed: VecDeque::new(),
            active: Vec::new(),
            active_bytes: 0,
            budget: capacity / segments,
            max_sealed: segments - 1,
            last_ts: None,
        }
    }

    fn append(&mut self, frame: &Frame) -> Result<bool, ()> {
        let bytes = serialize_frame(frame).len();
        if bytes > self.budget {
            return Err(());
        }
        let ts = frame.ts().micros();
        if self.last_ts.is_some_and(|l| ts <= l) {
            return Ok(false);
        }
        if self.active_bytes + bytes > self.budget {
            self.sealed.push_back(std::mem::take(&mut self.active));
            self.active_bytes = 0;
            if self.sealed.len() > self.max_sealed {
                self.sealed.pop_front();
            }
        }
        self.active.push((ts, frame.clone(), bytes));
        self.active_bytes += bytes;
        self.last_ts = Some(ts);
        Ok(true)
    }

    fn iter(&self) -> impl Iterator<Item = &(u64, Frame, usize)> {
        self.sealed.iter().flatten().chain(self.active.iter())
    }

    fn get(&self, ts: u64) -> Option<&Frame> {
        self.iter().find(|(t, _, _)| *t == ts).map(|(_, f, _)| f)
    }

    fn range(&self, start: u64, end: u64) -> (Vec<&Frame>, bool) {
        let frames = self
            .iter()
            .filter(|(t, _, _)| start <= *t && *t <= end)
            .map(|(_, f, _)| f)
            .collect();
        let truncated = self
            .iter()
            .next()
            .is_some_and(|(oldest, _, _)| start < *oldest);
        (frames, truncated)
    }

    fn resident_bytes(&self) -> usize {
        self.iter().map(|(_, _, b)| b).sum()
    }
}

fn random_frame(rng: &mut ChaCha8Rng, ts: u64) -> Frame {
    let w = rng.random_range(1..6u16);
    let h = rng.random_range(1..6u16);
    let pixels = (0..w as usize * h as usize)
        .map(|_| rng.random::<u8>())
        .collect();
    Frame::new(
        Timestamp::from_micros(ts),
        CameraId::new("oracle-cam").unwrap(),
        w,
        h,
        Colorspace::Gray,
        pixels,
    )
    .unwrap()
}

/// Shared driver, also used by the acceptance suite via its own copy of the
/// parameters: `ops` random operations, returning the number of mismatches
/// found (asserting along the way).
fn run_oracle_equivalence(ops: usize, seed: u64) {
    let capacity = 16 * 1024;
    let segments = 8;
    let log = MemLog::new(LogConfig::new(capacity, segments)).unwrap();
    let mut oracle = OracleLog::new(capacity, segments);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_ts = 1u64;
    let mut known_ts: Vec<u64> = Vec::new();

    for op in 0..ops {
        match rng.random_range(0..10u8) {
            // append, mostly in order with occasional stale timestamps
            0..=5 => {
                let stale = rng.random_ratio(1, 8) && !known_ts.is_empty();
                let ts = if stale {
                    known_ts[rng.random_range(0..known_ts.len())]
                } else {
                    next_ts += rng.random_range(1..5u64);
                    next_ts
                };
                let frame = random_frame(&mut rng, ts);
                let got = log.append(&frame).unwrap();
                let expect = oracle.append(&frame).unwrap();
                match (got, expect) {
                    (AppendOutcome::Appended, true) => known_ts.push(ts),
                    (AppendOutcome::RejectedStale, false) => {}
                    other => panic!("op {op}: append outcome mismatch {other:?}"),
                }
            }
            // point query
            6..=7 => {
                let ts = if !known_ts.is_empty() && rng.random_bool(0.7) {
                    known_ts[rng.random_range(0..known_ts.len())]
                } else {
                    rng.random_range(0..next_ts + 10)
                };
                let got = log.get(Timestamp::from_micros(ts));
                let expect = oracle.get(ts);
                assert_eq!(got.as_ref(), expect, "op {op}: get({ts}) mismatch");
            }
            // range query
            _ => {
                let a = rng.random_range(0..next_ts + 10);
                let b = rng.random_range(0..next_ts + 10);
                let (start, end) = (a.min(b), a.max(b));
                let got = log
                    .get_range(Timestamp::from_micros(start), Timestamp::from_micros(end))
                    .unwrap();
                let (expect, truncated) = oracle.range(start, end);
                assert_eq!(
                    got.entries.len(),
                    expect.len(),
                    "op {op}: range [{start},{end}] length mismatch"
                );
                for (g, e) in got.entries.iter().zip(&expect) {
                    assert_eq!(&g, e, "op {op}: range content mismatch");
                }
                assert_eq!(got.truncated_start, truncated, "op {op}: truncation flag");
            }
        }
        let resident = log.resident_bytes();
        assert!(
            resident <= capacity,
            "op {op}: resident {resident} exceeds capacity {capacity}"
        );
        assert_eq!(
            resident,
            oracle.resident_bytes(),
            "op {op}: resident bytes diverge"
        );
    }
}

#[test]
fn log_matches_linear_scan_oracle_over_10k_ops() {
    run_oracle_equivalence(10_000, 0xFEED);
}

#[test]
fn log_matches_oracle_under_other_seeds() {
    for seed in [1, 2, 3] {
        run_oracle_equivalence(2_000, seed);
    }
}

#[test]
fn invalid_range_rejected() {
    let log = MemLog::new(LogConfig::new(4096, 2)).unwrap();
    assert!(log
        .get_range(Timestamp::from_micros(5), Timestamp::from_micros(4))
        .is_err());
}

#[test]
fn oversized_frame_rejected_outright() {
    let log = MemLog::new(LogConfig::new(1024, 4)).unwrap();
    let frame = Frame::new(
        Timestamp::from_micros(1),
        CameraId::new("big").unwrap(),
        40,
        40,
        Colorspace::Bgr,
        (0..40 * 40 * 3).map(|i| (i % 251) as u8).collect(),
    )
    .unwrap();
    assert!(log.append(&frame).is_err());
    assert!(log.is_empty());
}

#[test]
fn wraparound_evicts_oldest_keeps_newest() {
    // tiny log: force several wraparounds, then check the boundary frames
    let log = MemLog::new(LogConfig::new(2048, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut frames = Vec::new();
    for i in 1..=200u64 {
        let f = random_frame(&mut rng, i);
        log.append(&f).unwrap();
        frames.push(f);
    }
    let newest = frames.last().unwrap();
    assert_eq!(
        log.get(newest.ts()).as_ref(),
        Some(newest),
        "newest readable"
    );
    assert!(log.get(frames[0].ts()).is_none(), "oldest evicted");
    assert!(log.resident_bytes() <= 2048);
}
