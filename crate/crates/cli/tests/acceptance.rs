//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured figure once its assertions hold.
//!
//! Simulation criteria run in virtual time against the Wi-Fi channel
//! calibration (per-frame latencies 32.09/35.16/46.09 ms at 610/760/970 KB
//! for one workload; 59.71/68.73/72.72 ms at 1390/1670/1740 KB for the
//! other; interference ratios up to 10x). Loopback criteria run real
//! brokers over TCP on this host.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framebus_broker::cam::{CamBroker, CamConfig};
use framebus_broker::client::{PublisherClient, SubEvent, SubscriberClient};
use framebus_broker::config::RetryPolicy;
use framebus_broker::edge::{EdgeBroker, EdgeConfig};
use framebus_cli::bench::{self, BenchMode, BenchOptions};
use framebus_core::codec::{encoded_size, serialize_frame};
use framebus_core::controller::{
    ControlDecision, ControlEvent, ControllerConfig, LatencyController,
};
use framebus_core::eval::{f1, iou, match_detections, BBox, MatchResult};
use framebus_core::knobs::{
    self, BlurKernel, ColorKnob, DiffThreshold, FrameDiffState, KnobSetting, Resolution,
};
use framebus_core::memlog::{AppendOutcome, LogConfig, MemLog};
use framebus_core::netsim::{percentile, run_closed_loop, run_multi_node, ChannelModel, Scenario};
use framebus_core::profile::{
    fit_latency_model, synthetic_profile, LinearLatencyModel, ProfileEntry, ProfileTable,
    SyntheticProfileConfig,
};
use framebus_core::synth::SyntheticSource;
use framebus_core::{CameraId, Colorspace, Frame, QosBound, Timestamp};

fn pass(criterion: u32, detail: &str) {
    println!("acceptance criterion {criterion}: PASS — {detail}");
}

/// Wall-clock-sensitive and CPU-heavy criteria run one at a time so their
/// timing is not polluted by parallel test execution.
static HEAVY: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

// Single-node Wi-Fi latency calibrations, (median encoded size, p95 ms),
// for the lighter and heavier reference workloads.
const CALIB_A_POINTS: [(u64, f64); 3] = [(610_000, 32.09), (760_000, 35.16), (970_000, 46.09)];
const CALIB_B_POINTS: [(u64, f64); 3] =
    [(1_390_000, 59.71), (1_670_000, 68.73), (1_740_000, 72.72)];

fn calib_a_model() -> LinearLatencyModel {
    fit_latency_model(&CALIB_A_POINTS).unwrap()
}

fn feasible_profile(min_size: u64, max_size: u64, floor: f64, seed: u64) -> ProfileTable {
    ProfileTable::from_entries(synthetic_profile(&SyntheticProfileConfig {
        entries: 20,
        min_size,
        max_size,
        accuracy_floor: floor,
        accuracy_ceil: 100.0,
        seed,
    }))
    .unwrap()
}

fn scenario(
    camera: &str,
    model: LinearLatencyModel,
    profile: ProfileTable,
    jitter: f64,
    seed: u64,
    bound: (f64, f64),
    duration_s: f64,
    controller_enabled: bool,
) -> Scenario {
    let controller = ControllerConfig {
        sample_window: 5,
        ..ControllerConfig::defaults_for(&model, &profile)
    };
    Scenario {
        camera: CameraId::new(camera).unwrap(),
        channel: ChannelModel::new(model, jitter, seed).unwrap(),
        profile,
        model,
        bound: QosBound::new(bound.0, bound.1).unwrap(),
        fps: 5,
        duration_s,
        controller_enabled,
        controller,
    }
}

// ---------------------------------------------------------------------------
// criterion 1: step-response reproduction

#[test]
fn criterion_01_step_response() {
    let started = Instant::now();
    let model = calib_a_model();
    let native = 970_000u64;
    let profile = feasible_profile(60_000, native, 96.0, 3);

    // controller off: steady p95 equals base latency at native size times
    // the 6.5x interference multiplier
    let mut off = scenario(
        "c1off",
        model,
        profile.clone(),
        0.0,
        7,
        (100.0, 96.0),
        20.0,
        false,
    );
    off.channel.set_interference_step(5_000.0, 6.5).unwrap();
    let series_off = run_closed_loop(&off).unwrap();
    let expected = model.predict_ms(native) * 6.5;
    let final_p95 = series_off.points.last().unwrap().p95_ms;
    assert!(
        (final_p95 - expected).abs() < 1e-9,
        "controller-off steady p95 {final_p95} vs base*6.5 {expected}"
    );

    // controller on: p95 back under the 100 ms target within 1 s of the
    // step, and every post-settling setting meets the accuracy floor
    let mut on = scenario("c1on", model, profile, 0.0, 7, (100.0, 96.0), 20.0, true);
    on.channel.set_interference_step(5_000.0, 6.5).unwrap();
    let series_on = run_closed_loop(&on).unwrap();
    let post_settling: Vec<_> = series_on.after(6_000.0).collect();
    assert!(!post_settling.is_empty());
    let under = post_settling.iter().filter(|p| p.p95_ms < 100.0).count();
    let frac = under as f64 / post_settling.len() as f64;
    assert!(
        frac >= 0.95,
        "p95 under target in only {:.1}% of post-settling windows",
        100.0 * frac
    );
    for p in &post_settling {
        assert!(
            p.accuracy_pct >= 96.0,
            "t={} selected accuracy {} below the floor",
            p.t_virtual_ms,
            p.accuracy_pct
        );
    }
    let runtime = started.elapsed();
    assert!(
        runtime < Duration::from_secs(5),
        "runtime {runtime:?} over 5 s"
    );
    pass(
        1,
        &format!(
            "controller-off p95 {:.1} ms = base*6.5; controller-on p95 < 100 ms in {:.0}% of post-settling windows ({:?})",
            final_p95,
            100.0 * frac,
            runtime
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 2: 10x latency tolerance

#[test]
fn criterion_02_ten_x_tolerance() {
    let started = Instant::now();
    // single-point base through the origin: 1740 KB -> 72.72 ms
    let model = fit_latency_model(&[(0, 0.0), (1_740_000, 72.72)]).unwrap();
    assert!((model.predict_ms(1_740_000) - 72.72).abs() < 1e-9);
    // every entry qualifies: accuracy floor equals the bound's 95.8
    let profile = feasible_profile(20_000, 1_740_000, 95.8, 5);

    let mut sc = scenario("c2", model, profile, 0.05, 11, (100.0, 95.8), 20.0, true);
    sc.channel.set_interference_step(4_000.0, 8.4).unwrap();
    sc.channel.set_interference_step(10_000.0, 10.0).unwrap();
    let series = run_closed_loop(&sc).unwrap();

    // settled regions: 1 s after each step
    let settled = |t: f64| (5_000.0..10_000.0).contains(&t) || t >= 11_000.0;
    let mut checked = 0;
    for p in &series.points {
        if settled(p.t_virtual_ms) {
            checked += 1;
            assert!(
                p.p95_ms < 100.0,
                "t={} p95={} breaches the bound",
                p.t_virtual_ms,
                p.p95_ms
            );
            assert!(p.accuracy_pct >= 95.8);
        }
    }
    assert!(checked > 50);
    let infeasible = series
        .events
        .iter()
        .filter(|e| matches!(e, ControlEvent::Infeasible { .. }))
        .count();
    assert_eq!(
        infeasible, 0,
        "no infeasible report while qualifying entries exist"
    );
    let runtime = started.elapsed();
    assert!(runtime < Duration::from_secs(10));
    pass(
        2,
        &format!(
            "p95 < 100 ms across multiplier steps 1 -> 8.4 -> 10 with accuracy >= 95.8% ({checked} settled windows, 0 infeasible)"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 3: node scaling

#[test]
fn criterion_03_node_scaling() {
    let started = Instant::now();
    let calib_b_model = fit_latency_model(&CALIB_B_POINTS).unwrap();
    let cases = [
        (
            "calib-a",
            calib_a_model(),
            5.6,
            feasible_profile(60_000, 970_000, 96.0, 3),
        ),
        (
            "calib-b",
            calib_b_model,
            8.4,
            feasible_profile(20_000, 1_740_000, 96.0, 9),
        ),
    ];
    for (name, model, five_node_ratio, profile) in cases {
        for nodes in 1..=5usize {
            // per-node-count interference: the five-node column ratio,
            // interpolated down to no interference at one node
            let multiplier = 1.0 + (five_node_ratio - 1.0) * (nodes as f64 - 1.0) / 4.0;
            let mut scenarios = Vec::new();
            for i in 0..nodes {
                // latency target 95 ms keeps the deadband ceiling
                // (target + threshold) at the 100 ms line
                let mut sc = scenario(
                    &format!("{name}{i}"),
                    model,
                    profile.clone(),
                    0.0,
                    100 + i as u64,
                    (95.0, 96.0),
                    12.0,
                    true,
                );
                if multiplier > 1.0 {
                    sc.channel.set_interference_step(0.0, multiplier).unwrap();
                }
                scenarios.push(sc);
            }
            let all = run_multi_node(&scenarios).unwrap();
            for (i, series) in all.iter().enumerate() {
                for p in series.after(6_000.0) {
                    assert!(
                        p.p95_ms < 100.0,
                        "{name}: node {i}/{nodes} t={} p95={}",
                        p.t_virtual_ms,
                        p.p95_ms
                    );
                }
            }
        }
    }
    let runtime = started.elapsed();
    assert!(runtime < Duration::from_secs(30));
    pass(
        3,
        &format!("every node's p95 < 100 ms for 1..5 nodes on both calibrations ({runtime:?})"),
    );
}

// ---------------------------------------------------------------------------
// criterion 4: subscriber scaling over loopback

#[test]
fn criterion_04_subscriber_scaling() {
    let _serial = heavy();
    let started = Instant::now();
    let base = BenchOptions {
        mode: BenchMode::Loopback,
        nodes: 1,
        subscribers: 1,
        duration_s: 8.0,
        seed: 42,
        fps: 5,
        width: 160,
        height: 90,
    };
    let one = bench::run(&base).unwrap();
    let eight = bench::run(&BenchOptions {
        subscribers: 8,
        ..base.clone()
    })
    .unwrap();
    assert!(one.p95_ms > 0.0);
    assert!(
        one.frames_delivered >= 20,
        "too few frames: {}",
        one.frames_delivered
    );
    assert!(
        eight.frames_delivered >= 150,
        "too few frames: {}",
        eight.frames_delivered
    );
    let ratio = eight.p95_ms / one.p95_ms;
    assert!(
        ratio < 2.0,
        "p95 grew {ratio:.2}x from 1 to 8 subscribers ({} -> {} ms)",
        one.p95_ms,
        eight.p95_ms
    );
    let share_sum = one.share_sum_pct();
    assert!(
        (share_sum - 100.0).abs() < 0.1,
        "breakdown shares sum to {share_sum}"
    );
    let runtime = started.elapsed();
    assert!(runtime < Duration::from_secs(60));
    pass(
        4,
        &format!(
            "p95 {:.2} ms at 1 subscriber vs {:.2} ms at 8 ({:.2}x < 2x)",
            one.p95_ms, eight.p95_ms, ratio
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 5: log oracle equivalence

/// Linear-scan bounded-buffer oracle with the same byte budget and
/// whole-segment eviction rule, built from plain vectors.
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

    fn append(&mut self, frame: &Frame) -> Option<bool> {
        let bytes = serialize_frame(frame).len();
        if bytes > self.budget {
            return None;
        }
        let ts = frame.ts().micros();
        if self.last_ts.is_some_and(|l| ts <= l) {
            return Some(false);
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
        Some(true)
    }

    fn iter(&self) -> impl Iterator<Item = &(u64, Frame, usize)> {
        self.sealed.iter().flatten().chain(self.active.iter())
    }
}

#[test]
fn criterion_05_log_oracle_equivalence() {
    let _serial = heavy();
    let started = Instant::now();
    let capacity = 16 * 1024;
    let segments = 8;
    let log = MemLog::new(LogConfig::new(capacity, segments)).unwrap();
    let mut oracle = OracleLog::new(capacity, segments);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let camera = CameraId::new("c5").unwrap();
    let mut next_ts = 1u64;
    let mut known: Vec<u64> = Vec::new();
    let mut stale_rejections = 0u64;

    for op in 0..10_000u32 {
        match rng.random_range(0..10u8) {
            0..=5 => {
                let stale = !known.is_empty() && rng.random_ratio(1, 8);
                let ts = if stale {
                    known[rng.random_range(0..known.len())]
                } else {
                    next_ts += rng.random_range(1..5u64);
                    next_ts
                };
                let w = rng.random_range(1..6u16);
                let h = rng.random_range(1..6u16);
                let pixels = (0..w as usize * h as usize).map(|_| rng.random()).collect();
                let frame = Frame::new(
                    Timestamp::from_micros(ts),
                    camera.clone(),
                    w,
                    h,
                    Colorspace::Gray,
                    pixels,
                )
                .unwrap();
                let got = log.append(&frame).unwrap();
                let expect = oracle.append(&frame).unwrap();
                match (got, expect) {
                    (AppendOutcome::Appended, true) => known.push(ts),
                    (AppendOutcome::RejectedStale, false) => stale_rejections += 1,
                    other => panic!("op {op}: append mismatch {other:?}"),
                }
            }
            6..=7 => {
                let ts = if !known.is_empty() && rng.random_bool(0.7) {
                    known[rng.random_range(0..known.len())]
                } else {
                    rng.random_range(0..next_ts + 10)
                };
                let got = log.get(Timestamp::from_micros(ts));
                let expect = oracle.iter().find(|(t, _, _)| *t == ts).map(|(_, f, _)| f);
                assert_eq!(got.as_ref(), expect, "op {op}: get({ts})");
            }
            _ => {
                let a = rng.random_range(0..next_ts + 10);
                let b = rng.random_range(0..next_ts + 10);
                let (start, end) = (a.min(b), a.max(b));
                let got = log
                    .get_range(Timestamp::from_micros(start), Timestamp::from_micros(end))
                    .unwrap();
                let expect: Vec<&Frame> = oracle
                    .iter()
                    .filter(|(t, _, _)| start <= *t && *t <= end)
                    .map(|(_, f, _)| f)
                    .collect();
                assert_eq!(got.entries.len(), expect.len(), "op {op}: range length");
                for (g, e) in got.entries.iter().zip(expect) {
                    assert_eq!(g, e, "op {op}: range content");
                }
            }
        }
        let resident = log.resident_bytes();
        assert!(resident <= capacity, "op {op}: {resident} > {capacity}");
    }
    assert!(stale_rejections > 0, "stale appends never exercised");
    let runtime = started.elapsed();
    assert!(runtime < Duration::from_secs(10));
    pass(
        5,
        &format!("10,000 randomized ops, zero mismatches, {stale_rejections} stale appends rejected ({runtime:?})"),
    );
}

// ---------------------------------------------------------------------------
// criterion 6: concurrency stress

#[test]
fn criterion_06_concurrency_stress() {
    let _serial = heavy();
    let capacity = 64 * 1024;
    let log = MemLog::new(LogConfig::new(capacity, 8)).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let camera = CameraId::new("c6").unwrap();

    let mut readers = Vec::new();
    for r in 0..8 {
        let log = log.clone();
        let stop = stop.clone();
        readers.push(std::thread::spawn(move || {
            let mut last_seen: Option<u64> = None;
            let mut observed = 0usize;
            while !stop.load(Ordering::Relaxed) {
                let from = last_seen.map_or(0, |t| t + 1);
                let result = log
                    .get_range(
                        Timestamp::from_micros(from),
                        Timestamp::from_micros(u64::MAX),
                    )
                    .unwrap();
                let mut prev = last_seen;
                for f in &result.entries {
                    let t = f.ts().micros();
                    assert!(
                        prev.is_none_or(|p| t > p),
                        "reader {r}: ts {t} after {prev:?}"
                    );
                    prev = Some(t);
                }
                if let Some(p) = prev {
                    last_seen = Some(p);
                }
                observed += result.entries.len();
            }
            observed
        }));
    }

    let deadline = Instant::now() + Duration::from_secs(5);
    let mut ts = 1u64;
    while Instant::now() < deadline {
        let frame = Frame::new(
            Timestamp::from_micros(ts),
            camera.clone(),
            8,
            8,
            Colorspace::Gray,
            vec![(ts % 251) as u8; 64],
        )
        .unwrap();
        log.append(&frame).unwrap();
        ts += 1;
        assert!(log.resident_bytes() <= capacity);
    }
    stop.store(true, Ordering::Relaxed);
    let mut observed = 0usize;
    for r in readers {
        observed += r.join().expect("reader panicked");
    }
    assert!(observed > 0);
    pass(
        6,
        &format!(
            "5 s, 1 writer + 8 readers: {} appends, {observed} strictly-ascending duplicate-free observations, no deadlock",
            ts - 1
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 7: crash recovery with at-most-once resume

#[test]
fn criterion_07_crash_recovery() {
    let _serial = heavy();
    let dir = tempfile::tempdir().unwrap();
    let edge_log = LogConfig::new(16 * 1024, 8).with_persist_dir(dir.path());
    let edge = EdgeBroker::start(EdgeConfig::new(edge_log.clone())).unwrap();

    let camera = CameraId::new("c7cam").unwrap();
    let profile = feasible_profile(50, 5_000, 95.0, 1);
    let model = fit_latency_model(&[(0, 1.0), (5_000, 2.0)]).unwrap();
    let mut cam_config = CamConfig::new(
        camera.clone(),
        profile,
        model,
        LogConfig::new(256 * 1024, 8),
    );
    cam_config.edge = Some(edge.addr());
    cam_config.native_width = 16;
    cam_config.native_height = 8;
    let cam = CamBroker::start(cam_config).unwrap();

    let mut publisher = PublisherClient::connect(
        cam.addr(),
        None,
        Duration::from_millis(1_000),
        &RetryPolicy::none(),
    )
    .unwrap();
    let total = 150u64;
    let mut published = Vec::new();
    for ts in 1..=total {
        let frame = Frame::new(
            Timestamp::from_micros(ts),
            camera.clone(),
            16,
            8,
            Colorspace::Gray,
            vec![(ts % 251) as u8; 128],
        )
        .unwrap();
        publisher.publish(&frame).unwrap();
        published.push(frame);
    }

    // first subscriber consumes part of the stream
    let bound = QosBound::new(1_000.0, 90.0).unwrap();
    let client = SubscriberClient::connect(
        edge.addr(),
        None,
        Duration::from_secs(2),
        &RetryPolicy::none(),
    )
    .unwrap();
    let mut stream = client
        .subscribe(&camera, Timestamp::from_micros(0), None, bound)
        .unwrap();
    let mut before_crash = Vec::new();
    for _ in 0..40 {
        match stream.next_event(Duration::from_secs(2)).unwrap() {
            SubEvent::Frame { frame, .. } => before_crash.push(frame.ts().micros()),
            other => panic!("unexpected event {other:?}"),
        }
    }
    let resume_from = *before_crash.last().unwrap();

    // wait for full replication, then force everything to disk
    let replica = edge.replica(&camera).unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    while replica.last_ts() != Some(Timestamp::from_micros(total)) {
        assert!(Instant::now() < deadline, "replication stalled");
        std::thread::sleep(Duration::from_millis(20));
    }
    drop(stream);
    replica.flush();
    replica.sync_persistence();
    cam.kill();
    edge.kill(); // crash: no graceful flush beyond what is already on disk

    // corrupt the middle persisted segment with a single bit flip
    let mut seg_files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "seg"))
        .collect();
    seg_files.sort();
    assert!(
        seg_files.len() >= 3,
        "need >= 3 segments, got {}",
        seg_files.len()
    );
    let victim = &seg_files[seg_files.len() / 2];
    let mut raw = std::fs::read(victim).unwrap();
    let corrupted_span = segment_span(&raw);
    let flip_at = raw.len() / 2;
    raw[flip_at] ^= 0x10;
    std::fs::write(victim, &raw).unwrap();

    // restart: exactly the corrupted segment is discarded
    let edge2 = EdgeBroker::start(EdgeConfig::new(edge_log)).unwrap();
    let report = edge2.recovery_report();
    assert_eq!(
        report.discarded_segments, 1,
        "exactly one segment discarded"
    );
    assert_eq!(report.loaded_segments, seg_files.len() - 1);

    // surviving frames equal the pre-crash oracle minus the corrupted span
    let replica2 = edge2.replica(&camera).unwrap();
    let survivors = replica2
        .get_range(Timestamp::from_micros(0), Timestamp::from_micros(u64::MAX))
        .unwrap();
    let expected: Vec<&Frame> = published
        .iter()
        .filter(|f| {
            let t = f.ts().micros();
            !(corrupted_span.0 <= t && t <= corrupted_span.1)
        })
        .collect();
    assert_eq!(survivors.entries.len(), expected.len());
    for (got, want) in survivors.entries.iter().zip(&expected) {
        assert_eq!(
            &got, want,
            "surviving frame diverges from the pre-crash oracle"
        );
    }

    // subscriber reconnects and resumes; no timestamp is seen twice
    let client2 = SubscriberClient::connect(
        edge2.addr(),
        None,
        Duration::from_secs(2),
        &RetryPolicy::none(),
    )
    .unwrap();
    let mut stream2 = client2
        .subscribe(
            &camera,
            Timestamp::from_micros(resume_from + 1),
            Some(Timestamp::from_micros(total)),
            bound,
        )
        .unwrap();
    let mut after_crash = Vec::new();
    loop {
        match stream2.next_event(Duration::from_secs(2)).unwrap() {
            SubEvent::Frame { frame, .. } => after_crash.push(frame.ts().micros()),
            SubEvent::Ended => break,
            other => panic!("unexpected event {other:?}"),
        }
    }
    let expected_after: Vec<u64> = expected
        .iter()
        .map(|f| f.ts().micros())
        .filter(|&t| t > resume_from)
        .collect();
    assert_eq!(after_crash, expected_after);

    let mut union = before_crash.clone();
    union.extend(&after_crash);
    assert!(
        union.windows(2).all(|w| w[0] < w[1]),
        "duplicate or reordered delivery"
    );
    pass(
        7,
        &format!(
            "1 of {} segments discarded by CRC; {} surviving frames matched; resume delivered {} frames with zero duplicates",
            seg_files.len(),
            survivors.entries.len(),
            after_crash.len()
        ),
    );
}

/// First/last frame timestamps held by a plaintext segment file.
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

// ---------------------------------------------------------------------------
// criterion 8: control-step fidelity against a straight-line oracle

/// Independent reimplementation of the control arithmetic: plain floats,
/// linear scans, no indexes, no shared code with the controller.
struct ControlOracle {
    latency_target: f64,
    accuracy_min: f64,
    k1: f64,
    k2: f64,
    threshold: f64,
    clamp: f64,
    window: usize,
    nominal: f64,
    integral: f64,
    samples: Vec<f64>,
}

#[derive(Debug, PartialEq)]
enum OracleDecision {
    NoChange,
    Adjusted {
        setting: KnobSetting,
        size: u64,
        accuracy: f64,
    },
    Infeasible {
        best: f64,
    },
}

impl ControlOracle {
    fn new(
        cfg: &ControllerConfig,
        bound: &QosBound,
        model: &LinearLatencyModel,
        entries: &[ProfileEntry],
    ) -> Self {
        let min = entries.iter().map(|e| e.size_bytes).min().unwrap();
        let max = entries.iter().map(|e| e.size_bytes).max().unwrap();
        let raw = (bound.latency_max_ms() - model.intercept_ms()) / model.slope_ms_per_byte();
        let nominal = raw.clamp(min as f64, max as f64).floor();
        ControlOracle {
            latency_target: bound.latency_max_ms(),
            accuracy_min: bound.accuracy_min_pct(),
            k1: cfg.k1_bytes_per_ms,
            k2: cfg.k2_bytes_per_ms_sample,
            threshold: cfg.error_threshold_ms,
            clamp: cfg.integral_clamp_bytes,
            window: cfg.sample_window,
            nominal,
            integral: 0.0,
            samples: Vec::new(),
        }
    }

    /// Best entry at or below `size`: largest size wins, accuracy breaks
    /// size ties, earlier index breaks exact ties.
    fn floor_entry<'e>(entries: &'e [ProfileEntry], size: u64) -> Option<&'e ProfileEntry> {
        let mut best: Option<&ProfileEntry> = None;
        for e in entries {
            if e.size_bytes > size {
                continue;
            }
            best = match best {
                None => Some(e),
                Some(b) if e.size_bytes > b.size_bytes => Some(e),
                Some(b) if e.size_bytes == b.size_bytes && e.accuracy_pct > b.accuracy_pct => {
                    Some(e)
                }
                Some(b) => Some(b),
            };
        }
        best
    }

    fn step(&mut self, latency: f64, entries: &[ProfileEntry]) -> OracleDecision {
        self.samples.push(latency.max(0.0));
        if self.samples.len() > self.window {
            self.samples.remove(0);
        }
        let mut sorted = self.samples.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).max(1);
        let p95 = sorted[rank - 1];

        let error = p95 - self.latency_target;
        if error <= self.threshold {
            return OracleDecision::NoChange;
        }
        self.integral += error;
        if self.k2 > 0.0 {
            let cap = self.clamp / self.k2;
            self.integral = self.integral.clamp(-cap, cap);
        }
        let min = entries.iter().map(|e| e.size_bytes).min().unwrap();
        let max = entries.iter().map(|e| e.size_bytes).max().unwrap();
        let raw = self.nominal - (self.k1 * error + self.k2 * self.integral);
        let size = raw.clamp(min as f64, max as f64).floor() as u64;

        let entry = Self::floor_entry(entries, size).expect("clamped size covers the table");
        // the criterion's infeasibility definition: no entry at or below
        // the computed size meets the accuracy floor
        let any_qualifies = entries
            .iter()
            .any(|e| e.size_bytes <= size && e.accuracy_pct >= self.accuracy_min);
        if entry.accuracy_pct >= self.accuracy_min {
            assert!(any_qualifies);
            OracleDecision::Adjusted {
                setting: entry.setting,
                size: entry.size_bytes,
                accuracy: entry.accuracy_pct,
            }
        } else {
            assert!(
                !any_qualifies,
                "monotone profile: floor-entry failure must mean nothing below qualifies"
            );
            let best = entries
                .iter()
                .map(|e| e.accuracy_pct)
                .fold(f64::NEG_INFINITY, f64::max);
            OracleDecision::Infeasible { best }
        }
    }
}

#[test]
fn criterion_08_control_step_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x41FD);
    let mut infeasible_runs = 0;
    let mut adjusted_steps = 0u64;
    for run in 0..100 {
        let min_size = rng.random_range(5_000..200_000u64);
        let max_size = min_size + rng.random_range(100_000..2_000_000u64);
        let floor = rng.random_range(80.0..97.0);
        let entries = synthetic_profile(&SyntheticProfileConfig {
            entries: rng.random_range(4..40usize),
            min_size,
            max_size,
            accuracy_floor: floor,
            accuracy_ceil: rng.random_range(97.0..100.0),
            seed: rng.random(),
        });
        let table = ProfileTable::from_entries(entries.clone()).unwrap();

        let slope = rng.random_range(1e-5..1e-4);
        let intercept = rng.random_range(0.0..20.0);
        let model = LinearLatencyModel::new(slope, intercept).unwrap();
        let target = rng.random_range(40.0..200.0);
        // sometimes demand more accuracy than the table can offer
        let accuracy_min = rng.random_range(floor - 3.0..101.0_f64).clamp(0.1, 100.0);
        let bound = QosBound::new(target + intercept, accuracy_min).unwrap();

        let cfg = ControllerConfig {
            k1_bytes_per_ms: rng.random_range(0.0..1.0) / slope,
            k2_bytes_per_ms_sample: rng.random_range(0.0..0.2) / slope,
            error_threshold_ms: 5.0,
            integral_clamp_bytes: 2.0 * max_size as f64,
            sample_window: rng.random_range(1..10usize),
        };
        let mut controller = LatencyController::new(cfg, bound, &model, &table).unwrap();
        let mut oracle = ControlOracle::new(&cfg, &bound, &model, &entries);

        for step in 0..30 {
            let latency = rng.random_range(0.0..600.0);
            controller.observe_latency(latency);
            let got = controller.control_step(&table);
            let expect = oracle.step(latency, &entries);
            match (&got, &expect) {
                (ControlDecision::NoChange, OracleDecision::NoChange) => {}
                (
                    ControlDecision::Adjusted {
                        setting,
                        size_bytes,
                        accuracy_pct,
                    },
                    OracleDecision::Adjusted {
                        setting: s2,
                        size,
                        accuracy,
                    },
                ) => {
                    assert_eq!(setting, s2, "run {run} step {step}: setting diverges");
                    assert_eq!(size_bytes, size, "run {run} step {step}: size diverges");
                    assert_eq!(accuracy_pct, accuracy, "run {run} step {step}");
                    adjusted_steps += 1;
                }
                (
                    ControlDecision::Infeasible { best_accuracy_pct },
                    OracleDecision::Infeasible { best },
                ) => {
                    assert_eq!(best_accuracy_pct, best, "run {run} step {step}");
                    infeasible_runs += 1;
                }
                other => panic!("run {run} step {step}: decision mismatch {other:?}"),
            }
        }
    }
    assert!(adjusted_steps > 100, "adjustment branch under-exercised");
    assert!(infeasible_runs > 0, "infeasible branch never exercised");
    pass(
        8,
        &format!(
            "100 randomized runs x 30 steps match the straight-line oracle ({adjusted_steps} adjustments, {infeasible_runs} infeasible steps)"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 9: eval arithmetic

#[test]
fn criterion_09_eval_arithmetic() {
    let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
    let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);

    let m = MatchResult {
        tp: 4,
        fp: 1,
        fn_: 4,
    };
    assert!((f1(&m) - 0.6153846).abs() < 1e-6);

    fn make(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
        (0..n)
            .map(|_| {
                let x1 = rng.random_range(0.0..20.0);
                let y1 = rng.random_range(0.0..20.0);
                BBox::new(
                    x1,
                    y1,
                    x1 + rng.random_range(0.5..6.0),
                    y1 + rng.random_range(0.5..6.0),
                )
                .unwrap()
            })
            .collect()
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xE7A1);
    for _ in 0..1_000 {
        let ng = rng.random_range(0..7usize);
        let np = rng.random_range(0..7usize);
        let gts = make(&mut rng, ng);
        let preds = make(&mut rng, np);
        let m = match_detections(&preds, &gts, 0.5);
        assert_eq!(m.tp + m.fn_, gts.len());
        assert_eq!(m.tp + m.fp, preds.len());
    }
    pass(
        9,
        "IoU 1/7 within 1e-12, F1 0.6153846 within 1e-6, count identities on 1,000 instances",
    );
}

// ---------------------------------------------------------------------------
// criterion 10: percentile and regression

#[test]
fn criterion_10_percentile_and_regression() {
    let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
    assert_eq!(percentile(&samples, 95.0).unwrap(), 95.0);

    let (slope, intercept) = (7.25e-5, 3.5);
    let points: Vec<(u64, f64)> = (1..=12)
        .map(|i| {
            let s = i * 80_000;
            (s, intercept + slope * s as f64)
        })
        .collect();
    let model = fit_latency_model(&points).unwrap();
    assert!(
        (model.slope_ms_per_byte() - slope).abs() / slope < 1e-9,
        "slope {} vs {slope}",
        model.slope_ms_per_byte()
    );
    assert!(
        (model.intercept_ms() - intercept).abs() / intercept < 1e-9,
        "intercept {} vs {intercept}",
        model.intercept_ms()
    );
    pass(
        10,
        "nearest-rank p95 of 1..100 is 95; collinear OLS recovers parameters to 1e-9",
    );
}

// ---------------------------------------------------------------------------
// criterion 11: knob directional effects on the synthetic corpus

#[test]
fn criterion_11_knob_directional_effects() {
    let _serial = heavy();
    let cam = CameraId::new("c11").unwrap();
    let corpus: Vec<Frame> = [(0.35, 5u64), (0.85, 11)]
        .iter()
        .map(|&(complexity, seed)| {
            SyntheticSource::new(cam.clone(), 1440, 810, complexity, seed)
                .frame_at(0, Timestamp::from_micros(seed))
        })
        .collect();

    for frame in &corpus {
        let identity = encoded_size(frame);
        for res in [
            Resolution::R1312x736,
            Resolution::R960x528,
            Resolution::R640x352,
            Resolution::R480x256,
        ] {
            let out = knobs::downscale(frame, res).unwrap();
            assert!(
                encoded_size(&out) < identity,
                "{res:?}: {} !< {identity}",
                encoded_size(&out)
            );
        }
        for color in [
            ColorKnob::Gray,
            ColorKnob::Hsv,
            ColorKnob::Lab,
            ColorKnob::Luv,
        ] {
            let out = knobs::convert_colorspace(frame, color.target().unwrap()).unwrap();
            assert!(
                encoded_size(&out) <= identity,
                "{color:?}: {} > {identity}",
                encoded_size(&out)
            );
        }
        for kernel in [
            BlurKernel::K5,
            BlurKernel::K8,
            BlurKernel::K10,
            BlurKernel::K15,
        ] {
            let out = knobs::blur(frame, kernel).unwrap();
            assert!(
                encoded_size(&out) <= identity,
                "{kernel:?}: {} > {identity}",
                encoded_size(&out)
            );
        }
    }

    // frame differencing: identical frames score zero, and the drop rule
    // matches a brute-force replay over a 100-frame stream
    let a = corpus[0].clone();
    assert_eq!(knobs::frame_diff(&a, &a).unwrap(), 0.0);

    let mut source = SyntheticSource::new(cam, 64, 36, 0.5, 77);
    let stream: Vec<Frame> = (0..100)
        .map(|i| source.next_frame(Timestamp::from_micros(i)))
        .collect();
    for threshold in [DiffThreshold::T1, DiffThreshold::T2] {
        let t = threshold.value().unwrap();
        let mut last_sent: Option<&Frame> = None;
        let mut expected = Vec::new();
        for f in &stream {
            let drop = match last_sent {
                Some(prev) => knobs::frame_diff(prev, f).unwrap() <= t,
                None => false,
            };
            expected.push(drop);
            if !drop {
                last_sent = Some(f);
            }
        }
        let mut state = FrameDiffState::new();
        let actual: Vec<bool> = stream
            .iter()
            .map(|f| knobs::should_drop(&mut state, f, threshold) == knobs::DropDecision::Drop)
            .collect();
        assert_eq!(
            actual, expected,
            "{threshold:?}: drop set diverges from replay"
        );
    }
    let mut state = FrameDiffState::new();
    let setting = KnobSetting {
        framediff: DiffThreshold::T1,
        ..KnobSetting::identity()
    };
    assert!(knobs::apply_setting(&a, &setting, &mut state)
        .unwrap()
        .is_some());
    assert!(
        knobs::apply_setting(&a, &setting, &mut state)
            .unwrap()
            .is_none(),
        "identical consecutive frame must drop at threshold 0"
    );
    pass(
        11,
        "resolution strictly shrinks, colorspace/blur never grow, drop rule equals brute-force replay",
    );
}
