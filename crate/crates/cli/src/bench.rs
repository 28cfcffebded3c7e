//! Benchmark runner: end-to-end pub-sub latency with per-stage breakdown,
//! over real loopback brokers or the deterministic simulator.
//!
//! Pub-sub latency is `t_received - t_send` on frame timestamps under a
//! shared clock. The breakdown splits it into publish (capture to local log
//! append), controller (knob pipeline), network (camera send to edge
//! receive, including transfer queueing), broker (edge fanout), and
//! subscribe (edge send to client receive); the five stages sum to the
//! total by construction.

use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use framebus_broker::cam::{CamBroker, CamConfig};
use framebus_broker::client::{PublisherClient, SubEvent, SubscriberClient};
use framebus_broker::config::RetryPolicy;
use framebus_broker::edge::{EdgeBroker, EdgeConfig};
use framebus_core::controller::ControllerConfig;
use framebus_core::memlog::LogConfig;
use framebus_core::netsim::{self, percentile, ChannelModel, Scenario};
use framebus_core::profile::{
    fit_latency_model, synthetic_profile, ProfileTable, SyntheticProfileConfig,
};
use framebus_core::synth::SyntheticSource;
use framebus_core::{CameraId, QosBound, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Sim,
    Loopback,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub mode: BenchMode,
    pub nodes: usize,
    pub subscribers: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub fps: u32,
    pub width: u16,
    pub height: u16,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            mode: BenchMode::Sim,
            nodes: 1,
            subscribers: 1,
            duration_s: 5.0,
            seed: 1,
            fps: 5,
            width: 160,
            height: 90,
        }
    }
}

/// One stage of the latency breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: &'static str,
    pub mean_ms: f64,
    pub share_pct: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub breakdown: Vec<Stage>,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub frames_delivered: u64,
}

pub const STAGE_NAMES: [&str; 5] = ["publish", "controller", "network", "broker", "subscribe"];

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameLatency {
    /// Stage durations in ms, ordered as [`STAGE_NAMES`].
    pub stages: [f64; 5],
}

impl FrameLatency {
    pub fn total_ms(&self) -> f64 {
        self.stages.iter().sum()
    }
}

impl BenchReport {
    /// Build from per-frame stage latencies. Stage shares are fractions of
    /// the summed total, so they add up to 100%.
    pub fn from_samples(
        samples: &[FrameLatency],
        frames_sent: u64,
        frames_dropped: u64,
    ) -> Option<BenchReport> {
        if samples.is_empty() {
            return None;
        }
        let totals: Vec<f64> = samples.iter().map(FrameLatency::total_ms).collect();
        let n = samples.len() as f64;
        let grand_total: f64 = totals.iter().sum();
        let mut breakdown = Vec::with_capacity(5);
        for (i, name) in STAGE_NAMES.iter().enumerate() {
            let stage_sum: f64 = samples.iter().map(|s| s.stages[i]).sum();
            breakdown.push(Stage {
                name,
                mean_ms: stage_sum / n,
                share_pct: if grand_total > 0.0 {
                    100.0 * stage_sum / grand_total
                } else {
                    0.0
                },
            });
        }
        Some(BenchReport {
            p50_ms: percentile(&totals, 50.0).ok()?,
            p95_ms: percentile(&totals, 95.0).ok()?,
            p99_ms: percentile(&totals, 99.0).ok()?,
            breakdown,
            frames_sent,
            frames_dropped,
            frames_delivered: samples.len() as u64,
        })
    }

    pub fn share_sum_pct(&self) -> f64 {
        self.breakdown.iter().map(|s| s.share_pct).sum()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "p50_ms,{}", self.p50_ms)?;
        writeln!(w, "p95_ms,{}", self.p95_ms)?;
        writeln!(w, "p99_ms,{}", self.p99_ms)?;
        for s in &self.breakdown {
            writeln!(w, "{}_mean_ms,{}", s.name, s.mean_ms)?;
            writeln!(w, "{}_share_pct,{}", s.name, s.share_pct)?;
        }
        writeln!(w, "frames_sent,{}", self.frames_sent)?;
        writeln!(w, "frames_dropped,{}", self.frames_dropped)?;
        writeln!(w, "frames_delivered,{}", self.frames_delivered)?;
        Ok(())
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "pub-sub latency: p50 {:.2} ms  p95 {:.2} ms  p99 {:.2} ms",
            self.p50_ms, self.p95_ms, self.p99_ms
        )?;
        writeln!(f, "breakdown (mean ms / % of total):")?;
        for s in &self.breakdown {
            writeln!(
                f,
                "  {:<10} {:>9.3} ms  {:>5.1}%",
                s.name, s.mean_ms, s.share_pct
            )?;
        }
        write!(
            f,
            "frames: sent {}  dropped {}  delivered {}",
            self.frames_sent, self.frames_dropped, self.frames_delivered
        )
    }
}

/// Run the benchmark per the options. Sim mode is deterministic under the
/// seed; loopback mode launches real brokers in-process.
pub fn run(opts: &BenchOptions) -> Result<BenchReport, Box<dyn std::error::Error>> {
    match opts.mode {
        BenchMode::Sim => run_sim(opts),
        BenchMode::Loopback => run_loopback(opts),
    }
}

/// Simulated run: per-node channels at an interference level matching the
/// node count, virtual time, no wall-clock dependence.
fn run_sim(opts: &BenchOptions) -> Result<BenchReport, Box<dyn std::error::Error>> {
    let model = fit_latency_model(&[(610_000, 32.09), (760_000, 35.16), (970_000, 46.09)])?;
    let profile = ProfileTable::from_entries(synthetic_profile(&SyntheticProfileConfig {
        entries: 20,
        min_size: 60_000,
        max_size: 970_000,
        accuracy_floor: 96.0,
        accuracy_ceil: 100.0,
        seed: opts.seed,
    }))?;
    // interference grows with the number of peer nodes toward the
    // five-node ratio of 5.6x
    let multiplier = 1.0 + (5.6 - 1.0) * (opts.nodes.saturating_sub(1) as f64) / 4.0;
    let controller = ControllerConfig {
        sample_window: 5,
        ..ControllerConfig::defaults_for(&model, &profile)
    };
    let mut scenarios = Vec::new();
    for node in 0..opts.nodes {
        let mut channel = ChannelModel::new(model, 0.05, opts.seed + node as u64)?;
        if multiplier > 1.0 {
            channel.set_interference_step(0.0, multiplier)?;
        }
        scenarios.push(Scenario {
            camera: CameraId::new(format!("node{node}"))?,
            channel,
            profile: profile.clone(),
            model,
            bound: QosBound::new(100.0, 96.0)?,
            fps: opts.fps,
            duration_s: opts.duration_s,
            controller_enabled: true,
            controller,
        });
    }
    let series = netsim::run_multi_node(&scenarios)?;
    let mut samples = Vec::new();
    for s in &series {
        for r in &s.records {
            let total = (r.ts_received.micros() - r.ts_sent.micros()) as f64 / 1_000.0;
            // the simulator models the network stage only
            samples.push(FrameLatency {
                stages: [0.0, 0.0, total, 0.0, 0.0],
            });
        }
    }
    let sent = samples.len() as u64;
    BenchReport::from_samples(&samples, sent, 0).ok_or_else(|| "empty benchmark".into())
}

/// Real brokers over loopback TCP: `nodes` camera nodes publishing
/// synthetic frames, `subscribers` subscribers on the first camera.
fn run_loopback(opts: &BenchOptions) -> Result<BenchReport, Box<dyn std::error::Error>> {
    let edge = EdgeBroker::start(EdgeConfig::new(LogConfig::new(64 * 1024 * 1024, 16)))?;

    let model = fit_latency_model(&[(0, 1.0), (1_000_000, 11.0)])?;
    let profile = ProfileTable::from_entries(synthetic_profile(&SyntheticProfileConfig {
        entries: 10,
        min_size: 1_000,
        max_size: 1_000_000,
        accuracy_floor: 96.0,
        accuracy_ceil: 100.0,
        seed: opts.seed,
    }))?;

    let stop = Arc::new(AtomicBool::new(false));
    let sent = Arc::new(AtomicU64::new(0));
    let mut cams = Vec::new();
    let mut publishers = Vec::new();
    for node in 0..opts.nodes {
        let camera = CameraId::new(format!("bench{node}"))?;
        let mut config = CamConfig::new(
            camera.clone(),
            profile.clone(),
            model,
            LogConfig::new(64 * 1024 * 1024, 16),
        );
        config.edge = Some(edge.addr());
        config.native_width = opts.width;
        config.native_height = opts.height;
        config.fps = opts.fps as u16;
        let cam = CamBroker::start(config)?;

        let mut publisher = PublisherClient::connect(
            cam.addr(),
            None,
            Duration::from_millis(2_000),
            &RetryPolicy::default(),
        )?;
        let mut source = SyntheticSource::new(camera, opts.width, opts.height, 0.6, opts.seed);
        let stop = stop.clone();
        let sent = sent.clone();
        let fps = opts.fps;
        publishers.push(std::thread::spawn(move || {
            let interval = Duration::from_micros(1_000_000 / u64::from(fps.max(1)));
            while !stop.load(Ordering::Relaxed) {
                let frame = source.next_frame(Timestamp::now());
                if publisher.publish(&frame).is_err() {
                    return;
                }
                sent.fetch_add(1, Ordering::Relaxed);
                std::thread::sleep(interval);
            }
        }));
        cams.push(cam);
    }

    let camera = CameraId::new("bench0")?;
    let bound = QosBound::new(1_000.0, 90.0)?;
    let mut subscribers = Vec::new();
    for _ in 0..opts.subscribers {
        let client = SubscriberClient::connect(
            edge.addr(),
            None,
            Duration::from_millis(2_000),
            &RetryPolicy::default(),
        )?;
        // live tail only, so early history does not skew the latency samples
        let mut sub = client.subscribe(&camera, Timestamp::now(), None, bound)?;
        let stop = stop.clone();
        subscribers.push(std::thread::spawn(move || {
            let mut samples: Vec<FrameLatency> = Vec::new();
            while !stop.load(Ordering::Relaxed) {
                match sub.next_event(Duration::from_millis(300)) {
                    Ok(SubEvent::Frame {
                        frame,
                        timing,
                        received_micros,
                    }) => {
                        let ts = frame.ts().micros();
                        let ms = |a: u64, b: u64| a.saturating_sub(b) as f64 / 1_000.0;
                        let publish = ms(timing.cam_append_micros, ts);
                        let controller = timing.controller_micros as f64 / 1_000.0;
                        let network = ms(
                            timing.edge_recv_micros,
                            timing.cam_append_micros + timing.controller_micros as u64,
                        );
                        let broker = ms(timing.edge_send_micros, timing.edge_recv_micros);
                        let subscribe = ms(received_micros, timing.edge_send_micros);
                        samples.push(FrameLatency {
                            stages: [publish, controller, network, broker, subscribe],
                        });
                    }
                    Ok(SubEvent::Ended) | Ok(SubEvent::Cancelled) => break,
                    Ok(_) => {}
                    Err(e) if e.is_timeout() => continue,
                    Err(_) => break,
                }
            }
            samples
        }));
    }

    std::thread::sleep(Duration::from_secs_f64(opts.duration_s));
    stop.store(true, Ordering::Relaxed);
    for p in publishers {
        let _ = p.join();
    }
    let mut samples = Vec::new();
    for s in subscribers {
        samples.extend(s.join().unwrap_or_default());
    }
    let dropped: u64 = cams.iter().map(|c| c.stats().frames_dropped).sum();
    let frames_sent = sent.load(Ordering::Relaxed);
    for cam in cams {
        cam.shutdown();
    }
    edge.shutdown();

    BenchReport::from_samples(&samples, frames_sent, dropped)
        .ok_or_else(|| "no frames delivered".into())
}
