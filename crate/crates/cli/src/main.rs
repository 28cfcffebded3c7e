//! `framebus` — latency-aware pub-sub for camera frame streams.
//!
//! Subcommands: `edge` (edge server), `camnode` (camera node agent),
//! `subscribe` (subscriber client), `bench` (benchmark runner), `sim`
//! (simulation runner), `profile-build` (characterization profile builder).
//!
//! Exit codes: 0 success, 2 usage, 3 infeasible bound, 4 connectivity
//! exhausted.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};

use framebus_broker::cam::{CamBroker, CamConfig};
use framebus_broker::client::{PublisherClient, SubEvent, SubscriberClient};
use framebus_broker::config::{RetryPolicy, TimeoutPolicy};
use framebus_broker::edge::{EdgeBroker, EdgeConfig};
use framebus_broker::BrokerError;
use framebus_core::codec::serialize_frame;
use framebus_core::memlog::LogConfig;
use framebus_core::profile::{
    fit_latency_model, load_latency_calibration, load_profile, save_profile,
};
use framebus_core::{CameraId, QosBound, Timestamp};

use framebus_cli::bench::{self, BenchMode, BenchOptions};
use framebus_cli::profilegen;
use framebus_cli::scenario::ScenarioFile;
use framebus_cli::sources::FrameSource;

const EXIT_INFEASIBLE: u8 = 3;
const EXIT_CONNECTIVITY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "framebus",
    version,
    about = "latency-aware pub-sub for camera frame streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the edge server: camera registry, replica logs, subscribers.
    Edge(EdgeArgs),
    /// Run a camera node: local log, latency controller, frame publisher.
    Camnode(CamnodeArgs),
    /// Subscribe to a camera; write frames and a per-frame latency CSV.
    Subscribe(SubscribeArgs),
    /// Measure pub-sub latency with a percentile and stage breakdown.
    Bench(BenchArgs),
    /// Run a simulation scenario and emit the step-response time series.
    Sim(SimArgs),
    /// Build a characterization profile (synthetic or from a corpus).
    ProfileBuild(ProfileBuildArgs),
}

#[derive(clap::Args)]
struct EdgeArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:7200")]
    listen: SocketAddr,
    /// Directory for persisted log segments (recovery only).
    #[arg(long)]
    persist_dir: Option<PathBuf>,
    /// Total in-memory log budget per camera, in MiB.
    #[arg(long, default_value_t = 1024)]
    capacity_mb: usize,
    /// Ring segment count per log.
    #[arg(long, default_value_t = 16)]
    segments: usize,
    /// Shared-secret credentials (enables authentication).
    #[arg(long)]
    credentials: Option<String>,
}

#[derive(clap::Args)]
struct CamnodeArgs {
    /// Edge server address.
    #[arg(long)]
    edge: SocketAddr,
    /// Camera identifier (unique per publisher).
    #[arg(long)]
    camera_id: String,
    /// Characterization profile file.
    #[arg(long)]
    profile: PathBuf,
    /// Latency calibration file (size_bytes<TAB>latency_ms lines).
    #[arg(long)]
    latency_calib: PathBuf,
    /// Publish rate in frames per second.
    #[arg(long, default_value_t = 5)]
    fps: u16,
    /// Camera broker listen address.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: SocketAddr,
    /// Frame source: "synthetic" or a directory of images.
    #[arg(long, default_value = "synthetic")]
    source: String,
    #[arg(long, default_value_t = 1920)]
    width: u16,
    #[arg(long, default_value_t = 1080)]
    height: u16,
    /// Synthetic scene complexity in [0, 1].
    #[arg(long, default_value_t = 0.6)]
    complexity: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stop after this many seconds (default: run until interrupted).
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long, default_value_t = 256)]
    capacity_mb: usize,
    #[arg(long, default_value_t = 16)]
    segments: usize,
    /// Directory for persisted local-log segments.
    #[arg(long)]
    persist_dir: Option<PathBuf>,
    /// Reconnect attempts after the first failure.
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Controller deadband override in milliseconds.
    #[arg(long)]
    error_threshold_ms: Option<f64>,
    #[arg(long)]
    credentials: Option<String>,
}

#[derive(clap::Args)]
struct SubscribeArgs {
    /// Edge server address.
    #[arg(long)]
    edge: SocketAddr,
    /// Camera to subscribe to.
    #[arg(long)]
    camera: String,
    /// Latency upper bound in milliseconds (p95 target).
    #[arg(long)]
    latency_ms: f64,
    /// Accuracy floor as a normalized-F1 percentage.
    #[arg(long)]
    accuracy_min: f64,
    /// Subscription start, microseconds since epoch (0 = all history).
    #[arg(long, default_value_t = 0)]
    begin: u64,
    /// Subscription end, microseconds since epoch (default: open).
    #[arg(long)]
    end: Option<u64>,
    /// Directory to write received frames into (one .mez file per frame).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-frame latency CSV path.
    #[arg(long)]
    latency_csv: Option<PathBuf>,
    /// Stop after this many seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long)]
    credentials: Option<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sim,
    Loopback,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    subscribers: usize,
    #[arg(long, default_value_t = 5.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Sim)]
    mode: ModeArg,
    /// CSV report output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    fps: u32,
    #[arg(long, default_value_t = 160)]
    width: u16,
    #[arg(long, default_value_t = 90)]
    height: u16,
}

#[derive(clap::Args)]
struct SimArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Time-series CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ProfileModeArg {
    Synthetic,
    Corpus,
}

#[derive(clap::Args)]
struct ProfileBuildArgs {
    #[arg(long, value_enum, default_value_t = ProfileModeArg::Synthetic)]
    mode: ProfileModeArg,
    /// Output profile path.
    #[arg(long)]
    out: PathBuf,
    /// Number of synthetic entries.
    #[arg(long, default_value_t = 30)]
    settings: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Image corpus directory (corpus mode).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Ground-truth boxes file (corpus mode).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Directory of per-setting detection files (corpus mode).
    #[arg(long)]
    detections: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Edge(args) => cmd_edge(args),
        Command::Camnode(args) => cmd_camnode(args),
        Command::Subscribe(args) => cmd_subscribe(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Sim(args) => cmd_sim(args),
        Command::ProfileBuild(args) => cmd_profile_build(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(broker) = e.downcast_ref::<BrokerError>() {
                if matches!(broker, BrokerError::GaveUp { .. }) {
                    return ExitCode::from(EXIT_CONNECTIVITY);
                }
            }
            ExitCode::FAILURE
        }
    }
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    let _ = ctrlc::set_handler(move || f.store(true, Ordering::Relaxed));
    flag
}

type AnyError = Box<dyn std::error::Error>;

fn cmd_edge(args: EdgeArgs) -> Result<ExitCode, AnyError> {
    let mut log = LogConfig::new(args.capacity_mb * 1024 * 1024, args.segments);
    if let Some(dir) = &args.persist_dir {
        log = log.with_persist_dir(dir);
    }
    let mut config = EdgeConfig::new(log);
    config.listen = args.listen;
    config.credentials = args.credentials;
    let edge = EdgeBroker::start(config)?;
    let report = edge.recovery_report();
    println!(
        "edge listening on {} ({} cameras recovered, {} segments loaded, {} discarded)",
        edge.addr(),
        edge.camera_count(),
        report.loaded_segments,
        report.discarded_segments
    );
    let stop = interrupt_flag();
    while !stop.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(100));
    }
    println!("shutting down");
    edge.shutdown();
    Ok(ExitCode::SUCCESS)
}

fn cmd_camnode(args: CamnodeArgs) -> Result<ExitCode, AnyError> {
    let camera = CameraId::new(args.camera_id.clone())?;
    let profile = load_profile(&args.profile)?;
    let calib = load_latency_calibration(&args.latency_calib)?;
    let model = fit_latency_model(&calib)?;

    let mut source = if args.source == "synthetic" {
        FrameSource::synthetic(
            camera.clone(),
            args.width,
            args.height,
            args.complexity,
            args.seed,
        )
    } else {
        FrameSource::directory(camera.clone(), std::path::Path::new(&args.source))?
    };
    let (width, height) = source.dims().unwrap_or((args.width, args.height));

    let mut log = LogConfig::new(args.capacity_mb * 1024 * 1024, args.segments);
    if let Some(dir) = &args.persist_dir {
        log = log.with_persist_dir(dir);
    }
    let mut config = CamConfig::new(camera, profile, model, log);
    if let Some(threshold) = args.error_threshold_ms {
        config.controller.error_threshold_ms = threshold;
    }
    config.listen = args.listen;
    config.edge = Some(args.edge);
    config.native_width = width;
    config.native_height = height;
    config.fps = args.fps;
    config.timeouts = TimeoutPolicy::for_fps(args.fps, 100);
    config.retry = RetryPolicy {
        retries: args.retries,
        backoff: Duration::from_millis(500),
    };
    config.credentials = args.credentials.clone();

    let cam = match CamBroker::start(config) {
        Ok(cam) => cam,
        Err(e @ BrokerError::GaveUp { .. }) => {
            eprintln!("error: registration failed: {e}");
            return Ok(ExitCode::from(EXIT_CONNECTIVITY));
        }
        Err(e) => return Err(e.into()),
    };
    println!("camera node {} serving on {}", args.camera_id, cam.addr());

    // publish through the same RPC surface external publishers use
    let mut publisher = PublisherClient::connect(
        cam.addr(),
        args.credentials.as_deref(),
        Duration::from_millis(2_000),
        &RetryPolicy::none(),
    )?;
    let stop = interrupt_flag();
    let interval = Duration::from_micros(1_000_000 / u64::from(args.fps.max(1)));
    let deadline = args
        .duration_s
        .map(|d| Instant::now() + Duration::from_secs_f64(d));
    let mut published = 0u64;
    while !stop.load(Ordering::Relaxed) {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let Some(frame) = source.next_frame(Timestamp::now()) else {
            println!("source exhausted");
            break;
        };
        match publisher.publish(&frame) {
            Ok(_) => published += 1,
            Err(e) if e.is_timeout() => {
                eprintln!("publish timed out; camera broker presumed dead");
                break;
            }
            Err(e) => return Err(e.into()),
        }
        std::thread::sleep(interval);
    }
    println!("published {published} frames; unregistering");
    cam.shutdown();
    Ok(ExitCode::SUCCESS)
}

fn cmd_subscribe(args: SubscribeArgs) -> Result<ExitCode, AnyError> {
    let camera = CameraId::new(args.camera.clone())?;
    let bound = QosBound::new(args.latency_ms, args.accuracy_min)?;
    let retry = RetryPolicy {
        retries: args.retries,
        backoff: Duration::from_millis(500),
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
    }
    let mut csv: Option<std::fs::File> = match &args.latency_csv {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            use std::io::Write;
            writeln!(
                f,
                "ts_micros,latency_ms,publish_ms,controller_ms,network_ms,broker_ms,subscribe_ms"
            )?;
            Some(f)
        }
        None => None,
    };

    let stop = interrupt_flag();
    let deadline = args
        .duration_s
        .map(|d| Instant::now() + Duration::from_secs_f64(d));
    let mut begin = args.begin;
    let end = args.end.map(Timestamp::from_micros);
    let mut received = 0u64;
    let mut infeasible: Option<f64> = None;

    'outer: loop {
        let client = match SubscriberClient::connect(
            args.edge,
            args.credentials.as_deref(),
            Duration::from_millis(2_000),
            &retry,
        ) {
            Ok(c) => c,
            Err(BrokerError::GaveUp { attempts }) => {
                eprintln!("error: gave up connecting after {attempts} attempts");
                return Ok(ExitCode::from(EXIT_CONNECTIVITY));
            }
            Err(e) => return Err(e.into()),
        };
        let mut sub = client.subscribe(&camera, Timestamp::from_micros(begin), end, bound)?;
        loop {
            if stop.load(Ordering::Relaxed) || deadline.is_some_and(|d| Instant::now() >= d) {
                let _ = sub.unsubscribe(Duration::from_millis(1_000));
                println!("unsubscribed after {received} frames");
                break 'outer;
            }
            match sub.next_event(Duration::from_millis(500)) {
                Ok(SubEvent::Frame {
                    frame,
                    timing,
                    received_micros,
                }) => {
                    received += 1;
                    let ts = frame.ts().micros();
                    begin = ts + 1;
                    let total = received_micros.saturating_sub(ts) as f64 / 1_000.0;
                    if let Some(f) = csv.as_mut() {
                        use std::io::Write;
                        let ms = |a: u64, b: u64| a.saturating_sub(b) as f64 / 1_000.0;
                        writeln!(
                            f,
                            "{ts},{total},{},{},{},{},{}",
                            ms(timing.cam_append_micros, ts),
                            timing.controller_micros as f64 / 1_000.0,
                            ms(
                                timing.edge_recv_micros,
                                timing.cam_append_micros + timing.controller_micros as u64
                            ),
                            ms(timing.edge_send_micros, timing.edge_recv_micros),
                            ms(received_micros, timing.edge_send_micros),
                        )?;
                    }
                    if let Some(dir) = &args.out {
                        std::fs::write(dir.join(format!("{ts}.mez")), serialize_frame(&frame))?;
                    }
                }
                Ok(SubEvent::Infeasible { best_accuracy_pct }) => {
                    eprintln!("infeasible bound: best achievable accuracy is {best_accuracy_pct}%");
                    infeasible = Some(best_accuracy_pct);
                    let _ = sub.unsubscribe(Duration::from_millis(1_000));
                    break 'outer;
                }
                Ok(SubEvent::Ended) => {
                    println!("stream ended after {received} frames");
                    break 'outer;
                }
                Ok(SubEvent::Cancelled) => break 'outer,
                Err(e) if e.is_timeout() => continue,
                Err(BrokerError::Wire(framebus_broker::wire::WireError::Closed)) => {
                    eprintln!("connection lost; reconnecting from {begin}");
                    continue 'outer;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(if infeasible.is_some() {
        ExitCode::from(EXIT_INFEASIBLE)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, AnyError> {
    let opts = BenchOptions {
        mode: match args.mode {
            ModeArg::Sim => BenchMode::Sim,
            ModeArg::Loopback => BenchMode::Loopback,
        },
        nodes: args.nodes,
        subscribers: args.subscribers,
        duration_s: args.duration_s,
        seed: args.seed,
        fps: args.fps,
        width: args.width,
        height: args.height,
    };
    let report = bench::run(&opts)?;
    println!("{report}");
    if let Some(path) = &args.out {
        let mut f = std::fs::File::create(path)?;
        report.write_csv(&mut f)?;
        println!("report written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sim(args: SimArgs) -> Result<ExitCode, AnyError> {
    let file = ScenarioFile::load(&args.scenario)?;
    let base = args.scenario.parent().unwrap_or(std::path::Path::new("."));
    let scenario = file.build(base)?;
    let series = framebus_core::netsim::run_closed_loop(&scenario)?;
    let mut out = std::fs::File::create(&args.out)?;
    series.write_csv(&mut out)?;
    for event in &series.events {
        eprintln!("{event}");
    }
    if let Some(last) = series.points.last() {
        println!(
            "{} points; final p95 {:.2} ms at setting \"{}\" (accuracy {:.1}%)",
            series.points.len(),
            last.p95_ms,
            last.setting,
            last.accuracy_pct
        );
    } else {
        println!("empty series");
    }
    let infeasible = series.events.iter().any(|e| {
        matches!(
            e,
            framebus_core::controller::ControlEvent::Infeasible { .. }
        )
    });
    Ok(if infeasible {
        ExitCode::from(EXIT_INFEASIBLE)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_profile_build(args: ProfileBuildArgs) -> Result<ExitCode, AnyError> {
    let entries = match args.mode {
        ProfileModeArg::Synthetic => profilegen::build_synthetic(args.settings, args.seed),
        ProfileModeArg::Corpus => {
            let (Some(corpus), Some(gt), Some(det)) =
                (&args.corpus, &args.ground_truth, &args.detections)
            else {
                return Err("corpus mode needs --corpus, --ground-truth and --detections".into());
            };
            profilegen::build_from_corpus(corpus, gt, det)?
        }
    };
    let header: Vec<&str> = match args.mode {
        ProfileModeArg::Synthetic => profilegen::SYNTHETIC_HEADER.to_vec(),
        ProfileModeArg::Corpus => vec!["corpus characterization profile"],
    };
    save_profile(&entries, &args.out, &header)?;
    println!("wrote {} entries to {}", entries.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
