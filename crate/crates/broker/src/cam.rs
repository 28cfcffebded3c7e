//! Camera-node broker: accepts the publisher's frame stream into the local
//! in-memory log, registers with the edge broker, and serves on-demand
//! upstream transfer with the latency controller in the path.
//!
//! One camera per broker. The controller and frame-differencing state are
//! per-camera and shared between the transfer session (which drives them)
//! and the control connection (which retargets them).

use std::collections::{HashMap, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use framebus_core::codec;
use framebus_core::controller::{
    ControlDecision, ControlEvent, ControllerConfig, LatencyController,
};
use framebus_core::knobs::FrameDiffState;
use framebus_core::memlog::{AppendOutcome, LogConfig, MemLog, RecoveryReport};
use framebus_core::profile::{LinearLatencyModel, ProfileTable};
use framebus_core::{CameraId, QosBound, Timestamp};

use crate::config::{RetryPolicy, TimeoutPolicy};
use crate::messages::{self, Reader, Writer};
use crate::wire::{read_frame, write_frame, MsgType, RpcFrame, WireError};
use crate::BrokerError;

/// Publish-time records kept so the transfer path can report the
/// publish-stage latency per frame.
const APPEND_TIME_CAPACITY: usize = 4096;

pub struct CamConfig {
    pub camera: CameraId,
    pub listen: SocketAddr,
    pub edge: Option<SocketAddr>,
    pub native_width: u16,
    pub native_height: u16,
    pub fps: u16,
    pub profile: ProfileTable,
    pub model: LinearLatencyModel,
    pub controller: ControllerConfig,
    pub log: LogConfig,
    pub timeouts: TimeoutPolicy,
    pub retry: RetryPolicy,
    pub credentials: Option<String>,
}

impl CamConfig {
    pub fn new(
        camera: CameraId,
        profile: ProfileTable,
        model: LinearLatencyModel,
        log: LogConfig,
    ) -> Self {
        let controller = ControllerConfig::defaults_for(&model, &profile);
        CamConfig {
            camera,
            listen: "127.0.0.1:0".parse().unwrap(),
            edge: None,
            native_width: 1920,
            native_height: 1080,
            fps: 5,
            profile,
            model,
            controller,
            log,
            timeouts: TimeoutPolicy::default(),
            retry: RetryPolicy::default(),
            credentials: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CamStats {
    pub frames_published: u64,
    pub stale_rejected: u64,
    pub frames_transferred: u64,
    pub bytes_transferred: u64,
    pub frames_dropped: u64,
    pub infeasible_notices: u64,
}

#[derive(Default)]
struct CamStatsAtomic {
    frames_published: AtomicU64,
    stale_rejected: AtomicU64,
    frames_transferred: AtomicU64,
    bytes_transferred: AtomicU64,
    frames_dropped: AtomicU64,
    infeasible_notices: AtomicU64,
}

impl CamStatsAtomic {
    fn snapshot(&self) -> CamStats {
        CamStats {
            frames_published: self.frames_published.load(Ordering::Relaxed),
            stale_rejected: self.stale_rejected.load(Ordering::Relaxed),
            frames_transferred: self.frames_transferred.load(Ordering::Relaxed),
            bytes_transferred: self.bytes_transferred.load(Ordering::Relaxed),
            frames_dropped: self.frames_dropped.load(Ordering::Relaxed),
            infeasible_notices: self.infeasible_notices.load(Ordering::Relaxed),
        }
    }
}

struct CamShared {
    camera: CameraId,
    native: (u16, u16, u16),
    profile: ProfileTable,
    model: LinearLatencyModel,
    timeouts: TimeoutPolicy,
    credentials: Option<String>,
    log: MemLog,
    controller: Mutex<LatencyController>,
    diff_state: Mutex<FrameDiffState>,
    append_times: Mutex<(HashMap<u64, u64>, VecDeque<u64>)>,
    stats: CamStatsAtomic,
    stop: AtomicBool,
    next_client: AtomicU64,
}

pub struct CamBroker;

impl CamBroker {
    pub fn start(config: CamConfig) -> Result<CamHandle, BrokerError> {
        let (log, recovery) = match &config.log.persist_dir {
            Some(_) => MemLog::recover(config.log.clone(), &config.camera)?,
            None => (MemLog::new(config.log.clone())?, RecoveryReport::default()),
        };
        // permissive placeholder target; real bounds arrive via SetTarget
        let idle_bound = QosBound::new(1e12, 1e-9).unwrap();
        let controller = LatencyController::new(
            config.controller,
            idle_bound,
            &config.model,
            &config.profile,
        )?;

        let listener = TcpListener::bind(config.listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;

        let shared = Arc::new(CamShared {
            camera: config.camera.clone(),
            native: (config.native_width, config.native_height, config.fps),
            profile: config.profile,
            model: config.model,
            timeouts: config.timeouts,
            credentials: config.credentials.clone(),
            log,
            controller: Mutex::new(controller),
            diff_state: Mutex::new(FrameDiffState::new()),
            append_times: Mutex::new((HashMap::new(), VecDeque::new())),
            stats: CamStatsAtomic::default(),
            stop: AtomicBool::new(false),
            next_client: AtomicU64::new(1),
        });

        if let Some(edge) = config.edge {
            register_with_edge(&shared, edge, addr, &config.retry)?;
        }

        let accept_shared = shared.clone();
        let accept_thread = std::thread::Builder::new()
            .name(format!("cam-{}-accept", shared.camera))
            .spawn(move || accept_loop(accept_shared, listener))?;

        Ok(CamHandle {
            addr,
            edge: config.edge,
            shared,
            accept_thread: Some(accept_thread),
            recovery,
        })
    }
}

pub struct CamHandle {
    addr: SocketAddr,
    edge: Option<SocketAddr>,
    shared: Arc<CamShared>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
    recovery: RecoveryReport,
}

impl CamHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> CamStats {
        self.shared.stats.snapshot()
    }

    pub fn recovery_report(&self) -> RecoveryReport {
        self.recovery
    }

    /// The local pre-modification frame log (test and tooling access).
    pub fn log(&self) -> &MemLog {
        &self.shared.log
    }

    /// Graceful stop: unregister from the edge, flush the log, join.
    pub fn shutdown(mut self) {
        if let Some(edge) = self.edge {
            let _ = unregister_from_edge(&self.shared, edge);
        }
        self.shared.log.flush();
        self.shared.log.sync_persistence();
        self.stop_and_join();
    }

    /// Abrupt stop without unregistering or flushing, for fault-injection
    /// tests (sealed segments are already persisted in the background).
    pub fn kill(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for CamHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn register_with_edge(
    shared: &Arc<CamShared>,
    edge: SocketAddr,
    own_addr: SocketAddr,
    retry: &RetryPolicy,
) -> Result<(), BrokerError> {
    let mut stream = crate::client::connect_with_retry(
        edge,
        messages::ROLE_PUBLISHER,
        shared.credentials.as_deref(),
        shared.timeouts.subscribe,
        retry,
    )?
    .0;
    let body = Writer::new()
        .str(shared.camera.as_str())
        .u16(shared.native.0)
        .u16(shared.native.1)
        .u16(shared.native.2)
        .str(&own_addr.to_string())
        .finish();
    write_frame(&mut stream, &RpcFrame::new(MsgType::Register, 1, body))?;
    let reply = read_frame(&mut stream)?;
    match reply.msg_type {
        MsgType::Ack => Ok(()),
        MsgType::Error => Err(crate::client::remote_error(&reply.body)),
        other => Err(BrokerError::Unexpected(other)),
    }
}

fn unregister_from_edge(shared: &Arc<CamShared>, edge: SocketAddr) -> Result<(), BrokerError> {
    let mut stream = crate::client::connect_with_retry(
        edge,
        messages::ROLE_PUBLISHER,
        shared.credentials.as_deref(),
        shared.timeouts.subscribe,
        &RetryPolicy::none(),
    )?
    .0;
    let body = Writer::new().str(shared.camera.as_str()).finish();
    write_frame(&mut stream, &RpcFrame::new(MsgType::Unregister, 1, body))?;
    let _ = read_frame(&mut stream);
    Ok(())
}

fn accept_loop(shared: Arc<CamShared>, listener: TcpListener) {
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                let _ = std::thread::Builder::new()
                    .name(format!("cam-{}-session", shared.camera))
                    .spawn(move || {
                        if let Err(e) = session(shared, stream) {
                            log::debug!("camera session ended: {e}");
                        }
                    });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                log::warn!("camera accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn now_micros() -> u64 {
    Timestamp::now().micros()
}

fn send_error(
    stream: &mut TcpStream,
    request_id: u64,
    code: u16,
    msg: &str,
) -> Result<(), WireError> {
    let body = Writer::new().u16(code).str(msg).finish();
    write_frame(stream, &RpcFrame::new(MsgType::Error, request_id, body))
}

fn session(shared: Arc<CamShared>, mut stream: TcpStream) -> Result<(), BrokerError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;

    // handshake
    let hello = loop {
        match read_frame(&mut stream) {
            Ok(f) => break f,
            Err(WireError::Timeout) => {
                if shared.stop.load(Ordering::Relaxed) {
                    return Ok(());
                }
            }
            Err(e) => return Err(e.into()),
        }
    };
    if hello.msg_type != MsgType::Connect {
        send_error(
            &mut stream,
            hello.request_id,
            messages::ERR_BAD_REQUEST,
            "expected Connect",
        )?;
        return Ok(());
    }
    let mut r = Reader::new(&hello.body);
    let _role = r.u8()?;
    let creds = r.str()?;
    if let Some(secret) = &shared.credentials {
        if creds != secret {
            send_error(
                &mut stream,
                hello.request_id,
                messages::ERR_AUTH_FAILED,
                "bad credentials",
            )?;
            return Ok(());
        }
    }
    let client_id = format!(
        "{}-c{}",
        shared.camera,
        shared.next_client.fetch_add(1, Ordering::Relaxed)
    );
    write_frame(
        &mut stream,
        &RpcFrame::new(
            MsgType::ConnectAck,
            hello.request_id,
            Writer::new().str(&client_id).finish(),
        ),
    )?;

    loop {
        if shared.stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(WireError::Timeout) => continue,
            Err(WireError::Closed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        if shared.stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match frame.msg_type {
            MsgType::Publish => handle_publish(&shared, &mut stream, &frame)?,
            MsgType::SetTarget => handle_set_target(&shared, &mut stream, &frame)?,
            MsgType::Subscribe => {
                transfer_session(&shared, &mut stream, &frame)?;
                return Ok(());
            }
            MsgType::Unsubscribe => {
                let body = Writer::new()
                    .u64(0)
                    .u8(messages::ACK_CANCELLED)
                    .u64(now_micros())
                    .finish();
                write_frame(
                    &mut stream,
                    &RpcFrame::new(MsgType::Ack, frame.request_id, body),
                )?;
            }
            other => {
                send_error(
                    &mut stream,
                    frame.request_id,
                    messages::ERR_BAD_REQUEST,
                    &format!("unsupported on camera broker: {other:?}"),
                )?;
            }
        }
    }
}

fn handle_publish(
    shared: &Arc<CamShared>,
    stream: &mut TcpStream,
    rpc: &RpcFrame,
) -> Result<(), BrokerError> {
    // full validation on ingest; downstream paths trust the stored bytes
    let (frame, used) = match codec::deserialize_frame(&rpc.body) {
        Ok(v) => v,
        Err(e) => {
            send_error(
                stream,
                rpc.request_id,
                messages::ERR_BAD_REQUEST,
                &e.to_string(),
            )?;
            return Ok(());
        }
    };
    if used != rpc.body.len() || frame.camera_id() != &shared.camera {
        send_error(
            stream,
            rpc.request_id,
            messages::ERR_BAD_REQUEST,
            "frame/camera mismatch",
        )?;
        return Ok(());
    }
    let outcome = shared
        .log
        .append_encoded(frame.ts(), rpc.body.clone().into());
    let status = match outcome {
        Ok(AppendOutcome::Appended) => {
            shared
                .stats
                .frames_published
                .fetch_add(1, Ordering::Relaxed);
            let mut times = shared.append_times.lock();
            times.0.insert(frame.ts().micros(), now_micros());
            times.1.push_back(frame.ts().micros());
            if times.1.len() > APPEND_TIME_CAPACITY {
                if let Some(old) = times.1.pop_front() {
                    times.0.remove(&old);
                }
            }
            messages::PUBLISH_ACCEPTED
        }
        Ok(AppendOutcome::RejectedStale) => {
            shared.stats.stale_rejected.fetch_add(1, Ordering::Relaxed);
            messages::PUBLISH_REJECTED_STALE
        }
        Err(e) => {
            send_error(
                stream,
                rpc.request_id,
                messages::ERR_BAD_REQUEST,
                &e.to_string(),
            )?;
            return Ok(());
        }
    };
    let body = Writer::new().u8(status).finish();
    write_frame(
        stream,
        &RpcFrame::new(MsgType::PublishAck, rpc.request_id, body),
    )?;
    Ok(())
}

fn handle_set_target(
    shared: &Arc<CamShared>,
    stream: &mut TcpStream,
    rpc: &RpcFrame,
) -> Result<(), BrokerError> {
    let mut r = Reader::new(&rpc.body);
    let camera = messages::camera_id(&mut r)?;
    let bound = messages::qos_bound(&mut r)?;
    if camera != shared.camera {
        send_error(
            stream,
            rpc.request_id,
            messages::ERR_UNKNOWN_CAMERA,
            camera.as_str(),
        )?;
        return Ok(());
    }
    shared
        .controller
        .lock()
        .set_target(bound, &shared.model, &shared.profile)?;
    log::info!(
        "camera {} target set: latency<= {} ms accuracy>= {} %",
        shared.camera,
        bound.latency_max_ms(),
        bound.accuracy_min_pct()
    );
    let body = Writer::new()
        .u64(0)
        .u8(messages::ACK_OK)
        .u64(now_micros())
        .finish();
    write_frame(stream, &RpcFrame::new(MsgType::Ack, rpc.request_id, body))?;
    Ok(())
}

/// Upstream transfer: stream post-controller frames from the local log to
/// the edge replica, one ack per frame; the ack's receive timestamp is the
/// controller's latency sample.
fn transfer_session(
    shared: &Arc<CamShared>,
    stream: &mut TcpStream,
    rpc: &RpcFrame,
) -> Result<(), BrokerError> {
    let mut r = Reader::new(&rpc.body);
    let camera = messages::camera_id(&mut r)?;
    let begin = r.u64()?;
    let end = r.u64()?;
    if camera != shared.camera {
        send_error(
            stream,
            rpc.request_id,
            messages::ERR_UNKNOWN_CAMERA,
            camera.as_str(),
        )?;
        return Ok(());
    }
    let ack = Writer::new()
        .u64(rpc.request_id)
        .u8(messages::ACK_OK)
        .u64(now_micros())
        .finish();
    write_frame(stream, &RpcFrame::new(MsgType::Ack, rpc.request_id, ack))?;
    stream.set_read_timeout(Some(shared.timeouts.subscribe))?;

    let mut next = begin;
    loop {
        if shared.stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        let batch = shared
            .log
            .get_range(Timestamp::from_micros(next), Timestamp::from_micros(end))?;
        if batch.entries.is_empty() {
            shared.log.wait_for_newer(
                next.checked_sub(1).map(Timestamp::from_micros),
                Duration::from_millis(100),
            );
            continue;
        }
        for frame in batch.entries {
            let ts = frame.ts().micros();
            next = ts + 1;
            if shared.stop.load(Ordering::Relaxed) {
                return Ok(());
            }

            let started = Instant::now();
            let processed = {
                let controller = shared.controller.lock();
                let mut diff = shared.diff_state.lock();
                controller.process_frame(&frame, &mut diff)
            };
            let controller_micros = started.elapsed().as_micros() as u32;
            let modified = match processed {
                Ok(Some(f)) => f,
                Ok(None) => {
                    shared.stats.frames_dropped.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
                Err(e) => {
                    log::warn!("knob pipeline failed on frame {ts}: {e}");
                    continue;
                }
            };
            let bytes = codec::serialize_frame(&modified);
            let cam_append_micros = shared.append_times.lock().0.get(&ts).copied().unwrap_or(ts);
            let cam_send_micros = now_micros();
            let timing = messages::DeliveryTiming {
                cam_append_micros,
                controller_micros,
                cam_send_micros,
                edge_recv_micros: 0,
                edge_send_micros: 0,
            };
            let body = messages::encode_delivery(&timing, &bytes);
            write_frame(stream, &RpcFrame::new(MsgType::FrameDelivery, ts, body))?;
            shared
                .stats
                .frames_transferred
                .fetch_add(1, Ordering::Relaxed);
            shared
                .stats
                .bytes_transferred
                .fetch_add(bytes.len() as u64, Ordering::Relaxed);

            // wait for the edge's ack; its timestamp is our latency sample
            let ack = loop {
                match read_frame(stream) {
                    Ok(f) if f.msg_type == MsgType::Ack => break f,
                    Ok(f) if f.msg_type == MsgType::Unsubscribe => {
                        let body = Writer::new()
                            .u64(rpc.request_id)
                            .u8(messages::ACK_CANCELLED)
                            .u64(now_micros())
                            .finish();
                        let _ =
                            write_frame(stream, &RpcFrame::new(MsgType::Ack, f.request_id, body));
                        return Ok(());
                    }
                    Ok(f) if f.msg_type == MsgType::SetTarget => {
                        handle_set_target(shared, stream, &f)?;
                    }
                    Ok(other) => return Err(BrokerError::Unexpected(other.msg_type)),
                    // edge presumed failed; end the transfer
                    Err(WireError::Timeout) => return Ok(()),
                    Err(WireError::Closed) => return Ok(()),
                    Err(e) => return Err(e.into()),
                }
            };
            let mut ar = Reader::new(&ack.body);
            let _subject = ar.u64()?;
            let _status = ar.u8()?;
            let edge_recv_micros = ar.u64()?;
            let latency_ms = (edge_recv_micros.saturating_sub(cam_send_micros)) as f64 / 1_000.0;

            let mut controller = shared.controller.lock();
            controller.observe_latency(latency_ms);
            let before = *controller.current_setting();
            match controller.control_step(&shared.profile) {
                ControlDecision::Adjusted { setting, .. } if setting != before => {
                    let event = ControlEvent::KnobChange {
                        ts: Timestamp::from_micros(ts),
                        setting,
                        p95_ms: controller.p95_ms().unwrap_or(latency_ms),
                    };
                    log::info!("{event}");
                }
                ControlDecision::Infeasible { best_accuracy_pct } => {
                    shared
                        .stats
                        .infeasible_notices
                        .fetch_add(1, Ordering::Relaxed);
                    let event = ControlEvent::Infeasible {
                        ts: Timestamp::from_micros(ts),
                        best_accuracy_pct,
                    };
                    log::info!("{event}");
                    drop(controller);
                    let body = Writer::new()
                        .u64(rpc.request_id)
                        .f64(best_accuracy_pct)
                        .finish();
                    write_frame(stream, &RpcFrame::new(MsgType::InfeasibleNotice, ts, body))?;
                }
                _ => {}
            }
        }
    }
}
