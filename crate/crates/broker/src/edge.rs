//! Edge broker: camera registry, per-camera replica logs, subscriber
//! sessions, and on-demand upstream transfer management.
//!
//! Delivery contract per subscription: timestamps strictly ascending, each
//! frame at most once, bounded ranges acknowledged with an end-of-stream
//! ack. With zero active subscriptions for a camera, no transfer connection
//! exists and no frame bytes cross the camera link. On restart the broker
//! first reconstructs replica logs from persisted segments (CRC-checked)
//! and then accepts connections; subscribers resume by re-subscribing from
//! their last received timestamp.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};

use framebus_core::codec;
use framebus_core::memlog::{AppendOutcome, LogConfig, MemLog, RecoveryReport};
use framebus_core::{CameraId, QosBound, Timestamp};

use crate::config::{RetryPolicy, TimeoutPolicy};
use crate::messages::{self, CameraInfo, DeliveryTiming, Reader, Writer};
use crate::wire::{read_frame, write_frame, MsgType, RpcFrame, WireError};
use crate::BrokerError;

const TIMING_CAPACITY: usize = 4096;
/// Consecutive upstream read timeouts before the camera is declared failed.
const TRANSFER_TIMEOUT_STRIKES: u32 = 3;

pub struct EdgeConfig {
    pub listen: SocketAddr,
    pub log: LogConfig,
    pub timeouts: TimeoutPolicy,
    pub retry: RetryPolicy,
    pub credentials: Option<String>,
}

impl EdgeConfig {
    pub fn new(log: LogConfig) -> Self {
        EdgeConfig {
            listen: "127.0.0.1:0".parse().unwrap(),
            log,
            timeouts: TimeoutPolicy::default(),
            retry: RetryPolicy::default(),
            credentials: None,
        }
    }
}

struct SubEntry {
    bound: QosBound,
    begin: u64,
    cancel: Arc<AtomicBool>,
}

struct TransferState {
    running: bool,
    stop: Arc<AtomicBool>,
    thread: Option<std::thread::JoinHandle<()>>,
    /// Control connection for SetTarget pushes; opened with the transfer.
    control: Option<TcpStream>,
}

impl Default for TransferState {
    fn default() -> Self {
        TransferState {
            running: false,
            stop: Arc::new(AtomicBool::new(false)),
            thread: None,
            control: None,
        }
    }
}

struct CameraState {
    camera: CameraId,
    info: Mutex<Option<CameraInfo>>,
    endpoint: Mutex<Option<SocketAddr>>,
    replica: MemLog,
    subs: Mutex<HashMap<u64, SubEntry>>,
    transfer: Mutex<TransferState>,
    timing: Mutex<(
        HashMap<u64, DeliveryTiming>,
        std::collections::VecDeque<u64>,
    )>,
    infeasible_seq: AtomicU64,
    infeasible_best: Mutex<f64>,
}

impl CameraState {
    fn new(camera: CameraId, replica: MemLog) -> Self {
        CameraState {
            camera,
            info: Mutex::new(None),
            endpoint: Mutex::new(None),
            replica,
            subs: Mutex::new(HashMap::new()),
            transfer: Mutex::new(TransferState::default()),
            timing: Mutex::new((HashMap::new(), std::collections::VecDeque::new())),
            infeasible_seq: AtomicU64::new(0),
            infeasible_best: Mutex::new(0.0),
        }
    }

    fn record_timing(&self, ts: u64, timing: DeliveryTiming) {
        let mut t = self.timing.lock();
        t.0.insert(ts, timing);
        t.1.push_back(ts);
        if t.1.len() > TIMING_CAPACITY {
            if let Some(old) = t.1.pop_front() {
                t.0.remove(&old);
            }
        }
    }

    /// Strictest latency bound and highest accuracy floor across active
    /// subscriptions, if any.
    fn composite_bound(&self) -> Option<QosBound> {
        let subs = self.subs.lock();
        subs.values()
            .map(|s| s.bound)
            .reduce(|a, b| a.strictest(&b))
    }
}

struct EdgeShared {
    log_config: LogConfig,
    timeouts: TimeoutPolicy,
    retry: RetryPolicy,
    credentials: Option<String>,
    registry: RwLock<HashMap<CameraId, Arc<CameraState>>>,
    next_client: AtomicU64,
    next_sub: AtomicU64,
    stop: AtomicBool,
}

pub struct EdgeBroker;

impl EdgeBroker {
    pub fn start(config: EdgeConfig) -> Result<EdgeHandle, BrokerError> {
        // recovery first, then accept connections
        let mut registry = HashMap::new();
        let mut recovery = RecoveryReport::default();
        if config.log.persist_dir.is_some() {
            let (logs, report) = MemLog::recover_all(config.log.clone())?;
            recovery = report;
            for (camera, replica) in logs {
                registry.insert(camera.clone(), Arc::new(CameraState::new(camera, replica)));
            }
        }

        let listener = TcpListener::bind(config.listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;

        let shared = Arc::new(EdgeShared {
            log_config: config.log,
            timeouts: config.timeouts,
            retry: config.retry,
            credentials: config.credentials,
            registry: RwLock::new(registry),
            next_client: AtomicU64::new(1),
            next_sub: AtomicU64::new(1),
            stop: AtomicBool::new(false),
        });

        let accept_shared = shared.clone();
        let accept_thread = std::thread::Builder::new()
            .name("edge-accept".into())
            .spawn(move || accept_loop(accept_shared, listener))?;

        Ok(EdgeHandle {
            addr,
            shared,
            accept_thread: Some(accept_thread),
            recovery,
        })
    }
}

pub struct EdgeHandle {
    addr: SocketAddr,
    shared: Arc<EdgeShared>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
    recovery: RecoveryReport,
}

impl EdgeHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn recovery_report(&self) -> RecoveryReport {
        self.recovery
    }

    pub fn camera_count(&self) -> usize {
        self.shared.registry.read().len()
    }

    /// Replica log handle for a camera (test and tooling access).
    pub fn replica(&self, camera: &CameraId) -> Option<MemLog> {
        self.shared
            .registry
            .read()
            .get(camera)
            .map(|c| c.replica.clone())
    }

    /// Graceful stop: flush replica logs so even the active segments
    /// survive restart.
    pub fn shutdown(mut self) {
        {
            let registry = self.shared.registry.read();
            for cam in registry.values() {
                stop_transfer(cam);
                cam.replica.flush();
                cam.replica.sync_persistence();
            }
        }
        self.stop_and_join();
    }

    /// Abrupt stop without flushing, for fault-injection tests.
    pub fn kill(mut self) {
        {
            let registry = self.shared.registry.read();
            for cam in registry.values() {
                stop_transfer(cam);
            }
        }
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EdgeHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn now_micros() -> u64 {
    Timestamp::now().micros()
}

fn accept_loop(shared: Arc<EdgeShared>, listener: TcpListener) {
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                let _ = std::thread::Builder::new()
                    .name("edge-session".into())
                    .spawn(move || {
                        if let Err(e) = session(shared, stream) {
                            log::debug!("edge session ended: {e}");
                        }
                    });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                log::warn!("edge accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
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

fn session(shared: Arc<EdgeShared>, mut stream: TcpStream) -> Result<(), BrokerError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;

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
        "edge-c{}",
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
            MsgType::Register => handle_register(&shared, &mut stream, &frame)?,
            MsgType::Unregister => handle_unregister(&shared, &mut stream, &frame)?,
            MsgType::GetCameraInfo => handle_camera_info(&shared, &mut stream, &frame)?,
            MsgType::Subscribe => {
                subscriber_session(&shared, stream, frame)?;
                return Ok(());
            }
            MsgType::Unsubscribe => {
                send_error(
                    &mut stream,
                    frame.request_id,
                    messages::ERR_UNKNOWN_SUBSCRIPTION,
                    "no active subscription on this connection",
                )?;
            }
            other => {
                send_error(
                    &mut stream,
                    frame.request_id,
                    messages::ERR_BAD_REQUEST,
                    &format!("unsupported on edge broker: {other:?}"),
                )?;
            }
        }
    }
}

fn handle_register(
    shared: &Arc<EdgeShared>,
    stream: &mut TcpStream,
    rpc: &RpcFrame,
) -> Result<(), BrokerError> {
    let mut r = Reader::new(&rpc.body);
    let camera = messages::camera_id(&mut r)?;
    let width = r.u16()?;
    let height = r.u16()?;
    let fps = r.u16()?;
    let endpoint: SocketAddr = r
        .str()?
        .parse()
        .map_err(|_| BrokerError::Wire(WireError::Io(std::io::Error::other("bad endpoint"))))?;

    {
        let mut registry = shared.registry.write();
        let state = registry.entry(camera.clone()).or_insert_with(|| {
            let replica = MemLog::new(shared.log_config.clone()).expect("validated log config");
            Arc::new(CameraState::new(camera.clone(), replica))
        });
        if state.endpoint.lock().is_some() {
            drop(registry);
            send_error(
                stream,
                rpc.request_id,
                messages::ERR_DUPLICATE_CAMERA,
                camera.as_str(),
            )?;
            return Ok(());
        }
        *state.info.lock() = Some(CameraInfo {
            camera: camera.clone(),
            width,
            height,
            fps,
        });
        *state.endpoint.lock() = Some(endpoint);
    }
    log::info!("camera {camera} registered at {endpoint}");
    let body = Writer::new()
        .u64(0)
        .u8(messages::ACK_OK)
        .u64(now_micros())
        .finish();
    write_frame(stream, &RpcFrame::new(MsgType::Ack, rpc.request_id, body))?;
    Ok(())
}

fn handle_unregister(
    shared: &Arc<EdgeShared>,
    stream: &mut TcpStream,
    rpc: &RpcFrame,
) -> Result<(), BrokerError> {
    let mut r = Reader::new(&rpc.body);
    let camera = messages::camera_id(&mut r)?;
    let removed = shared.registry.write().remove(&camera);
    match removed {
        Some(state) => {
            stop_transfer(&state);
            for sub in state.subs.lock().values() {
                sub.cancel.store(true, Ordering::Relaxed);
            }
            log::info!("camera {camera} unregistered");
            let body = Writer::new()
                .u64(0)
                .u8(messages::ACK_OK)
                .u64(now_micros())
                .finish();
            write_frame(stream, &RpcFrame::new(MsgType::Ack, rpc.request_id, body))?;
        }
        None => {
            send_error(
                stream,
                rpc.request_id,
                messages::ERR_UNKNOWN_CAMERA,
                camera.as_str(),
            )?;
        }
    }
    Ok(())
}

fn handle_camera_info(
    shared: &Arc<EdgeShared>,
    stream: &mut TcpStream,
    rpc: &RpcFrame,
) -> Result<(), BrokerError> {
    let cams: Vec<CameraInfo> = {
        let registry = shared.registry.read();
        let mut v: Vec<CameraInfo> = registry
            .values()
            .filter_map(|c| c.info.lock().clone())
            .collect();
        v.sort_by(|a, b| a.camera.cmp(&b.camera));
        v
    };
    let body = messages::encode_camera_info_resp(&cams);
    write_frame(
        stream,
        &RpcFrame::new(MsgType::CameraInfoResp, rpc.request_id, body),
    )?;
    Ok(())
}

/// Serve one subscription to completion on this connection.
fn subscriber_session(
    shared: &Arc<EdgeShared>,
    mut stream: TcpStream,
    rpc: RpcFrame,
) -> Result<(), BrokerError> {
    let mut r = Reader::new(&rpc.body);
    let camera = messages::camera_id(&mut r)?;
    let begin = r.u64()?;
    let end = r.u64()?;
    let bound = messages::qos_bound(&mut r)?;

    let Some(cam_state) = shared.registry.read().get(&camera).cloned() else {
        send_error(
            &mut stream,
            rpc.request_id,
            messages::ERR_UNKNOWN_CAMERA,
            camera.as_str(),
        )?;
        return Ok(());
    };

    let sub_id = shared.next_sub.fetch_add(1, Ordering::Relaxed);
    let cancel = Arc::new(AtomicBool::new(false));
    cam_state.subs.lock().insert(
        sub_id,
        SubEntry {
            bound,
            begin,
            cancel: cancel.clone(),
        },
    );
    ensure_transfer(shared, &cam_state);
    push_composite_target(&cam_state);

    let ack = Writer::new()
        .u64(sub_id)
        .u8(messages::ACK_OK)
        .u64(now_micros())
        .finish();
    write_frame(
        &mut stream,
        &RpcFrame::new(MsgType::Ack, rpc.request_id, ack),
    )?;

    // companion reader: watches for Unsubscribe or disconnect
    let done = Arc::new(AtomicBool::new(false));
    let reader_cancel = cancel.clone();
    let reader_done = done.clone();
    let reader_stream = stream.try_clone()?;
    let reader = std::thread::Builder::new()
        .name("edge-sub-reader".into())
        .spawn(move || {
            let mut s = reader_stream;
            let _ = s.set_read_timeout(Some(Duration::from_millis(100)));
            loop {
                if reader_done.load(Ordering::Relaxed) {
                    return;
                }
                match read_frame(&mut s) {
                    Ok(f) if f.msg_type == MsgType::Unsubscribe => {
                        reader_cancel.store(true, Ordering::Relaxed);
                        return;
                    }
                    Ok(_) => {}
                    Err(WireError::Timeout) => {}
                    Err(_) => {
                        reader_cancel.store(true, Ordering::Relaxed);
                        return;
                    }
                }
            }
        })?;

    let result = deliver_loop(shared, &cam_state, &mut stream, sub_id, begin, end, &cancel);

    done.store(true, Ordering::Relaxed);
    let _ = reader.join();
    cam_state.subs.lock().remove(&sub_id);
    if cam_state.subs.lock().is_empty() {
        stop_transfer(&cam_state);
    } else {
        push_composite_target(&cam_state);
    }
    result
}

fn deliver_loop(
    shared: &Arc<EdgeShared>,
    cam_state: &Arc<CameraState>,
    stream: &mut TcpStream,
    sub_id: u64,
    begin: u64,
    end: u64,
    cancel: &AtomicBool,
) -> Result<(), BrokerError> {
    let mut next = begin;
    let mut seen_infeasible = cam_state.infeasible_seq.load(Ordering::Relaxed);
    loop {
        if shared.stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        if cancel.load(Ordering::Relaxed) {
            let body = Writer::new()
                .u64(sub_id)
                .u8(messages::ACK_CANCELLED)
                .u64(now_micros())
                .finish();
            let _ = write_frame(stream, &RpcFrame::new(MsgType::Ack, sub_id, body));
            return Ok(());
        }

        let seq = cam_state.infeasible_seq.load(Ordering::Relaxed);
        if seq != seen_infeasible {
            seen_infeasible = seq;
            let best = *cam_state.infeasible_best.lock();
            let body = Writer::new().u64(sub_id).f64(best).finish();
            write_frame(
                stream,
                &RpcFrame::new(MsgType::InfeasibleNotice, sub_id, body),
            )?;
        }

        let batch = if next <= end {
            cam_state
                .replica
                .get_range_encoded(Timestamp::from_micros(next), Timestamp::from_micros(end))?
                .entries
        } else {
            Vec::new()
        };
        for (ts, bytes) in batch {
            let t = ts.micros();
            next = t + 1;
            let body = messages::encode_delivery(&delivery_timing(cam_state, t), &bytes);
            write_frame(stream, &RpcFrame::new(MsgType::FrameDelivery, t, body))?;
            if cancel.load(Ordering::Relaxed) {
                break;
            }
        }

        // a bounded range is complete once no frame at or before `end` can
        // ever be appended again (appends are strictly ascending)
        if end != messages::END_OPEN {
            let no_more = next > end
                || cam_state
                    .replica
                    .last_ts()
                    .is_some_and(|l| l.micros() > end);
            if no_more {
                // drain anything that landed between the batch query and
                // the completion check
                if next <= end {
                    let rest = cam_state.replica.get_range_encoded(
                        Timestamp::from_micros(next),
                        Timestamp::from_micros(end),
                    )?;
                    for (ts, bytes) in rest.entries {
                        let t = ts.micros();
                        let body = messages::encode_delivery(&delivery_timing(cam_state, t), &bytes);
                        write_frame(stream, &RpcFrame::new(MsgType::FrameDelivery, t, body))?;
                    }
                }
                let body = Writer::new()
                    .u64(sub_id)
                    .u8(messages::ACK_ENDED)
                    .u64(now_micros())
                    .finish();
                write_frame(stream, &RpcFrame::new(MsgType::Ack, sub_id, body))?;
                return Ok(());
            }
        }

        cam_state.replica.wait_for_newer(
            next.checked_sub(1).map(Timestamp::from_micros),
            Duration::from_millis(100),
        );
    }
}

/// Timing block for a frame about to be fanned out. Frames without a live
/// transfer record (recovered from disk, or whose record aged out) charge
/// their whole pre-edge age to the network stage so stage sums still add up
/// to the end-to-end latency.
fn delivery_timing(cam_state: &CameraState, ts: u64) -> DeliveryTiming {
    let now = now_micros();
    let mut timing = match cam_state.timing.lock().0.get(&ts) {
        Some(t) => *t,
        None => DeliveryTiming {
            cam_append_micros: ts,
            controller_micros: 0,
            cam_send_micros: ts,
            edge_recv_micros: now,
            edge_send_micros: 0,
        },
    };
    timing.edge_send_micros = now;
    timing
}

/// Start the upstream transfer if it is not running and the camera has a
/// known endpoint.
fn ensure_transfer(shared: &Arc<EdgeShared>, cam_state: &Arc<CameraState>) {
    let mut transfer = cam_state.transfer.lock();
    if transfer.running {
        return;
    }
    let Some(endpoint) = *cam_state.endpoint.lock() else {
        return; // recovered camera, not re-registered: replica-only service
    };
    let stop = Arc::new(AtomicBool::new(false));
    transfer.stop = stop.clone();
    transfer.running = true;

    // control connection for SetTarget pushes
    transfer.control = open_control_conn(shared, endpoint).ok();

    let shared = shared.clone();
    let cam = cam_state.clone();
    let thread = std::thread::Builder::new()
        .name(format!("edge-transfer-{}", cam_state.camera))
        .spawn(move || {
            if let Err(e) = transfer_loop(&shared, &cam, endpoint, &stop) {
                log::warn!("transfer for {} ended: {e}", cam.camera);
            }
            cam.transfer.lock().running = false;
        });
    transfer.thread = thread.ok();
}

fn open_control_conn(
    shared: &Arc<EdgeShared>,
    endpoint: SocketAddr,
) -> Result<TcpStream, BrokerError> {
    let (stream, _) = crate::client::connect_with_retry(
        endpoint,
        messages::ROLE_SUBSCRIBER,
        shared.credentials.as_deref(),
        shared.timeouts.control,
        &RetryPolicy::none(),
    )?;
    Ok(stream)
}

/// Push the composite QoS bound (strictest latency, highest accuracy floor)
/// to the camera's controller.
fn push_composite_target(cam_state: &Arc<CameraState>) {
    let Some(bound) = cam_state.composite_bound() else {
        return;
    };
    let mut transfer = cam_state.transfer.lock();
    let Some(control) = transfer.control.as_mut() else {
        return;
    };
    let body = Writer::new()
        .str(cam_state.camera.as_str())
        .f64(bound.latency_max_ms())
        .f64(bound.accuracy_min_pct())
        .finish();
    let ok = write_frame(control, &RpcFrame::new(MsgType::SetTarget, 1, body)).is_ok()
        && matches!(read_frame(control), Ok(f) if f.msg_type == MsgType::Ack);
    if !ok {
        log::warn!("SetTarget push to {} failed", cam_state.camera);
        transfer.control = None;
    }
}

fn stop_transfer(cam_state: &Arc<CameraState>) {
    let mut transfer = cam_state.transfer.lock();
    transfer.stop.store(true, Ordering::Relaxed);
    transfer.control = None;
    if let Some(t) = transfer.thread.take() {
        drop(transfer);
        let _ = t.join();
    }
}

/// Upstream transfer: subscribe on the camera broker and replicate its
/// post-controller frame stream into the replica log, acking every frame
/// with the local receive timestamp (the camera's latency sample).
fn transfer_loop(
    shared: &Arc<EdgeShared>,
    cam_state: &Arc<CameraState>,
    endpoint: SocketAddr,
    stop: &AtomicBool,
) -> Result<(), BrokerError> {
    // resume after the newest replicated frame, or start at the earliest
    // begin any active subscriber asked for
    let begin = match cam_state.replica.last_ts() {
        Some(t) => t.micros() + 1,
        None => cam_state
            .subs
            .lock()
            .values()
            .map(|s| s.begin)
            .min()
            .unwrap_or(0),
    };

    let (mut stream, _) = crate::client::connect_with_retry(
        endpoint,
        messages::ROLE_SUBSCRIBER,
        shared.credentials.as_deref(),
        shared.timeouts.subscribe,
        &shared.retry.clone(),
    )?;
    let body = Writer::new()
        .str(cam_state.camera.as_str())
        .u64(begin)
        .u64(messages::END_OPEN)
        .finish();
    write_frame(&mut stream, &RpcFrame::new(MsgType::Subscribe, 1, body))?;
    match read_frame(&mut stream) {
        Ok(f) if f.msg_type == MsgType::Ack => {}
        Ok(f) if f.msg_type == MsgType::Error => return Err(crate::client::remote_error(&f.body)),
        Ok(f) => return Err(BrokerError::Unexpected(f.msg_type)),
        Err(e) => return Err(e.into()),
    }
    stream.set_read_timeout(Some(shared.timeouts.subscribe))?;

    let mut strikes = 0u32;
    loop {
        if stop.load(Ordering::Relaxed) {
            let _ = write_frame(
                &mut stream,
                &RpcFrame::new(MsgType::Unsubscribe, 1, Writer::new().u64(1).finish()),
            );
            return Ok(());
        }
        let frame = match read_frame(&mut stream) {
            Ok(f) => {
                strikes = 0;
                f
            }
            Err(WireError::Timeout) => {
                strikes += 1;
                if strikes >= TRANSFER_TIMEOUT_STRIKES {
                    // camera presumed failed (timeout-based detection)
                    log::warn!("camera {} timed out; marking offline", cam_state.camera);
                    *cam_state.endpoint.lock() = None;
                    return Ok(());
                }
                continue;
            }
            Err(WireError::Closed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        match frame.msg_type {
            MsgType::FrameDelivery => {
                let recv_micros = now_micros();
                let (mut timing, frame_bytes) = messages::decode_delivery(&frame.body)?;
                let header = codec::peek_frame(frame_bytes)?;
                timing.edge_recv_micros = recv_micros;
                match cam_state
                    .replica
                    .append_encoded(header.ts, frame_bytes.to_vec().into())
                {
                    Ok(AppendOutcome::Appended) => {
                        cam_state.record_timing(header.ts.micros(), timing);
                    }
                    Ok(AppendOutcome::RejectedStale) => {
                        log::debug!("stale transfer frame {} ignored", header.ts);
                    }
                    Err(e) => log::warn!("replica append failed: {e}"),
                }
                let ack = Writer::new()
                    .u64(header.ts.micros())
                    .u8(messages::ACK_OK)
                    .u64(recv_micros)
                    .finish();
                write_frame(
                    &mut stream,
                    &RpcFrame::new(MsgType::Ack, frame.request_id, ack),
                )?;
            }
            MsgType::InfeasibleNotice => {
                let mut r = Reader::new(&frame.body);
                let _sub = r.u64()?;
                let best = r.f64()?;
                *cam_state.infeasible_best.lock() = best;
                cam_state.infeasible_seq.fetch_add(1, Ordering::Relaxed);
            }
            MsgType::Ack => {}
            other => {
                log::debug!("unexpected transfer message {other:?}");
            }
        }
    }
}
