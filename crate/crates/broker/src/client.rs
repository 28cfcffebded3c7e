//! Client-side API: publisher and subscriber connections, with
//! timeout-based failure detection and bounded reconnect.

use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use framebus_core::codec;
use framebus_core::{CameraId, Frame, QosBound, Timestamp};

use crate::config::RetryPolicy;
use crate::messages::{self, CameraInfo, DeliveryTiming, Reader, Writer};
use crate::wire::{read_frame, write_frame, MsgType, RpcFrame, WireError};
use crate::BrokerError;

pub(crate) fn remote_error(body: &[u8]) -> BrokerError {
    let mut r = Reader::new(body);
    let code = r.u16().unwrap_or(0);
    let message = r.str().unwrap_or("").to_string();
    match code {
        messages::ERR_AUTH_FAILED => BrokerError::AuthFailed,
        messages::ERR_UNKNOWN_CAMERA => BrokerError::UnknownCamera(message),
        messages::ERR_DUPLICATE_CAMERA => BrokerError::DuplicateCamera(message),
        messages::ERR_UNKNOWN_SUBSCRIPTION => {
            BrokerError::UnknownSubscription(message.parse().unwrap_or(0))
        }
        _ => BrokerError::Remote { code, message },
    }
}

/// Connect and complete the Connect/ConnectAck handshake. One initial
/// attempt plus `retry.retries` more with fixed backoff; exhausting them
/// yields `GaveUp`.
pub fn connect_with_retry(
    addr: SocketAddr,
    role: u8,
    credentials: Option<&str>,
    read_timeout: Duration,
    retry: &RetryPolicy,
) -> Result<(TcpStream, String), BrokerError> {
    let attempts = retry.attempts();
    let mut last: Option<BrokerError> = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(retry.backoff);
        }
        match try_connect(addr, role, credentials, read_timeout) {
            Ok(ok) => return Ok(ok),
            // auth and protocol rejections are not retried
            Err(BrokerError::AuthFailed) => return Err(BrokerError::AuthFailed),
            Err(e) => last = Some(e),
        }
    }
    match last {
        Some(BrokerError::AuthFailed) => Err(BrokerError::AuthFailed),
        _ => Err(BrokerError::GaveUp { attempts }),
    }
}

fn try_connect(
    addr: SocketAddr,
    role: u8,
    credentials: Option<&str>,
    read_timeout: Duration,
) -> Result<(TcpStream, String), BrokerError> {
    let mut stream =
        TcpStream::connect_timeout(&addr, read_timeout.max(Duration::from_millis(100)))?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(read_timeout))?;
    let body = Writer::new()
        .u8(role)
        .str(credentials.unwrap_or(""))
        .finish();
    write_frame(&mut stream, &RpcFrame::new(MsgType::Connect, 1, body))?;
    let reply = read_frame(&mut stream)?;
    match reply.msg_type {
        MsgType::ConnectAck => {
            let mut r = Reader::new(&reply.body);
            let id = r.str()?.to_string();
            Ok((stream, id))
        }
        MsgType::Error => Err(remote_error(&reply.body)),
        other => Err(BrokerError::Unexpected(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublishOutcome {
    Accepted,
    RejectedStale,
}

/// Publisher connection to a camera-node broker.
#[derive(Debug)]
pub struct PublisherClient {
    stream: TcpStream,
    client_id: String,
    next_request: u64,
}

impl PublisherClient {
    pub fn connect(
        addr: SocketAddr,
        credentials: Option<&str>,
        publish_timeout: Duration,
        retry: &RetryPolicy,
    ) -> Result<Self, BrokerError> {
        let (stream, client_id) = connect_with_retry(
            addr,
            messages::ROLE_PUBLISHER,
            credentials,
            publish_timeout,
            retry,
        )?;
        Ok(PublisherClient {
            stream,
            client_id,
            next_request: 2,
        })
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    /// Push one frame; a response slower than the publish timeout surfaces
    /// as `WireError::Timeout`, the camera-failure signal.
    pub fn publish(&mut self, frame: &Frame) -> Result<PublishOutcome, BrokerError> {
        self.publish_encoded(&codec::serialize_frame(frame))
    }

    pub fn publish_encoded(&mut self, bytes: &[u8]) -> Result<PublishOutcome, BrokerError> {
        let id = self.next_request;
        self.next_request += 1;
        write_frame(
            &mut self.stream,
            &RpcFrame::new(MsgType::Publish, id, bytes.to_vec()),
        )?;
        let reply = read_frame(&mut self.stream)?;
        match reply.msg_type {
            MsgType::PublishAck => {
                let mut r = Reader::new(&reply.body);
                match r.u8()? {
                    messages::PUBLISH_ACCEPTED => Ok(PublishOutcome::Accepted),
                    _ => Ok(PublishOutcome::RejectedStale),
                }
            }
            MsgType::Error => Err(remote_error(&reply.body)),
            other => Err(BrokerError::Unexpected(other)),
        }
    }
}

/// Subscriber connection to the edge broker.
#[derive(Debug)]
pub struct SubscriberClient {
    stream: TcpStream,
    client_id: String,
    next_request: u64,
}

impl SubscriberClient {
    pub fn connect(
        addr: SocketAddr,
        credentials: Option<&str>,
        read_timeout: Duration,
        retry: &RetryPolicy,
    ) -> Result<Self, BrokerError> {
        let (stream, client_id) = connect_with_retry(
            addr,
            messages::ROLE_SUBSCRIBER,
            credentials,
            read_timeout,
            retry,
        )?;
        Ok(SubscriberClient {
            stream,
            client_id,
            next_request: 2,
        })
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    /// Snapshot of registered cameras.
    pub fn get_camera_info(&mut self) -> Result<Vec<CameraInfo>, BrokerError> {
        let id = self.next_request;
        self.next_request += 1;
        write_frame(
            &mut self.stream,
            &RpcFrame::new(MsgType::GetCameraInfo, id, Vec::new()),
        )?;
        let reply = read_frame(&mut self.stream)?;
        match reply.msg_type {
            MsgType::CameraInfoResp => Ok(messages::decode_camera_info_resp(&reply.body)?),
            MsgType::Error => Err(remote_error(&reply.body)),
            other => Err(BrokerError::Unexpected(other)),
        }
    }

    /// Open a subscription; the connection becomes a frame stream.
    pub fn subscribe(
        mut self,
        camera: &CameraId,
        begin: Timestamp,
        end: Option<Timestamp>,
        bound: QosBound,
    ) -> Result<Subscription, BrokerError> {
        let id = self.next_request;
        let body = Writer::new()
            .str(camera.as_str())
            .u64(begin.micros())
            .u64(end.map_or(messages::END_OPEN, |t| t.micros()))
            .f64(bound.latency_max_ms())
            .f64(bound.accuracy_min_pct())
            .finish();
        write_frame(
            &mut self.stream,
            &RpcFrame::new(MsgType::Subscribe, id, body),
        )?;
        let reply = read_frame(&mut self.stream)?;
        match reply.msg_type {
            MsgType::Ack => {
                let mut r = Reader::new(&reply.body);
                let sub_id = r.u64()?;
                Ok(Subscription {
                    stream: self.stream,
                    sub_id,
                    last_received: None,
                })
            }
            MsgType::Error => Err(remote_error(&reply.body)),
            other => Err(BrokerError::Unexpected(other)),
        }
    }
}

/// One delivery-stream event.
#[derive(Debug)]
pub enum SubEvent {
    Frame {
        frame: Frame,
        timing: DeliveryTiming,
        received_micros: u64,
    },
    Infeasible {
        best_accuracy_pct: f64,
    },
    Ended,
    Cancelled,
}

#[derive(Debug)]
pub struct Subscription {
    stream: TcpStream,
    sub_id: u64,
    last_received: Option<Timestamp>,
}

impl Subscription {
    pub fn sub_id(&self) -> u64 {
        self.sub_id
    }

    /// Timestamp of the newest frame received, for resume-after-reconnect.
    pub fn last_received(&self) -> Option<Timestamp> {
        self.last_received
    }

    /// Next event, waiting at most `timeout`. `WireError::Timeout` is the
    /// broker-failure signal for a stream that should be live.
    pub fn next_event(&mut self, timeout: Duration) -> Result<SubEvent, BrokerError> {
        self.stream.set_read_timeout(Some(timeout))?;
        let frame = read_frame(&mut self.stream)?;
        self.decode_event(frame)
    }

    fn decode_event(&mut self, rpc: RpcFrame) -> Result<SubEvent, BrokerError> {
        match rpc.msg_type {
            MsgType::FrameDelivery => {
                let (timing, bytes) = messages::decode_delivery(&rpc.body)?;
                let (frame, _) = codec::deserialize_frame(bytes)?;
                self.last_received = Some(frame.ts());
                Ok(SubEvent::Frame {
                    frame,
                    timing,
                    received_micros: Timestamp::now().micros(),
                })
            }
            MsgType::InfeasibleNotice => {
                let mut r = Reader::new(&rpc.body);
                let _sub = r.u64()?;
                Ok(SubEvent::Infeasible {
                    best_accuracy_pct: r.f64()?,
                })
            }
            MsgType::Ack => {
                let mut r = Reader::new(&rpc.body);
                let _subject = r.u64()?;
                match r.u8()? {
                    messages::ACK_ENDED => Ok(SubEvent::Ended),
                    messages::ACK_CANCELLED => Ok(SubEvent::Cancelled),
                    _ => Ok(SubEvent::Ended),
                }
            }
            MsgType::Error => Err(remote_error(&rpc.body)),
            other => Err(BrokerError::Unexpected(other)),
        }
    }

    /// Stop the stream: frames already in flight are drained and discarded,
    /// and the call returns once the broker acknowledges cancellation.
    pub fn unsubscribe(mut self, timeout: Duration) -> Result<(), BrokerError> {
        let body = Writer::new().u64(self.sub_id).finish();
        write_frame(
            &mut self.stream,
            &RpcFrame::new(MsgType::Unsubscribe, self.sub_id, body),
        )?;
        self.stream.set_read_timeout(Some(timeout))?;
        loop {
            match read_frame(&mut self.stream) {
                Ok(f) => {
                    if let Ok(SubEvent::Cancelled | SubEvent::Ended) = self.decode_event(f) {
                        return Ok(());
                    }
                }
                Err(WireError::Closed) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
    }
}
