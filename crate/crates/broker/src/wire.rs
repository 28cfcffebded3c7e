//! RPC framing: `u32` length, `u8` message type, `u64` request id, then a
//! type-specific body. The length covers everything after itself (type byte,
//! request id, body). All integers are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Hard cap on one RPC frame; a 1080p BGR frame is ~6 MB uncompressed.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Connect = 1,
    ConnectAck = 2,
    Publish = 3,
    PublishAck = 4,
    GetCameraInfo = 5,
    CameraInfoResp = 6,
    Subscribe = 7,
    FrameDelivery = 8,
    Unsubscribe = 9,
    Ack = 10,
    Register = 11,
    Unregister = 12,
    Error = 13,
    InfeasibleNotice = 14,
    SetTarget = 15,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<MsgType> {
        use MsgType::*;
        Some(match v {
            1 => Connect,
            2 => ConnectAck,
            3 => Publish,
            4 => PublishAck,
            5 => GetCameraInfo,
            6 => CameraInfoResp,
            7 => Subscribe,
            8 => FrameDelivery,
            9 => Unsubscribe,
            10 => Ack,
            11 => Register,
            12 => Unregister,
            13 => Error,
            14 => InfeasibleNotice,
            15 => SetTarget,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("peer closed the connection")]
    Closed,
    #[error("read or write timed out")]
    Timeout,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("oversized frame: {0} bytes")]
    Oversized(u32),
    #[error("i/o error: {0}")]
    Io(io::Error),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => WireError::Timeout,
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe => WireError::Closed,
            _ => WireError::Io(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RpcFrame {
    pub msg_type: MsgType,
    pub request_id: u64,
    pub body: Vec<u8>,
}

impl RpcFrame {
    pub fn new(msg_type: MsgType, request_id: u64, body: Vec<u8>) -> Self {
        RpcFrame {
            msg_type,
            request_id,
            body,
        }
    }
}

pub fn write_frame(w: &mut impl Write, frame: &RpcFrame) -> Result<(), WireError> {
    let len = 1 + 8 + frame.body.len();
    if len as u32 > MAX_FRAME_LEN {
        return Err(WireError::Oversized(len as u32));
    }
    let mut buf = Vec::with_capacity(4 + len);
    buf.extend_from_slice(&(len as u32).to_le_bytes());
    buf.push(frame.msg_type as u8);
    buf.extend_from_slice(&frame.request_id.to_le_bytes());
    buf.extend_from_slice(&frame.body);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<RpcFrame, WireError> {
    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf)?;
    let len = u32::from_le_bytes(len_buf);
    if len < 9 || len > MAX_FRAME_LEN {
        return Err(WireError::Oversized(len));
    }
    let mut rest = vec![0u8; len as usize];
    r.read_exact(&mut rest)?;
    let msg_type = MsgType::from_u8(rest[0]).ok_or(WireError::UnknownType(rest[0]))?;
    let request_id = u64::from_le_bytes(rest[1..9].try_into().unwrap());
    Ok(RpcFrame {
        msg_type,
        request_id,
        body: rest[9..].to_vec(),
    })
}
