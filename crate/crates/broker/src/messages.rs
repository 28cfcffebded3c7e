//! Typed bodies for each RPC message. Strings are `u16` length + UTF-8;
//! integers are little-endian. Frames travel in the core encoded form.

use framebus_core::{CameraId, QosBound};

use crate::wire::WireError;

pub const ROLE_PUBLISHER: u8 = 0;
pub const ROLE_SUBSCRIBER: u8 = 1;

pub const PUBLISH_ACCEPTED: u8 = 0;
pub const PUBLISH_REJECTED_STALE: u8 = 1;

pub const ACK_OK: u8 = 0;
pub const ACK_ENDED: u8 = 1;
pub const ACK_CANCELLED: u8 = 2;

pub const ERR_AUTH_FAILED: u16 = 1;
pub const ERR_UNKNOWN_CAMERA: u16 = 2;
pub const ERR_DUPLICATE_CAMERA: u16 = 3;
pub const ERR_UNKNOWN_SUBSCRIPTION: u16 = 4;
pub const ERR_BAD_REQUEST: u16 = 6;

/// Open-ended subscription end time.
pub const END_OPEN: u64 = u64::MAX;

fn bad(msg: &str) -> WireError {
    WireError::Io(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        msg.to_string(),
    ))
}

pub struct Writer(Vec<u8>);

impl Writer {
    pub fn new() -> Self {
        Writer(Vec::new())
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.0.push(v);
        self
    }

    pub fn u16(mut self, v: u16) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(mut self, v: u32) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(mut self, v: f64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn str(mut self, s: &str) -> Self {
        let bytes = s.as_bytes();
        self.0
            .extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        self.0.extend_from_slice(bytes);
        self
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.0.extend_from_slice(b);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

impl Default for Writer {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(bad("truncated message body"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<&'a str, WireError> {
        let len = self.u16()? as usize;
        std::str::from_utf8(self.take(len)?).map_err(|_| bad("invalid UTF-8"))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
}

pub fn camera_id(r: &mut Reader) -> Result<CameraId, WireError> {
    CameraId::new(r.str()?).map_err(|e| bad(&e.to_string()))
}

pub fn qos_bound(r: &mut Reader) -> Result<QosBound, WireError> {
    let latency = r.f64()?;
    let accuracy = r.f64()?;
    QosBound::new(latency, accuracy).map_err(|e| bad(&e.to_string()))
}

/// Per-hop timing block carried ahead of the frame bytes in FrameDelivery;
/// feeds the latency-breakdown report. Micros are shared-clock wall time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeliveryTiming {
    pub cam_append_micros: u64,
    pub controller_micros: u32,
    pub cam_send_micros: u64,
    pub edge_recv_micros: u64,
    pub edge_send_micros: u64,
}

pub const TIMING_LEN: usize = 8 + 4 + 8 + 8 + 8;

pub fn encode_delivery(timing: &DeliveryTiming, frame_bytes: &[u8]) -> Vec<u8> {
    Writer::new()
        .u64(timing.cam_append_micros)
        .u32(timing.controller_micros)
        .u64(timing.cam_send_micros)
        .u64(timing.edge_recv_micros)
        .u64(timing.edge_send_micros)
        .bytes(frame_bytes)
        .finish()
}

pub fn decode_delivery(body: &[u8]) -> Result<(DeliveryTiming, &[u8]), WireError> {
    let mut r = Reader::new(body);
    let timing = DeliveryTiming {
        cam_append_micros: r.u64()?,
        controller_micros: r.u32()?,
        cam_send_micros: r.u64()?,
        edge_recv_micros: r.u64()?,
        edge_send_micros: r.u64()?,
    };
    Ok((timing, r.rest()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraInfo {
    pub camera: CameraId,
    pub width: u16,
    pub height: u16,
    pub fps: u16,
}

pub fn encode_camera_info_resp(cams: &[CameraInfo]) -> Vec<u8> {
    let mut w = Writer::new().u16(cams.len() as u16);
    for c in cams {
        w = w
            .str(c.camera.as_str())
            .u16(c.width)
            .u16(c.height)
            .u16(c.fps);
    }
    w.finish()
}

pub fn decode_camera_info_resp(body: &[u8]) -> Result<Vec<CameraInfo>, WireError> {
    let mut r = Reader::new(body);
    let count = r.u16()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        out.push(CameraInfo {
            camera: camera_id(&mut r)?,
            width: r.u16()?,
            height: r.u16()?,
            fps: r.u16()?,
        });
    }
    Ok(out)
}
