//! Frame wire/disk format.
//!
//! Layout: magic bytes `MEZ1` (0x4D455A31), u8 version (1), u64 timestamp
//! micros, u16 width, u16 height, u8 colorspace code, u16 camera-id length
//! followed by its UTF-8 bytes, u32 payload length, payload. All multi-byte
//! integers are little-endian. The payload is the pixel buffer compressed
//! with raw DEFLATE (RFC 1951) at level 6; the stored length is the
//! compressed byte count.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::frame::{CameraId, Colorspace, Frame, Timestamp};

pub const FRAME_MAGIC: [u8; 4] = *b"MEZ1";
pub const FRAME_VERSION: u8 = 1;

/// Fixed compression level so equal frames always encode to equal bytes.
const DEFLATE_LEVEL: u32 = 6;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic, not a frame")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown colorspace code {0}")]
    UnknownColorspace(u8),
    #[error("truncated frame: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("camera id is not valid UTF-8")]
    BadCameraId,
    #[error("decompressed payload length {actual} does not match header (expected {expected})")]
    PayloadMismatch { expected: usize, actual: usize },
    #[error("payload decompression failed: {0}")]
    Inflate(#[from] std::io::Error),
    #[error("invalid frame fields: {0}")]
    InvalidFrame(#[from] crate::frame::FrameError),
}

/// Serialize a frame to its canonical encoded form. Total on valid frames.
pub fn serialize_frame(frame: &Frame) -> Vec<u8> {
    let cam = frame.camera_id().as_str().as_bytes();
    let compressed = deflate(frame.pixels());
    let mut out = Vec::with_capacity(24 + cam.len() + compressed.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.extend_from_slice(&frame.ts().micros().to_le_bytes());
    out.extend_from_slice(&frame.width().to_le_bytes());
    out.extend_from_slice(&frame.height().to_le_bytes());
    out.push(frame.colorspace().code());
    out.extend_from_slice(&(cam.len() as u16).to_le_bytes());
    out.extend_from_slice(cam);
    out.extend_from_slice(&(compressed.len() as u32).to_le_bytes());
    out.extend_from_slice(&compressed);
    out
}

/// Encoded size of a frame in bytes: the length of [`serialize_frame`]
/// output. This is the size the latency controller steers.
pub fn encoded_size(frame: &Frame) -> u64 {
    // Header size is exact, so only the payload needs compressing.
    let header = 24 + frame.camera_id().as_str().len();
    (header + deflate(frame.pixels()).len()) as u64
}

/// Parsed frame header, available without decompressing the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHeader {
    pub ts: Timestamp,
    pub camera_id: CameraId,
    pub width: u16,
    pub height: u16,
    pub colorspace: Colorspace,
    /// Total encoded length of this frame, header plus stored payload.
    pub encoded_len: usize,
}

/// Inspect a frame's header without inflating the payload. Cheap enough for
/// per-append validation on the broker hot path.
pub fn peek_frame(buf: &[u8]) -> Result<FrameHeader, CodecError> {
    let mut r = Cursor { buf, pos: 0 };
    if r.take(4)? != FRAME_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u8()?;
    if version != FRAME_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let ts = Timestamp::from_micros(r.u64()?);
    let width = r.u16()?;
    let height = r.u16()?;
    let cs_code = r.u8()?;
    let colorspace =
        Colorspace::from_code(cs_code).ok_or(CodecError::UnknownColorspace(cs_code))?;
    let cam_len = r.u16()? as usize;
    let cam = std::str::from_utf8(r.take(cam_len)?).map_err(|_| CodecError::BadCameraId)?;
    let camera_id = CameraId::new(cam).map_err(CodecError::InvalidFrame)?;
    let payload_len = r.u32()? as usize;
    if r.pos + payload_len > buf.len() {
        return Err(CodecError::Truncated {
            needed: r.pos + payload_len - buf.len(),
        });
    }
    Ok(FrameHeader {
        ts,
        camera_id,
        width,
        height,
        colorspace,
        encoded_len: r.pos + payload_len,
    })
}

/// Decode one frame from `buf`, returning it plus the number of bytes
/// consumed (frames may be concatenated, e.g. in log segment files).
pub fn deserialize_frame(buf: &[u8]) -> Result<(Frame, usize), CodecError> {
    let mut r = Cursor { buf, pos: 0 };
    let magic = r.take(4)?;
    if magic != FRAME_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u8()?;
    if version != FRAME_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let ts = Timestamp::from_micros(r.u64()?);
    let width = r.u16()?;
    let height = r.u16()?;
    let cs_code = r.u8()?;
    let colorspace =
        Colorspace::from_code(cs_code).ok_or(CodecError::UnknownColorspace(cs_code))?;
    let cam_len = r.u16()? as usize;
    let cam = std::str::from_utf8(r.take(cam_len)?).map_err(|_| CodecError::BadCameraId)?;
    let camera_id = CameraId::new(cam).map_err(CodecError::InvalidFrame)?;
    let payload_len = r.u32()? as usize;
    let compressed = r.take(payload_len)?;

    let expected = width as usize * height as usize * colorspace.channels();
    let pixels = inflate(compressed, expected)?;
    if pixels.len() != expected {
        return Err(CodecError::PayloadMismatch {
            expected,
            actual: pixels.len(),
        });
    }
    let frame = Frame::new(ts, camera_id, width, height, colorspace, pixels)?;
    Ok((frame, r.pos))
}

fn deflate(data: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(DEFLATE_LEVEL));
    enc.write_all(data).expect("in-memory deflate cannot fail");
    enc.finish().expect("in-memory deflate cannot fail")
}

fn inflate(data: &[u8], size_hint: usize) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(size_hint);
    let mut dec = DeflateDecoder::new(data);
    // Cap reads at one byte past the expected size so a hostile stream
    // cannot balloon memory; the caller checks the exact length.
    dec.by_ref()
        .take(size_hint as u64 + 1)
        .read_to_end(&mut out)?;
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Truncated {
                needed: self.pos + n - self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
