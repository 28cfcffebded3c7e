//! Core domain types shared by every other module: timestamps, camera
//! identities, raw video frames, and per-subscription quality-of-service
//! bounds.
//!
//! All types here are immutable values after construction and are safe to
//! share and send across threads.

use std::fmt;

use thiserror::Error;

/// Microseconds since the Unix epoch. Keys of the frame log; strictly
/// increasing within one camera's stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const fn from_micros(micros: u64) -> Self {
        Timestamp(micros)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub const fn from_millis(millis: u64) -> Self {
        Timestamp(millis * 1_000)
    }

    /// Current wall-clock time. Virtual-time code paths never call this.
    pub fn now() -> Self {
        let micros = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default()
            .as_micros() as u64;
        Timestamp(micros)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque per-publisher identifier, assigned once when the camera connects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CameraId(String);

impl CameraId {
    pub fn new(id: impl Into<String>) -> Result<Self, FrameError> {
        let id = id.into();
        if id.is_empty() {
            return Err(FrameError::EmptyCameraId);
        }
        Ok(CameraId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Pixel layout of a frame payload. `Bgr` is the capture format; the rest
/// are produced by the colorspace knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Colorspace {
    Bgr,
    Gray,
    Hsv,
    Lab,
    Luv,
}

impl Colorspace {
    pub const fn channels(self) -> usize {
        match self {
            Colorspace::Gray => 1,
            _ => 3,
        }
    }

    /// Wire code for the frame format.
    pub const fn code(self) -> u8 {
        match self {
            Colorspace::Bgr => 0,
            Colorspace::Gray => 1,
            Colorspace::Hsv => 2,
            Colorspace::Lab => 3,
            Colorspace::Luv => 4,
        }
    }

    pub const fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Colorspace::Bgr),
            1 => Some(Colorspace::Gray),
            2 => Some(Colorspace::Hsv),
            3 => Some(Colorspace::Lab),
            4 => Some(Colorspace::Luv),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Colorspace::Bgr => "bgr",
            Colorspace::Gray => "gray",
            Colorspace::Hsv => "hsv",
            Colorspace::Lab => "lab",
            Colorspace::Luv => "luv",
        }
    }
}

/// A timestamped video frame: row-major pixels, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    ts: Timestamp,
    camera_id: CameraId,
    width: u16,
    height: u16,
    colorspace: Colorspace,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(
        ts: Timestamp,
        camera_id: CameraId,
        width: u16,
        height: u16,
        colorspace: Colorspace,
        pixels: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::ZeroDimension { width, height });
        }
        let expected = width as usize * height as usize * colorspace.channels();
        if pixels.len() != expected {
            return Err(FrameError::PayloadLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Frame {
            ts,
            camera_id,
            width,
            height,
            colorspace,
            pixels,
        })
    }

    pub fn ts(&self) -> Timestamp {
        self.ts
    }

    pub fn camera_id(&self) -> &CameraId {
        &self.camera_id
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn colorspace(&self) -> Colorspace {
        self.colorspace
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Same frame with a new timestamp; used by sources that re-stamp
    /// frames at publish time.
    pub fn with_ts(mut self, ts: Timestamp) -> Self {
        self.ts = ts;
        self
    }

    /// Derived frame carrying the same identity (ts, camera) but a new
    /// payload, as produced by the knob pipeline stages.
    pub(crate) fn derived(
        &self,
        width: u16,
        height: u16,
        colorspace: Colorspace,
        pixels: Vec<u8>,
    ) -> Result<Self, FrameError> {
        Frame::new(
            self.ts,
            self.camera_id.clone(),
            width,
            height,
            colorspace,
            pixels,
        )
    }
}

/// The per-subscription quality contract: an upper bound on 95th-percentile
/// network latency and a lower bound on profiled application accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosBound {
    latency_max_ms: f64,
    accuracy_min_pct: f64,
}

impl QosBound {
    pub fn new(latency_max_ms: f64, accuracy_min_pct: f64) -> Result<Self, FrameError> {
        if !(latency_max_ms > 0.0) {
            return Err(FrameError::InvalidLatencyBound(latency_max_ms));
        }
        if !(accuracy_min_pct > 0.0 && accuracy_min_pct <= 100.0) {
            return Err(FrameError::InvalidAccuracyBound(accuracy_min_pct));
        }
        Ok(QosBound {
            latency_max_ms,
            accuracy_min_pct,
        })
    }

    pub fn latency_max_ms(&self) -> f64 {
        self.latency_max_ms
    }

    pub fn accuracy_min_pct(&self) -> f64 {
        self.accuracy_min_pct
    }

    /// Composite of two bounds: strictest latency, highest accuracy floor.
    /// Applied when several subscribers watch one camera.
    pub fn strictest(&self, other: &QosBound) -> QosBound {
        QosBound {
            latency_max_ms: self.latency_max_ms.min(other.latency_max_ms),
            accuracy_min_pct: self.accuracy_min_pct.max(other.accuracy_min_pct),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("camera id must be non-empty")]
    EmptyCameraId,
    #[error("frame dimensions must be >= 1, got {width}x{height}")]
    ZeroDimension { width: u16, height: u16 },
    #[error("pixel payload length {actual} does not match dimensions (expected {expected})")]
    PayloadLength { expected: usize, actual: usize },
    #[error("latency bound must be positive, got {0}")]
    InvalidLatencyBound(f64),
    #[error("accuracy bound must be in (0, 100], got {0}")]
    InvalidAccuracyBound(f64),
}
