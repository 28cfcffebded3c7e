//! Core of the framebus video pub-sub system: frame types and their wire
//! codec, the quality-knob pipeline, characterization profiles, the PI
//! network-latency controller, the segmented in-memory frame log with
//! CRC-checked recovery, the deterministic channel simulator, and the
//! detection-accuracy arithmetic used to author profiles.
//!
//! The `parallel` feature (default on) backs the pixel kernels with rayon;
//! disabling it yields a bit-identical sequential build.

pub mod codec;
pub mod controller;
pub mod eval;
pub mod frame;
pub mod imgops;
pub mod knobs;
pub mod memlog;
pub mod netsim;
pub mod profile;
pub mod synth;

pub use frame::{CameraId, Colorspace, Frame, FrameError, QosBound, Timestamp};
pub use knobs::KnobSetting;
