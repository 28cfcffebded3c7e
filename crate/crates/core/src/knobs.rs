//! Frame-quality tuning knobs: resolution downscale, colorspace conversion,
//! normalized box blur, and frame-differencing drop.
//!
//! A [`KnobSetting`] names one combination of knob values; [`apply_setting`]
//! runs the pipeline in fixed order: drop decision on the unmodified frame,
//! then downscale, colorspace, blur. Every stage preserves the frame's
//! timestamp and camera id.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::frame::{Colorspace, Frame, FrameError};
use crate::imgops;

/// Resolution knob. Non-native settings downscale to fit within the target
/// box, preserving aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Resolution {
    #[default]
    Native,
    R1312x736,
    R960x528,
    R640x352,
    R480x256,
}

impl Resolution {
    pub const ALL: [Resolution; 5] = [
        Resolution::Native,
        Resolution::R1312x736,
        Resolution::R960x528,
        Resolution::R640x352,
        Resolution::R480x256,
    ];

    pub const fn dims(self) -> Option<(u16, u16)> {
        match self {
            Resolution::Native => None,
            Resolution::R1312x736 => Some((1312, 736)),
            Resolution::R960x528 => Some((960, 528)),
            Resolution::R640x352 => Some((640, 352)),
            Resolution::R480x256 => Some((480, 256)),
        }
    }
}

/// Colorspace knob; `Keep` leaves the frame in BGR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ColorKnob {
    #[default]
    Keep,
    Gray,
    Hsv,
    Lab,
    Luv,
}

impl ColorKnob {
    pub const ALL: [ColorKnob; 5] = [
        ColorKnob::Keep,
        ColorKnob::Gray,
        ColorKnob::Hsv,
        ColorKnob::Lab,
        ColorKnob::Luv,
    ];

    pub const fn target(self) -> Option<Colorspace> {
        match self {
            ColorKnob::Keep => None,
            ColorKnob::Gray => Some(Colorspace::Gray),
            ColorKnob::Hsv => Some(Colorspace::Hsv),
            ColorKnob::Lab => Some(Colorspace::Lab),
            ColorKnob::Luv => Some(Colorspace::Luv),
        }
    }
}

/// Box-filter blur knob (square kernel side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BlurKernel {
    #[default]
    Off,
    K5,
    K8,
    K10,
    K15,
}

impl BlurKernel {
    pub const ALL: [BlurKernel; 5] = [
        BlurKernel::Off,
        BlurKernel::K5,
        BlurKernel::K8,
        BlurKernel::K10,
        BlurKernel::K15,
    ];

    pub const fn side(self) -> Option<usize> {
        match self {
            BlurKernel::Off => None,
            BlurKernel::K5 => Some(5),
            BlurKernel::K8 => Some(8),
            BlurKernel::K10 => Some(10),
            BlurKernel::K15 => Some(15),
        }
    }
}

/// Frame-differencing threshold knob: five values evenly spaced over
/// [0, 0.72]. A frame is dropped when its difference score against the last
/// transmitted frame is at or below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DiffThreshold {
    #[default]
    Off,
    T1,
    T2,
    T3,
    T4,
    T5,
}

impl DiffThreshold {
    pub const ALL: [DiffThreshold; 6] = [
        DiffThreshold::Off,
        DiffThreshold::T1,
        DiffThreshold::T2,
        DiffThreshold::T3,
        DiffThreshold::T4,
        DiffThreshold::T5,
    ];

    pub const fn value(self) -> Option<f64> {
        match self {
            DiffThreshold::Off => None,
            DiffThreshold::T1 => Some(0.0),
            DiffThreshold::T2 => Some(0.18),
            DiffThreshold::T3 => Some(0.36),
            DiffThreshold::T4 => Some(0.54),
            DiffThreshold::T5 => Some(0.72),
        }
    }
}

/// One combination of knob values; the latency controller's actuator output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KnobSetting {
    pub resolution: Resolution,
    pub color: ColorKnob,
    pub blur: BlurKernel,
    pub framediff: DiffThreshold,
}

impl KnobSetting {
    pub const fn identity() -> Self {
        KnobSetting {
            resolution: Resolution::Native,
            color: ColorKnob::Keep,
            blur: BlurKernel::Off,
            framediff: DiffThreshold::Off,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// All knob combinations in a canonical enumeration order.
    pub fn enumerate_all() -> impl Iterator<Item = KnobSetting> {
        Resolution::ALL.into_iter().flat_map(|resolution| {
            ColorKnob::ALL.into_iter().flat_map(move |color| {
                BlurKernel::ALL.into_iter().flat_map(move |blur| {
                    DiffThreshold::ALL
                        .into_iter()
                        .map(move |framediff| KnobSetting {
                            resolution,
                            color,
                            blur,
                            framediff,
                        })
                })
            })
        })
    }
}

/// Textual form used in profile files and log lines:
/// `res=480x256;cs=gray;blur=5;fd=0.18`, omitting identity/off fields.
/// The all-identity setting renders as the empty string.
impl fmt::Display for KnobSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        if let Some((w, h)) = self.resolution.dims() {
            parts.push(format!("res={w}x{h}"));
        }
        match self.color {
            ColorKnob::Keep => {}
            ColorKnob::Gray => parts.push("cs=gray".into()),
            ColorKnob::Hsv => parts.push("cs=hsv".into()),
            ColorKnob::Lab => parts.push("cs=lab".into()),
            ColorKnob::Luv => parts.push("cs=luv".into()),
        }
        if let Some(k) = self.blur.side() {
            parts.push(format!("blur={k}"));
        }
        if let Some(t) = self.framediff.value() {
            parts.push(format!("fd={t}"));
        }
        f.write_str(&parts.join(";"))
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid knob setting: {0}")]
pub struct KnobParseError(String);

impl FromStr for KnobSetting {
    type Err = KnobParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut setting = KnobSetting::identity();
        let s = s.trim();
        if s.is_empty() {
            return Ok(setting);
        }
        for part in s.split(';') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| KnobParseError(format!("expected key=value, got {part:?}")))?;
            match key {
                "res" => {
                    setting.resolution = Resolution::ALL
                        .into_iter()
                        .find(|r| {
                            r.dims().map(|(w, h)| format!("{w}x{h}")).as_deref() == Some(value)
                        })
                        .ok_or_else(|| KnobParseError(format!("unknown resolution {value:?}")))?;
                }
                "cs" => {
                    setting.color = match value {
                        "gray" => ColorKnob::Gray,
                        "hsv" => ColorKnob::Hsv,
                        "lab" => ColorKnob::Lab,
                        "luv" => ColorKnob::Luv,
                        _ => return Err(KnobParseError(format!("unknown colorspace {value:?}"))),
                    };
                }
                "blur" => {
                    let k: usize = value
                        .parse()
                        .map_err(|_| KnobParseError(format!("bad blur kernel {value:?}")))?;
                    setting.blur = BlurKernel::ALL
                        .into_iter()
                        .find(|b| b.side() == Some(k))
                        .ok_or_else(|| KnobParseError(format!("unsupported blur kernel {k}")))?;
                }
                "fd" => {
                    let t: f64 = value
                        .parse()
                        .map_err(|_| KnobParseError(format!("bad diff threshold {value:?}")))?;
                    setting.framediff = DiffThreshold::ALL
                        .into_iter()
                        .find(|d| d.value() == Some(t))
                        .ok_or_else(|| KnobParseError(format!("unsupported diff threshold {t}")))?;
                }
                _ => return Err(KnobParseError(format!("unknown knob {key:?}"))),
            }
        }
        Ok(setting)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KnobError {
    #[error("upscale requested: target {target_w}x{target_h} exceeds native {width}x{height}")]
    UpscaleRequested {
        width: u16,
        height: u16,
        target_w: u16,
        target_h: u16,
    },
    #[error("unsupported conversion from {0:?} (input must be BGR)")]
    UnsupportedConversion(Colorspace),
    #[error("blur kernel {k} larger than frame {width}x{height}")]
    KernelTooLarge { k: usize, width: u16, height: u16 },
    #[error("frame shapes differ: {0}x{1} {2:?} vs {3}x{4} {5:?}")]
    ShapeMismatch(u16, u16, Colorspace, u16, u16, Colorspace),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Knob 1: bilinear downscale to fit within the target box, aspect ratio
/// preserved, output dimensions rounded half-to-even.
pub fn downscale(frame: &Frame, target: Resolution) -> Result<Frame, KnobError> {
    let Some((tw, th)) = target.dims() else {
        return Ok(frame.clone());
    };
    let (w, h) = (frame.width(), frame.height());
    if tw > w || th > h {
        return Err(KnobError::UpscaleRequested {
            width: w,
            height: h,
            target_w: tw,
            target_h: th,
        });
    }
    let scale = (tw as f64 / w as f64).min(th as f64 / h as f64);
    let ow = ((w as f64 * scale).round_ties_even() as u16).max(1);
    let oh = ((h as f64 * scale).round_ties_even() as u16).max(1);
    if (ow, oh) == (w, h) {
        return Ok(frame.clone());
    }
    let ch = frame.colorspace().channels();
    let pixels = imgops::resize_bilinear(
        frame.pixels(),
        w as usize,
        h as usize,
        ch,
        ow as usize,
        oh as usize,
    );
    Ok(frame.derived(ow, oh, frame.colorspace(), pixels)?)
}

/// Knob 2: colorspace conversion. Input must be BGR.
pub fn convert_colorspace(frame: &Frame, target: Colorspace) -> Result<Frame, KnobError> {
    if frame.colorspace() != Colorspace::Bgr {
        return Err(KnobError::UnsupportedConversion(frame.colorspace()));
    }
    let w = frame.width() as usize;
    let pixels = match target {
        Colorspace::Gray => imgops::bgr_to_gray(frame.pixels(), w),
        Colorspace::Hsv => imgops::bgr_to_hsv(frame.pixels(), w),
        Colorspace::Lab => imgops::bgr_to_lab(frame.pixels(), w),
        Colorspace::Luv => imgops::bgr_to_luv(frame.pixels(), w),
        Colorspace::Bgr => return Err(KnobError::UnsupportedConversion(Colorspace::Bgr)),
    };
    Ok(frame.derived(frame.width(), frame.height(), target, pixels)?)
}

/// Knob 3: normalized box filter with replicate-edge padding.
pub fn blur(frame: &Frame, kernel: BlurKernel) -> Result<Frame, KnobError> {
    let Some(k) = kernel.side() else {
        return Ok(frame.clone());
    };
    let (w, h) = (frame.width(), frame.height());
    if k > w.min(h) as usize {
        return Err(KnobError::KernelTooLarge {
            k,
            width: w,
            height: h,
        });
    }
    let pixels = imgops::box_blur(
        frame.pixels(),
        w as usize,
        h as usize,
        frame.colorspace().channels(),
        k,
    );
    Ok(frame.derived(w, h, frame.colorspace(), pixels)?)
}

/// Knob 5 scoring: mean absolute pixel difference normalized to [0, 1].
/// 0 means pixel-wise identical; 1 means maximally dissimilar.
pub fn frame_diff(prev: &Frame, cur: &Frame) -> Result<f64, KnobError> {
    if prev.width() != cur.width()
        || prev.height() != cur.height()
        || prev.colorspace() != cur.colorspace()
    {
        return Err(KnobError::ShapeMismatch(
            prev.width(),
            prev.height(),
            prev.colorspace(),
            cur.width(),
            cur.height(),
            cur.colorspace(),
        ));
    }
    let sum = imgops::abs_diff_sum(prev.pixels(), cur.pixels());
    Ok(sum as f64 / (prev.pixels().len() as f64 * 255.0))
}

/// Per-camera frame-differencing state: an unmodified copy of the most
/// recently transmitted frame.
#[derive(Debug, Default, Clone)]
pub struct FrameDiffState {
    prev: Option<Frame>,
}

impl FrameDiffState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn prev(&self) -> Option<&Frame> {
        self.prev.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropDecision {
    Send,
    Drop,
}

/// Knob 5: drop the frame when its difference against the last transmitted
/// frame is at or below the threshold. On send the state records the frame.
/// A shape mismatch against the stored frame counts as dissimilar.
pub fn should_drop(
    state: &mut FrameDiffState,
    cur: &Frame,
    threshold: DiffThreshold,
) -> DropDecision {
    if let Some(t) = threshold.value() {
        if let Some(prev) = &state.prev {
            if let Ok(score) = frame_diff(prev, cur) {
                if score <= t {
                    return DropDecision::Drop;
                }
            }
        }
    }
    state.prev = Some(cur.clone());
    DropDecision::Send
}

/// Full pipeline for one setting: drop decision on the unmodified frame,
/// then downscale, colorspace, blur. Returns `None` when the frame was
/// dropped by frame differencing.
pub fn apply_setting(
    frame: &Frame,
    setting: &KnobSetting,
    state: &mut FrameDiffState,
) -> Result<Option<Frame>, KnobError> {
    if should_drop(state, frame, setting.framediff) == DropDecision::Drop {
        return Ok(None);
    }
    let mut out = downscale(frame, setting.resolution)?;
    if let Some(target) = setting.color.target() {
        out = convert_colorspace(&out, target)?;
    }
    out = blur(&out, setting.blur)?;
    Ok(Some(out))
}
