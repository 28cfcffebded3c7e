//! Deterministic synthetic frame generator: a moving sawtooth gradient
//! under a fixed hue, with a sinusoidal texture whose amplitude scales with
//! `complexity`. The pattern is designed so the tuning knobs have their
//! natural size effects — downscaling and graying shrink the encoding,
//! blurring never grows it — without shipping any image assets.

use crate::frame::{CameraId, Colorspace, Frame, Timestamp};

/// Fixed BGR weights (a constant hue) applied to the per-pixel intensity.
const WEIGHTS: [f64; 3] = [0.95, 0.60, 0.30];

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    camera: CameraId,
    width: u16,
    height: u16,
    complexity: f64,
    seed: u64,
    next_index: u64,
}

impl SyntheticSource {
    /// `complexity` in [0, 1] scales texture amplitude and scroll speed.
    pub fn new(camera: CameraId, width: u16, height: u16, complexity: f64, seed: u64) -> Self {
        SyntheticSource {
            camera,
            width,
            height,
            complexity: complexity.clamp(0.0, 1.0),
            seed,
            next_index: 0,
        }
    }

    pub fn camera(&self) -> &CameraId {
        &self.camera
    }

    pub fn dims(&self) -> (u16, u16) {
        (self.width, self.height)
    }

    /// Deterministic frame `index` of the stream, stamped with `ts`.
    pub fn frame_at(&self, index: u64, ts: Timestamp) -> Frame {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut pixels = vec![0u8; w * h * 3];
        let phase = (self.seed % 997) as f64 * 0.1;
        let scroll = index as f64 * (2.0 + 6.0 * self.complexity);
        let amp = 40.0 * self.complexity;
        for y in 0..h {
            for x in 0..w {
                let ramp = ((x as f64 + 2.0 * y as f64 + scroll) % 256.0) / 255.0;
                let tex =
                    ((x as f64) * 0.9 + phase + scroll * 0.35).sin() * ((y as f64) * 1.1).sin();
                let v = 105.0 + 95.0 * ramp + amp * tex;
                let base = (y * w + x) * 3;
                for c in 0..3 {
                    pixels[base + c] = (v * WEIGHTS[c]).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Frame::new(
            ts,
            self.camera.clone(),
            self.width,
            self.height,
            Colorspace::Bgr,
            pixels,
        )
        .expect("generated payload matches dimensions")
    }

    /// Next frame in stream order.
    pub fn next_frame(&mut self, ts: Timestamp) -> Frame {
        let f = self.frame_at(self.next_index, ts);
        self.next_index += 1;
        f
    }
}
