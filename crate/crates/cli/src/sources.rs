//! Frame sources for the camera node: a directory of images or the
//! deterministic synthetic generator.

use std::path::{Path, PathBuf};

use framebus_core::synth::SyntheticSource;
use framebus_core::{CameraId, Colorspace, Frame, Timestamp};

pub enum FrameSource {
    Synthetic(SyntheticSource),
    Directory {
        camera: CameraId,
        files: Vec<PathBuf>,
        next: usize,
    },
}

impl FrameSource {
    pub fn synthetic(
        camera: CameraId,
        width: u16,
        height: u16,
        complexity: f64,
        seed: u64,
    ) -> Self {
        FrameSource::Synthetic(SyntheticSource::new(
            camera, width, height, complexity, seed,
        ))
    }

    /// All images (png/jpg/jpeg) in the directory, sorted by name.
    pub fn directory(camera: CameraId, dir: &Path) -> std::io::Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension().and_then(|x| x.to_str()).is_some_and(|x| {
                    matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg")
                })
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no images in {}", dir.display()),
            ));
        }
        Ok(FrameSource::Directory {
            camera,
            files,
            next: 0,
        })
    }

    /// Next frame stamped with `ts`; `None` when a directory source is
    /// exhausted (the synthetic source never ends).
    pub fn next_frame(&mut self, ts: Timestamp) -> Option<Frame> {
        match self {
            FrameSource::Synthetic(s) => Some(s.next_frame(ts)),
            FrameSource::Directory {
                camera,
                files,
                next,
            } => {
                let path = files.get(*next)?;
                *next += 1;
                match load_image_bgr(camera, path, ts) {
                    Ok(frame) => Some(frame),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", path.display());
                        self.next_frame(ts)
                    }
                }
            }
        }
    }

    pub fn dims(&self) -> Option<(u16, u16)> {
        match self {
            FrameSource::Synthetic(s) => Some(s.dims()),
            FrameSource::Directory { .. } => None,
        }
    }
}

/// Decode an image file into a BGR frame.
pub fn load_image_bgr(
    camera: &CameraId,
    path: &Path,
    ts: Timestamp,
) -> Result<Frame, Box<dyn std::error::Error>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    if w > u16::MAX as u32 || h > u16::MAX as u32 {
        return Err(format!("image {}x{} too large", w, h).into());
    }
    let mut pixels = Vec::with_capacity((w * h * 3) as usize);
    for px in img.pixels() {
        pixels.extend_from_slice(&[px.0[2], px.0[1], px.0[0]]); // RGB -> BGR
    }
    Ok(Frame::new(
        ts,
        camera.clone(),
        w as u16,
        h as u16,
        Colorspace::Bgr,
        pixels,
    )?)
}
