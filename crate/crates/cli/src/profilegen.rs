//! Profile builder: fabricate a labeled-synthetic table, or characterize a
//! real image corpus with provided detection boxes.
//!
//! Corpus mode reads ground-truth boxes plus one detection file per knob
//! setting from a directory; each file is named by the setting's textual
//! form (the identity setting's file is `identity.tsv`, since its textual
//! form is empty). The identity detections define the normalization
//! baseline, so the identity entry lands at 100%.

use std::path::Path;

use framebus_core::codec::encoded_size;
use framebus_core::eval::{f1, load_detections, match_detection_sets, normalized_f1};
use framebus_core::knobs::{self, FrameDiffState, KnobSetting};
use framebus_core::profile::{synthetic_profile, ProfileEntry, SyntheticProfileConfig};
use framebus_core::{Frame, Timestamp};

use crate::sources::load_image_bgr;

const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum ProfileBuildError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Eval(#[from] framebus_core::eval::EvalError),
    #[error(transparent)]
    Profile(#[from] framebus_core::profile::ProfileError),
}

/// Fabricated table. Every number is synthetic; the save header says so.
pub fn build_synthetic(settings: usize, seed: u64) -> Vec<ProfileEntry> {
    synthetic_profile(&SyntheticProfileConfig {
        entries: settings,
        seed,
        ..SyntheticProfileConfig::default()
    })
}

pub const SYNTHETIC_HEADER: [&str; 2] = [
    "synthetic profile: fabricated characterization numbers",
    "setting<TAB>size_bytes<TAB>accuracy_pct",
];

/// Characterize a corpus: for each detection file, the median encoded size
/// of the corpus under that setting plus the F1 against ground truth,
/// normalized by the identity baseline.
pub fn build_from_corpus(
    corpus_dir: &Path,
    ground_truth_path: &Path,
    detections_dir: &Path,
) -> Result<Vec<ProfileEntry>, ProfileBuildError> {
    let camera = framebus_core::CameraId::new("profiler").unwrap();
    let mut images: Vec<_> = std::fs::read_dir(corpus_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(ProfileBuildError::Invalid(format!(
            "no corpus images in {}",
            corpus_dir.display()
        )));
    }
    let frames: Vec<Frame> = images
        .iter()
        .enumerate()
        .map(|(i, p)| {
            load_image_bgr(&camera, p, Timestamp::from_micros(i as u64))
                .map_err(|e| ProfileBuildError::Invalid(format!("{}: {e}", p.display())))
        })
        .collect::<Result<_, _>>()?;

    let ground_truth = load_detections(ground_truth_path)?;

    let mut setting_files: Vec<(KnobSetting, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(detections_dir)? {
        let path = entry?.path();
        if !path.extension().is_some_and(|x| x == "tsv") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let setting: KnobSetting = if stem == "identity" {
            KnobSetting::identity()
        } else {
            stem.parse()
                .map_err(|e| ProfileBuildError::Invalid(format!("{}: {e}", path.display())))?
        };
        setting_files.push((setting, path));
    }
    if setting_files.is_empty() {
        return Err(ProfileBuildError::Invalid(format!(
            "no detection files in {}",
            detections_dir.display()
        )));
    }
    setting_files.sort_by_key(|(_, p)| p.clone());

    let baseline_path = setting_files
        .iter()
        .find(|(s, _)| s.is_identity())
        .map(|(_, p)| p.clone())
        .ok_or_else(|| {
            ProfileBuildError::Invalid("corpus mode needs identity.tsv as the baseline".into())
        })?;
    let baseline = f1(&match_detection_sets(
        &load_detections(&baseline_path)?,
        &ground_truth,
        IOU_THRESHOLD,
    ));
    if baseline <= 0.0 {
        return Err(ProfileBuildError::Invalid(
            "baseline F1 is zero; normalization undefined".into(),
        ));
    }

    let mut entries = Vec::new();
    for (setting, path) in setting_files {
        let preds = load_detections(&path)?;
        let score = f1(&match_detection_sets(&preds, &ground_truth, IOU_THRESHOLD));
        let accuracy_pct = normalized_f1(score, baseline)?;
        let size_bytes = median_encoded_size(&frames, &setting)?;
        entries.push(
            ProfileEntry::new(setting, size_bytes, accuracy_pct)
                .map_err(|e| ProfileBuildError::Invalid(e.to_string()))?,
        );
    }
    entries.sort_by_key(|e| e.size_bytes);
    Ok(entries)
}

/// Median encoded size of the corpus under one knob setting (frame
/// differencing does not change per-frame size and is bypassed here).
pub fn median_encoded_size(
    frames: &[Frame],
    setting: &KnobSetting,
) -> Result<u64, ProfileBuildError> {
    let sizeless = KnobSetting {
        framediff: framebus_core::knobs::DiffThreshold::Off,
        ..*setting
    };
    let mut sizes = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut state = FrameDiffState::new();
        let modified = knobs::apply_setting(frame, &sizeless, &mut state)
            .map_err(|e| ProfileBuildError::Invalid(e.to_string()))?
            .expect("differencing disabled, nothing is dropped");
        sizes.push(encoded_size(&modified));
    }
    sizes.sort_unstable();
    Ok(sizes[sizes.len() / 2])
}
