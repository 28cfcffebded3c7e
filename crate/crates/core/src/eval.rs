//! Detection-accuracy arithmetic used to author profile tables: IoU,
//! exclusive greedy matching, TP/FP/FN counting, and the F1 score.
//!
//! Detection files are UTF-8 lines `frame_ts<TAB>x1,y1,x2,y2`, one box per
//! line; `#` lines are comments.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

/// Axis-aligned box: top-left (x1, y1), bottom-right (x2, y2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid box: ({x1},{y1})-({x2},{y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("baseline F1 is zero; normalized score undefined")]
    ZeroBaseline,
    #[error("detection file i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("detection file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, EvalError> {
        if !(x1 < x2 && y1 < y2) {
            return Err(EvalError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Intersection over union of two boxes; 0 when disjoint, 1 when identical.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Match counts for one or more frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchResult {
    pub fn merge(self, other: MatchResult) -> MatchResult {
        MatchResult {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Greedy exclusive matching: ground truths claim, in input order, the
/// unclaimed prediction with the highest IoU strictly above the threshold
/// (ties go to the lowest prediction index). Matched pairs are TPs,
/// unmatched predictions FPs, unmatched ground truths FNs.
pub fn match_detections(preds: &[BBox], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut claimed = vec![false; preds.len()];
    let mut tp = 0;
    for gt in gts {
        let mut best: Option<(usize, f64)> = None;
        for (i, pred) in preds.iter().enumerate() {
            if claimed[i] {
                continue;
            }
            let overlap = iou(gt, pred);
            if overlap > iou_threshold {
                let better = match best {
                    Some((_, b)) => overlap > b,
                    None => true,
                };
                if better {
                    best = Some((i, overlap));
                }
            }
        }
        if let Some((i, _)) = best {
            claimed[i] = true;
            tp += 1;
        }
    }
    MatchResult {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
    }
}

/// F1 per `2 * P * R / (P + R)`; 0 by convention when there are no true
/// positives.
pub fn f1(m: &MatchResult) -> f64 {
    if m.tp == 0 {
        return 0.0;
    }
    let precision = m.tp as f64 / (m.tp + m.fp) as f64;
    let recall = m.tp as f64 / (m.tp + m.fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Normalized F1 as a percentage of the unmodified-frame baseline.
pub fn normalized_f1(modified_score: f64, baseline_score: f64) -> Result<f64, EvalError> {
    if baseline_score <= 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * modified_score / baseline_score)
}

/// Boxes grouped by frame timestamp.
pub type DetectionSet = BTreeMap<u64, Vec<BBox>>;

/// Load a detection file (`frame_ts<TAB>x1,y1,x2,y2` per line).
pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out: DetectionSet = BTreeMap::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| EvalError::Parse {
            line: lineno,
            message,
        };
        let (ts_text, coords) = trimmed
            .split_once('\t')
            .ok_or_else(|| err("expected frame_ts<TAB>x1,y1,x2,y2".into()))?;
        let ts: u64 = ts_text
            .trim()
            .parse()
            .map_err(|_| err(format!("bad timestamp {ts_text:?}")))?;
        let parts: Vec<&str> = coords.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(err(format!("expected 4 coordinates, got {}", parts.len())));
        }
        let mut vals = [0.0f64; 4];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .parse()
                .map_err(|_| err(format!("bad coordinate {p:?}")))?;
        }
        let bbox = BBox::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| err(e.to_string()))?;
        out.entry(ts).or_default().push(bbox);
    }
    Ok(out)
}

/// Match predictions against ground truth across all frames (micro-average:
/// counts are summed over frames before scoring).
pub fn match_detection_sets(
    preds: &DetectionSet,
    gts: &DetectionSet,
    iou_threshold: f64,
) -> MatchResult {
    let empty: Vec<BBox> = Vec::new();
    let mut total = MatchResult::default();
    let keys: std::collections::BTreeSet<u64> = preds.keys().chain(gts.keys()).copied().collect();
    for ts in keys {
        let p = preds.get(&ts).unwrap_or(&empty);
        let g = gts.get(&ts).unwrap_or(&empty);
        total = total.merge(match_detections(p, g, iou_threshold));
    }
    total
}
