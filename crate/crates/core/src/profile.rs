//! Characterization data consumed by the latency controller: the linear
//! latency-vs-size regression, the size-keyed floor lookup, and the
//! accuracy-keyed setting lookup.
//!
//! Profile files are UTF-8 lines `setting<TAB>size_bytes<TAB>accuracy_pct`
//! where `setting` uses the knob textual form; lines starting with `#` are
//! ignored. Latency calibration files are lines `size_bytes<TAB>latency_ms`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::knobs::KnobSetting;

/// One characterization triple: a knob setting, the median encoded frame
/// size it produces, and the profiled application accuracy (normalized F1
/// as a percentage).
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    pub setting: KnobSetting,
    pub size_bytes: u64,
    pub accuracy_pct: f64,
}

impl ProfileEntry {
    pub fn new(
        setting: KnobSetting,
        size_bytes: u64,
        accuracy_pct: f64,
    ) -> Result<Self, ProfileError> {
        if size_bytes == 0 {
            return Err(ProfileError::InvalidEntry(format!(
                "size must be positive for setting {setting:?}"
            )));
        }
        if !(accuracy_pct > 0.0 && accuracy_pct <= 100.0) {
            return Err(ProfileError::InvalidEntry(format!(
                "accuracy {accuracy_pct} out of (0, 100]"
            )));
        }
        Ok(ProfileEntry {
            setting,
            size_bytes,
            accuracy_pct,
        })
    }
}

/// Immutable lookup structure over profile entries.
///
/// `size_index` keys are the distinct profiled sizes; at each size the entry
/// with the maximum accuracy wins. `accuracy_index` maps an accuracy value
/// back to its entry; collisions keep the larger-size (less degraded) entry.
#[derive(Debug, Clone)]
pub struct ProfileTable {
    entries: Vec<ProfileEntry>,
    size_index: BTreeMap<u64, usize>,
    accuracy_index: HashMap<u64, usize>,
    setting_index: HashMap<KnobSetting, usize>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("profile contains no entries")]
    EmptyProfile,
    #[error("invalid profile entry: {0}")]
    InvalidEntry(String),
    #[error("need at least 2 points with distinct sizes for a latency fit")]
    DegeneratePoints,
    #[error("latency calibration has non-positive slope {0}")]
    NonPositiveSlope(f64),
    #[error("latency {latency_ms} ms is at or below the model intercept {intercept_ms} ms")]
    BelowIntercept { latency_ms: f64, intercept_ms: f64 },
    #[error("accuracy {0} is not a key of this table")]
    UnknownAccuracy(f64),
}

impl ProfileTable {
    pub fn from_entries(entries: Vec<ProfileEntry>) -> Result<Self, ProfileError> {
        if entries.is_empty() {
            return Err(ProfileError::EmptyProfile);
        }
        for e in &entries {
            // re-validate, entries may have been built directly
            ProfileEntry::new(e.setting, e.size_bytes, e.accuracy_pct)?;
        }
        let mut size_index: BTreeMap<u64, usize> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            match size_index.get(&e.size_bytes) {
                Some(&j) if entries[j].accuracy_pct >= e.accuracy_pct => {}
                _ => {
                    size_index.insert(e.size_bytes, i);
                }
            }
        }
        let mut accuracy_index: HashMap<u64, usize> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let key = e.accuracy_pct.to_bits();
            match accuracy_index.get(&key) {
                Some(&j) if entries[j].size_bytes >= e.size_bytes => {}
                _ => {
                    accuracy_index.insert(key, i);
                }
            }
        }
        let mut setting_index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            setting_index.entry(e.setting).or_insert(i);
        }
        Ok(ProfileTable {
            entries,
            size_index,
            accuracy_index,
            setting_index,
        })
    }

    pub fn entries(&self) -> &[ProfileEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Smallest profiled size.
    pub fn min_size(&self) -> u64 {
        *self.size_index.keys().next().expect("table is non-empty")
    }

    /// Largest profiled size.
    pub fn max_size(&self) -> u64 {
        *self
            .size_index
            .keys()
            .next_back()
            .expect("table is non-empty")
    }

    /// Best accuracy anywhere in the table.
    pub fn max_accuracy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.accuracy_pct)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Floor query: the indexed entry with the largest size at or below
    /// `size_bytes`, or `None` below the smallest key.
    pub fn lookup_by_size(&self, size_bytes: u64) -> Option<&ProfileEntry> {
        self.size_index
            .range(..=size_bytes)
            .next_back()
            .map(|(_, &i)| &self.entries[i])
    }

    /// Exact-key accuracy lookup; keys are accuracies produced by
    /// [`Self::lookup_by_size`] on the same table.
    pub fn lookup_by_accuracy(&self, accuracy_pct: f64) -> Result<&ProfileEntry, ProfileError> {
        self.accuracy_index
            .get(&accuracy_pct.to_bits())
            .map(|&i| &self.entries[i])
            .ok_or(ProfileError::UnknownAccuracy(accuracy_pct))
    }

    /// Entry recorded for a setting (first occurrence wins).
    pub fn entry_for_setting(&self, setting: &KnobSetting) -> Option<&ProfileEntry> {
        self.setting_index.get(setting).map(|&i| &self.entries[i])
    }

    /// The smallest-size indexed entry; the graceful-degradation fallback.
    pub fn smallest_entry(&self) -> &ProfileEntry {
        self.lookup_by_size(self.min_size())
            .expect("table is non-empty")
    }
}

/// Linear model of network latency (ms) as a function of encoded frame
/// size (bytes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLatencyModel {
    slope_ms_per_byte: f64,
    intercept_ms: f64,
}

impl LinearLatencyModel {
    pub fn new(slope_ms_per_byte: f64, intercept_ms: f64) -> Result<Self, ProfileError> {
        if !(slope_ms_per_byte > 0.0) {
            return Err(ProfileError::NonPositiveSlope(slope_ms_per_byte));
        }
        Ok(LinearLatencyModel {
            slope_ms_per_byte,
            intercept_ms,
        })
    }

    pub fn slope_ms_per_byte(&self) -> f64 {
        self.slope_ms_per_byte
    }

    pub fn intercept_ms(&self) -> f64 {
        self.intercept_ms
    }

    /// Predicted single-node latency for an encoded size.
    pub fn predict_ms(&self, size_bytes: u64) -> f64 {
        self.intercept_ms + self.slope_ms_per_byte * size_bytes as f64
    }

    /// Raw inversion of the line, unclamped.
    pub fn invert_bytes(&self, latency_ms: f64) -> Result<f64, ProfileError> {
        if latency_ms <= self.intercept_ms {
            return Err(ProfileError::BelowIntercept {
                latency_ms,
                intercept_ms: self.intercept_ms,
            });
        }
        Ok((latency_ms - self.intercept_ms) / self.slope_ms_per_byte)
    }
}

impl fmt::Display for LinearLatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "latency_ms = {:.6e} * size_bytes + {:.4}",
            self.slope_ms_per_byte, self.intercept_ms
        )
    }
}

/// Ordinary least squares fit of latency on size.
pub fn fit_latency_model(points: &[(u64, f64)]) -> Result<LinearLatencyModel, ProfileError> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(ProfileError::DegeneratePoints);
    }
    let first = points[0].0;
    if points.iter().all(|&(s, _)| s == first) {
        return Err(ProfileError::DegeneratePoints);
    }
    let mean_x = points.iter().map(|&(s, _)| s as f64).sum::<f64>() / n;
    let mean_y = points.iter().map(|&(_, l)| l).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(s, l) in points {
        let dx = s as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (l - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    LinearLatencyModel::new(slope, intercept)
}

/// Algorithm step: target latency to nominal frame size, clamped into the
/// profiled size range so the result is always actionable.
pub fn size_for_latency(
    model: &LinearLatencyModel,
    table: &ProfileTable,
    latency_ms: f64,
) -> Result<u64, ProfileError> {
    let raw = model.invert_bytes(latency_ms)?;
    Ok((raw.clamp(table.min_size() as f64, table.max_size() as f64)).floor() as u64)
}

/// Load a profile file (see module docs for the format).
pub fn load_profile(path: impl AsRef<Path>) -> Result<ProfileTable, ProfileError> {
    let file = std::fs::File::open(path)?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        // the setting field may legitimately be empty (identity), so the
        // line is split untrimmed
        entries.push(parse_profile_line(
            line.trim_end_matches(['\r', '\n']),
            lineno,
        )?);
    }
    if entries.is_empty() {
        return Err(ProfileError::EmptyProfile);
    }
    ProfileTable::from_entries(entries)
}

fn parse_profile_line(line: &str, lineno: usize) -> Result<ProfileEntry, ProfileError> {
    let err = |message: String| ProfileError::Parse {
        line: lineno,
        message,
    };
    let mut fields = line.split('\t');
    let setting_text = fields.next().unwrap_or_default();
    let size_text = fields
        .next()
        .ok_or_else(|| err("missing size field".into()))?;
    let acc_text = fields
        .next()
        .ok_or_else(|| err("missing accuracy field".into()))?;
    if fields.next().is_some() {
        return Err(err("too many fields".into()));
    }
    let setting: KnobSetting = setting_text.parse().map_err(|e| err(format!("{e}")))?;
    let size_bytes: u64 = size_text
        .trim()
        .parse()
        .map_err(|_| err(format!("bad size {size_text:?}")))?;
    let accuracy_pct: f64 = acc_text
        .trim()
        .parse()
        .map_err(|_| err(format!("bad accuracy {acc_text:?}")))?;
    ProfileEntry::new(setting, size_bytes, accuracy_pct).map_err(|e| err(format!("{e}")))
}

/// Write entries in the profile file format. `header` lines are emitted as
/// `#` comments.
pub fn save_profile(
    entries: &[ProfileEntry],
    path: impl AsRef<Path>,
    header: &[&str],
) -> Result<(), ProfileError> {
    let mut out = std::fs::File::create(path)?;
    for h in header {
        writeln!(out, "# {h}")?;
    }
    for e in entries {
        writeln!(out, "{}\t{}\t{}", e.setting, e.size_bytes, e.accuracy_pct)?;
    }
    Ok(())
}

/// Load a latency calibration file: lines `size_bytes<TAB>latency_ms`.
pub fn load_latency_calibration(path: impl AsRef<Path>) -> Result<Vec<(u64, f64)>, ProfileError> {
    let file = std::fs::File::open(path)?;
    let mut points = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| ProfileError::Parse {
            line: lineno,
            message,
        };
        let (size_text, lat_text) = trimmed
            .split_once('\t')
            .ok_or_else(|| err("expected size<TAB>latency".into()))?;
        let size: u64 = size_text
            .trim()
            .parse()
            .map_err(|_| err(format!("bad size {size_text:?}")))?;
        let lat: f64 = lat_text
            .trim()
            .parse()
            .map_err(|_| err(format!("bad latency {lat_text:?}")))?;
        points.push((size, lat));
    }
    Ok(points)
}

/// Parameters for the desk-scale synthetic profile generator. Fabricated
/// entries span `[min_size, max_size]` with accuracy weakly increasing with
/// size inside `[accuracy_floor, accuracy_ceil]`; the identity setting sits
/// at `max_size` with `accuracy_ceil`.
#[derive(Debug, Clone)]
pub struct SyntheticProfileConfig {
    pub entries: usize,
    pub min_size: u64,
    pub max_size: u64,
    pub accuracy_floor: f64,
    pub accuracy_ceil: f64,
    pub seed: u64,
}

impl Default for SyntheticProfileConfig {
    fn default() -> Self {
        SyntheticProfileConfig {
            entries: 30,
            min_size: 100_000,
            max_size: 1_000_000,
            accuracy_floor: 90.0,
            accuracy_ceil: 100.0,
            seed: 1,
        }
    }
}

/// Fabricate a deterministic synthetic profile. All numbers are synthetic;
/// [`save_profile`] callers should label the file accordingly.
pub fn synthetic_profile(cfg: &SyntheticProfileConfig) -> Vec<ProfileEntry> {
    assert!(cfg.entries >= 2, "need at least identity plus one entry");
    assert!(cfg.min_size >= 1 && cfg.min_size < cfg.max_size);
    assert!(cfg.accuracy_floor > 0.0 && cfg.accuracy_floor <= cfg.accuracy_ceil);
    assert!(cfg.accuracy_ceil <= 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Non-identity settings ordered most-degraded first, so ascending sizes
    // pair with increasing quality.
    let mut settings: Vec<KnobSetting> = KnobSetting::enumerate_all()
        .filter(|s| !s.is_identity() && s.framediff == crate::knobs::DiffThreshold::Off)
        .collect();
    settings.reverse();

    let n = cfg.entries;
    let mut out = Vec::with_capacity(n);
    let span = (cfg.max_size - cfg.min_size) as f64;
    let acc_span = cfg.accuracy_ceil - cfg.accuracy_floor;
    let mut last_size = 0u64;
    let mut last_acc = 0.0f64;
    for i in 0..n - 1 {
        let frac = i as f64 / (n - 1) as f64;
        let jitter = rng.random_range(-0.02..0.02);
        let size = cfg.min_size as f64 + span * (frac + jitter).clamp(0.0, 0.98);
        let mut size = size as u64;
        if size <= last_size {
            size = last_size + 1;
        }
        last_size = size;
        let acc_jitter = rng.random_range(-0.2..0.2);
        let mut acc = cfg.accuracy_floor + acc_span * frac.powf(0.7) + acc_jitter;
        acc = acc.clamp(cfg.accuracy_floor, cfg.accuracy_ceil);
        if acc < last_acc {
            acc = last_acc; // keep accuracy weakly increasing with size
        }
        last_acc = acc;
        let setting = settings[i % settings.len()];
        out.push(ProfileEntry {
            setting,
            size_bytes: size,
            accuracy_pct: acc,
        });
    }
    out.push(ProfileEntry {
        setting: KnobSetting::identity(),
        size_bytes: cfg.max_size,
        accuracy_pct: cfg.accuracy_ceil,
    });
    out
}
