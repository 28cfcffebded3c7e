//! Scenario files for the simulation runner: structured TOML describing the
//! channel (affine base or calibration points, jitter, seed, interference
//! schedule), the profile (a file path or an inline synthetic spec), the QoS
//! bound, frame rate, and duration.
//!
//! ```toml
//! seed = 7
//! fps = 5
//! duration_s = 20.0
//! controller_enabled = true
//!
//! [channel]
//! # either slope/intercept or calibration points (bytes, ms)
//! points = [[610000, 32.09], [760000, 35.16], [970000, 46.09]]
//! jitter = 0.05
//! schedule = [[5000.0, 6.5]]
//!
//! [bound]
//! latency_max_ms = 100.0
//! accuracy_min_pct = 96.0
//!
//! [profile.synthetic]
//! entries = 20
//! min_size = 60000
//! max_size = 970000
//! accuracy_floor = 96.0
//! accuracy_ceil = 100.0
//! seed = 3
//!
//! [controller]
//! sample_window = 5
//! ```

use std::path::Path;

use serde::Deserialize;

use framebus_core::controller::ControllerConfig;
use framebus_core::netsim::{ChannelModel, Scenario};
use framebus_core::profile::{
    fit_latency_model, load_profile, synthetic_profile, LinearLatencyModel, ProfileTable,
    SyntheticProfileConfig,
};
use framebus_core::{CameraId, QosBound};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub fps: u32,
    pub duration_s: f64,
    #[serde(default = "default_true")]
    pub controller_enabled: bool,
    #[serde(default = "default_camera")]
    pub camera: String,
    pub channel: ChannelSection,
    pub bound: BoundSection,
    pub profile: ProfileSection,
    #[serde(default)]
    pub controller: ControllerSection,
}

fn default_seed() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

fn default_camera() -> String {
    "sim0".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub slope_ms_per_byte: Option<f64>,
    pub intercept_ms: Option<f64>,
    /// Calibration points (size_bytes, latency_ms); fitted by least squares
    /// when slope/intercept are absent.
    pub points: Option<Vec<(u64, f64)>>,
    #[serde(default)]
    pub jitter: f64,
    /// Interference steps as (virtual time ms, multiplier), ascending.
    #[serde(default)]
    pub schedule: Vec<(f64, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub latency_max_ms: f64,
    pub accuracy_min_pct: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub path: Option<String>,
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub entries: usize,
    pub min_size: u64,
    pub max_size: u64,
    pub accuracy_floor: f64,
    pub accuracy_ceil: f64,
    pub seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub k1_bytes_per_ms: Option<f64>,
    pub k2_bytes_per_ms_sample: Option<f64>,
    pub error_threshold_ms: Option<f64>,
    pub integral_clamp_bytes: Option<f64>,
    pub sample_window: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Toml(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ScenarioFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ScenarioError::Toml(e.to_string()))
    }

    /// Resolve into a runnable scenario. Relative profile paths resolve
    /// against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);

        let model: LinearLatencyModel = match (
            self.channel.slope_ms_per_byte,
            self.channel.intercept_ms,
            &self.channel.points,
        ) {
            (Some(slope), intercept, _) => LinearLatencyModel::new(slope, intercept.unwrap_or(0.0))
                .map_err(|e| invalid(e.to_string()))?,
            (None, _, Some(points)) => {
                fit_latency_model(points).map_err(|e| invalid(e.to_string()))?
            }
            _ => {
                return Err(invalid(
                    "channel needs slope_ms_per_byte or calibration points".into(),
                ))
            }
        };

        let profile: ProfileTable = match (&self.profile.path, &self.profile.synthetic) {
            (Some(path), None) => {
                let p = base_dir.join(path);
                load_profile(&p).map_err(|e| invalid(format!("{}: {e}", p.display())))?
            }
            (None, Some(s)) => {
                let entries = synthetic_profile(&SyntheticProfileConfig {
                    entries: s.entries,
                    min_size: s.min_size,
                    max_size: s.max_size,
                    accuracy_floor: s.accuracy_floor,
                    accuracy_ceil: s.accuracy_ceil,
                    seed: s.seed,
                });
                ProfileTable::from_entries(entries).map_err(|e| invalid(e.to_string()))?
            }
            _ => {
                return Err(invalid(
                    "profile needs exactly one of `path` or `synthetic`".into(),
                ))
            }
        };

        let mut channel = ChannelModel::new(model, self.channel.jitter, self.seed)
            .map_err(|e| invalid(e.to_string()))?;
        for &(t_ms, mult) in &self.channel.schedule {
            channel
                .set_interference_step(t_ms, mult)
                .map_err(|e| invalid(e.to_string()))?;
        }

        let bound = QosBound::new(self.bound.latency_max_ms, self.bound.accuracy_min_pct)
            .map_err(|e| invalid(e.to_string()))?;

        let defaults = ControllerConfig::defaults_for(&model, &profile);
        let controller = ControllerConfig {
            k1_bytes_per_ms: self
                .controller
                .k1_bytes_per_ms
                .unwrap_or(defaults.k1_bytes_per_ms),
            k2_bytes_per_ms_sample: self
                .controller
                .k2_bytes_per_ms_sample
                .unwrap_or(defaults.k2_bytes_per_ms_sample),
            error_threshold_ms: self
                .controller
                .error_threshold_ms
                .unwrap_or(defaults.error_threshold_ms),
            integral_clamp_bytes: self
                .controller
                .integral_clamp_bytes
                .unwrap_or(defaults.integral_clamp_bytes),
            sample_window: self
                .controller
                .sample_window
                .unwrap_or(defaults.sample_window),
        };

        Ok(Scenario {
            camera: CameraId::new(self.camera.clone()).map_err(|e| invalid(e.to_string()))?,
            channel,
            profile,
            model,
            bound,
            fps: self.fps,
            duration_s: self.duration_s,
            controller_enabled: self.controller_enabled,
            controller,
        })
    }
}
