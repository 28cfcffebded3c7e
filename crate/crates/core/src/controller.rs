//! The network latency controller: a PI loop that maps observed latency
//! error to a target encoded-frame size, then through the profile table to
//! a knob setting whose profiled accuracy satisfies the subscriber's floor.
//!
//! Control arithmetic, in the order it runs each step:
//!
//! 1. `error = p95(window) - latency_target`; if `error <= threshold` the
//!    step is a no-op (deadband, integral untouched).
//! 2. `integral += error`, clamped so `|integral * k2| <= integral_clamp`.
//! 3. `size = nominal - (k1 * error + k2 * integral)`, clamped into the
//!    profiled size range, where `nominal` is the regression inverse of the
//!    latency target. Positive error therefore shrinks the frame.
//! 4. Floor-lookup the profile at `size`; accept the entry if its accuracy
//!    meets the floor, otherwise report infeasibility alongside the best
//!    accuracy the table offers, and fall back to the smallest-size setting
//!    so transmission continues while the application decides.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::frame::{Frame, QosBound, Timestamp};
use crate::knobs::{self, FrameDiffState, KnobError, KnobSetting};
use crate::netsim::percentile;
use crate::profile::{size_for_latency, LinearLatencyModel, ProfileError, ProfileTable};

/// PI gains and loop shape. Gains are non-negative; the subtraction in the
/// control law carries the sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Proportional gain, bytes of size correction per ms of error.
    pub k1_bytes_per_ms: f64,
    /// Integral gain, bytes per accumulated ms-sample of error.
    pub k2_bytes_per_ms_sample: f64,
    /// Deadband: errors at or below this take no action.
    pub error_threshold_ms: f64,
    /// Anti-windup bound on the integral contribution in bytes.
    pub integral_clamp_bytes: f64,
    /// Number of recent latency samples feeding the p95 statistic.
    pub sample_window: usize,
}

impl ControllerConfig {
    /// Defaults derived from the calibration: proportional gain at 0.6 of
    /// the model's bytes-per-ms, integral a tenth of that, 5 ms deadband,
    /// clamp at twice the largest profiled size, 20-sample window.
    pub fn defaults_for(model: &LinearLatencyModel, table: &ProfileTable) -> Self {
        let k1 = 0.6 / model.slope_ms_per_byte();
        ControllerConfig {
            k1_bytes_per_ms: k1,
            k2_bytes_per_ms_sample: 0.1 * k1,
            error_threshold_ms: 5.0,
            integral_clamp_bytes: 2.0 * table.max_size() as f64,
            sample_window: 20,
        }
    }

    fn validate(&self) -> Result<(), ControllerError> {
        if self.k1_bytes_per_ms < 0.0 || self.k2_bytes_per_ms_sample < 0.0 {
            return Err(ControllerError::InvalidConfig("gains must be non-negative"));
        }
        if !(self.error_threshold_ms > 0.0) {
            return Err(ControllerError::InvalidConfig(
                "error threshold must be positive",
            ));
        }
        if !(self.integral_clamp_bytes > 0.0) {
            return Err(ControllerError::InvalidConfig(
                "integral clamp must be positive",
            ));
        }
        if self.sample_window == 0 {
            return Err(ControllerError::InvalidConfig("sample window must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Outcome of one control step.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlDecision {
    /// Error within the deadband (or no samples yet); setting unchanged.
    NoChange,
    /// A setting satisfying both bounds was selected.
    Adjusted {
        setting: KnobSetting,
        size_bytes: u64,
        accuracy_pct: f64,
    },
    /// No entry at or below the computed size meets the accuracy floor.
    /// Carries the best accuracy the profile can offer so the application
    /// can decide whether to relax its bounds.
    Infeasible { best_accuracy_pct: f64 },
}

/// Structured log line for controller activity.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlEvent {
    KnobChange {
        ts: Timestamp,
        setting: KnobSetting,
        p95_ms: f64,
    },
    Infeasible {
        ts: Timestamp,
        best_accuracy_pct: f64,
    },
}

impl fmt::Display for ControlEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlEvent::KnobChange {
                ts,
                setting,
                p95_ms,
            } => {
                write!(
                    f,
                    "ts={ts} event=knob_change setting={setting} p95_ms={p95_ms}"
                )
            }
            ControlEvent::Infeasible {
                ts,
                best_accuracy_pct,
            } => {
                write!(f, "ts={ts} event=infeasible best_acc={best_accuracy_pct}")
            }
        }
    }
}

/// One controller instance per camera; instances share no state.
#[derive(Debug, Clone)]
pub struct LatencyController {
    config: ControllerConfig,
    target: QosBound,
    nominal_bytes: f64,
    integral_ms: f64,
    current_setting: KnobSetting,
    samples: VecDeque<f64>,
}

impl LatencyController {
    pub fn new(
        config: ControllerConfig,
        target: QosBound,
        model: &LinearLatencyModel,
        table: &ProfileTable,
    ) -> Result<Self, ControllerError> {
        config.validate()?;
        let nominal = Self::nominal_for(&target, model, table)?;
        Ok(LatencyController {
            config,
            target,
            nominal_bytes: nominal,
            integral_ms: 0.0,
            current_setting: KnobSetting::identity(),
            samples: VecDeque::with_capacity(config.sample_window),
        })
    }

    /// Regression inverse of the latency target, clamped into the profiled
    /// size range. A target at or below the model intercept is unreachable
    /// at any size; the nominal saturates at the smallest profiled size and
    /// the loop reports infeasibility through the accuracy check.
    fn nominal_for(
        target: &QosBound,
        model: &LinearLatencyModel,
        table: &ProfileTable,
    ) -> Result<f64, ControllerError> {
        match size_for_latency(model, table, target.latency_max_ms()) {
            Ok(n) => Ok(n as f64),
            Err(ProfileError::BelowIntercept { .. }) => Ok(table.min_size() as f64),
            Err(e) => Err(e.into()),
        }
    }

    /// Replace the QoS target: integral resets, the setting returns to
    /// identity, and the nominal size is recomputed from the model.
    pub fn set_target(
        &mut self,
        target: QosBound,
        model: &LinearLatencyModel,
        table: &ProfileTable,
    ) -> Result<(), ControllerError> {
        let nominal = Self::nominal_for(&target, model, table)?;
        self.target = target;
        self.nominal_bytes = nominal;
        self.integral_ms = 0.0;
        self.current_setting = KnobSetting::identity();
        Ok(())
    }

    pub fn target(&self) -> &QosBound {
        &self.target
    }

    pub fn current_setting(&self) -> &KnobSetting {
        &self.current_setting
    }

    pub fn nominal_bytes(&self) -> f64 {
        self.nominal_bytes
    }

    pub fn integral_ms(&self) -> f64 {
        self.integral_ms
    }

    /// Push one per-frame latency sample into the sliding window.
    pub fn observe_latency(&mut self, latency_ms: f64) {
        let v = latency_ms.max(0.0);
        if self.samples.len() == self.config.sample_window {
            self.samples.pop_front();
        }
        self.samples.push_back(v);
    }

    /// Nearest-rank 95th percentile of the sample window.
    pub fn p95_ms(&self) -> Option<f64> {
        let samples: Vec<f64> = self.samples.iter().copied().collect();
        percentile(&samples, 95.0).ok()
    }

    /// Run one control step against the profile. See module docs for the
    /// exact arithmetic.
    pub fn control_step(&mut self, table: &ProfileTable) -> ControlDecision {
        let Some(p95) = self.p95_ms() else {
            return ControlDecision::NoChange;
        };
        let error = p95 - self.target.latency_max_ms();
        if error <= self.config.error_threshold_ms {
            return ControlDecision::NoChange;
        }
        self.integral_ms += error;
        if self.config.k2_bytes_per_ms_sample > 0.0 {
            let cap = self.config.integral_clamp_bytes / self.config.k2_bytes_per_ms_sample;
            self.integral_ms = self.integral_ms.clamp(-cap, cap);
        }
        let correction = self.config.k1_bytes_per_ms * error
            + self.config.k2_bytes_per_ms_sample * self.integral_ms;
        let raw = self.nominal_bytes - correction;
        let size_bytes = raw
            .clamp(table.min_size() as f64, table.max_size() as f64)
            .floor() as u64;
        let entry = table
            .lookup_by_size(size_bytes)
            .expect("clamped size is at or above the smallest profiled size");
        if entry.accuracy_pct >= self.target.accuracy_min_pct() {
            self.current_setting = entry.setting;
            ControlDecision::Adjusted {
                setting: entry.setting,
                size_bytes: entry.size_bytes,
                accuracy_pct: entry.accuracy_pct,
            }
        } else {
            // graceful degradation: keep transmitting at the smallest
            // profiled size while the notice propagates
            self.current_setting = table.smallest_entry().setting;
            ControlDecision::Infeasible {
                best_accuracy_pct: table.max_accuracy(),
            }
        }
    }

    /// Apply the current setting to a frame (deterministic given state).
    pub fn process_frame(
        &self,
        frame: &Frame,
        diff_state: &mut FrameDiffState,
    ) -> Result<Option<Frame>, KnobError> {
        knobs::apply_setting(frame, &self.current_setting, diff_state)
    }
}
