//! Deterministic simulated wireless channel and closed-loop measurement
//! harness. Latency is an affine function of encoded size scaled by a
//! piecewise-constant interference multiplier plus seeded uniform jitter,
//! so controller experiments run at desk scale in virtual time and replay
//! bit-identically for a fixed seed.

use std::io::{self, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::controller::{
    ControlDecision, ControlEvent, ControllerConfig, ControllerError, LatencyController,
};
use crate::frame::{CameraId, QosBound, Timestamp};
use crate::knobs::KnobSetting;
use crate::profile::{LinearLatencyModel, ProfileTable};

#[derive(Debug, Error)]
pub enum NetsimError {
    #[error("percentile of an empty sample set")]
    EmptySamples,
    #[error("percentile {0} out of (0, 100]")]
    InvalidPercentile(f64),
    #[error("schedule step at {t_ms} ms is not after the last step at {last_ms} ms")]
    NonMonotonicSchedule { t_ms: f64, last_ms: f64 },
    #[error("interference multiplier {0} must be >= 1")]
    InvalidMultiplier(f64),
    #[error("jitter {0} must be in [0, 1)")]
    InvalidJitter(f64),
    #[error("profile has no entry for setting {0:?}")]
    MissingSetting(KnobSetting),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Nearest-rank percentile: the value at index `ceil(p/100 * n)` of the
/// ascending sort.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, NetsimError> {
    if samples.is_empty() {
        return Err(NetsimError::EmptySamples);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(NetsimError::InvalidPercentile(p));
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// One simulated transmission, in virtual time.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRecord {
    pub ts_sent: Timestamp,
    pub ts_received: Timestamp,
    pub size_bytes: u64,
    pub camera_id: CameraId,
}

/// Simulated channel: affine base model, stepwise interference multiplier
/// schedule, and relative jitter drawn from a seeded PRNG.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    base: LinearLatencyModel,
    schedule: Vec<(f64, f64)>,
    jitter: f64,
    rng: ChaCha8Rng,
}

impl ChannelModel {
    pub fn new(base: LinearLatencyModel, jitter: f64, seed: u64) -> Result<Self, NetsimError> {
        if !(0.0..1.0).contains(&jitter) {
            return Err(NetsimError::InvalidJitter(jitter));
        }
        Ok(ChannelModel {
            base,
            schedule: Vec::new(),
            jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn base(&self) -> &LinearLatencyModel {
        &self.base
    }

    /// Schedule a multiplier step at virtual time `t_ms`; it applies to all
    /// transmissions at or after that instant. Steps must be appended in
    /// strictly increasing time order.
    pub fn set_interference_step(&mut self, t_ms: f64, multiplier: f64) -> Result<(), NetsimError> {
        if multiplier < 1.0 {
            return Err(NetsimError::InvalidMultiplier(multiplier));
        }
        if let Some(&(last, _)) = self.schedule.last() {
            if t_ms <= last {
                return Err(NetsimError::NonMonotonicSchedule {
                    t_ms,
                    last_ms: last,
                });
            }
        }
        self.schedule.push((t_ms, multiplier));
        Ok(())
    }

    /// Multiplier in effect at virtual time `t_ms` (1.0 before the first
    /// scheduled step).
    pub fn multiplier_at(&self, t_ms: f64) -> f64 {
        self.schedule
            .iter()
            .rev()
            .find(|&&(t, _)| t <= t_ms)
            .map(|&(_, m)| m)
            .unwrap_or(1.0)
    }

    /// Latency of transmitting `size_bytes` at virtual time `now_ms`:
    /// `(intercept + slope * size) * multiplier(now) * (1 + u)` with `u`
    /// uniform in `[-jitter, +jitter]`. Deterministic given seed and call
    /// order.
    pub fn transmit(&mut self, size_bytes: u64, now_ms: f64) -> f64 {
        let base = self.base.predict_ms(size_bytes);
        let mult = self.multiplier_at(now_ms);
        let u = if self.jitter > 0.0 {
            self.rng.random_range(-self.jitter..self.jitter)
        } else {
            0.0
        };
        (base * mult * (1.0 + u)).max(0.0)
    }
}

/// One simulated camera node: its channel, characterization, QoS bound,
/// frame rate, and controller configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub camera: CameraId,
    pub channel: ChannelModel,
    pub profile: ProfileTable,
    pub model: LinearLatencyModel,
    pub bound: QosBound,
    pub fps: u32,
    pub duration_s: f64,
    pub controller_enabled: bool,
    pub controller: ControllerConfig,
}

/// One sample of the closed-loop time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPoint {
    pub t_virtual_ms: f64,
    pub p95_ms: f64,
    pub setting: KnobSetting,
    pub accuracy_pct: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SimSeries {
    pub points: Vec<SimPoint>,
    pub events: Vec<ControlEvent>,
    pub records: Vec<LatencyRecord>,
}

impl SimSeries {
    /// CSV with header `t_virtual_ms,p95_ms,setting,accuracy_pct`.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "t_virtual_ms,p95_ms,setting,accuracy_pct")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{}",
                p.t_virtual_ms, p.p95_ms, p.setting, p.accuracy_pct
            )?;
        }
        Ok(())
    }

    /// Points at or after `t_ms`.
    pub fn after(&self, t_ms: f64) -> impl Iterator<Item = &SimPoint> {
        self.points.iter().filter(move |p| p.t_virtual_ms >= t_ms)
    }
}

struct NodeState {
    controller: LatencyController,
    channel: ChannelModel,
    series: SimSeries,
}

impl NodeState {
    fn new(sc: &Scenario) -> Result<Self, NetsimError> {
        let controller = LatencyController::new(sc.controller, sc.bound, &sc.model, &sc.profile)?;
        Ok(NodeState {
            controller,
            channel: sc.channel.clone(),
            series: SimSeries::default(),
        })
    }

    fn step(&mut self, sc: &Scenario, t_ms: f64) -> Result<(), NetsimError> {
        let setting = *self.controller.current_setting();
        let entry = sc
            .profile
            .entry_for_setting(&setting)
            .ok_or(NetsimError::MissingSetting(setting))?;
        let latency_ms = self.channel.transmit(entry.size_bytes, t_ms);
        let ts_sent = Timestamp::from_micros((t_ms * 1_000.0) as u64);
        let ts_received = Timestamp::from_micros(((t_ms + latency_ms) * 1_000.0) as u64);
        self.series.records.push(LatencyRecord {
            ts_sent,
            ts_received,
            size_bytes: entry.size_bytes,
            camera_id: sc.camera.clone(),
        });
        self.controller.observe_latency(latency_ms);
        if sc.controller_enabled {
            match self.controller.control_step(&sc.profile) {
                ControlDecision::Adjusted {
                    setting: chosen, ..
                } if chosen != setting => {
                    self.series.events.push(ControlEvent::KnobChange {
                        ts: ts_sent,
                        setting: chosen,
                        p95_ms: self.controller.p95_ms().unwrap_or(latency_ms),
                    });
                }
                ControlDecision::Infeasible { best_accuracy_pct } => {
                    self.series.events.push(ControlEvent::Infeasible {
                        ts: ts_sent,
                        best_accuracy_pct,
                    });
                }
                _ => {}
            }
        }
        let current = *self.controller.current_setting();
        let current_entry = sc
            .profile
            .entry_for_setting(&current)
            .ok_or(NetsimError::MissingSetting(current))?;
        self.series.points.push(SimPoint {
            t_virtual_ms: t_ms,
            p95_ms: self.controller.p95_ms().unwrap_or(latency_ms),
            setting: current,
            accuracy_pct: current_entry.accuracy_pct,
        });
        Ok(())
    }
}

/// Drive one node's publish -> control -> transmit loop in virtual time.
/// Fully deterministic for a fixed scenario.
pub fn run_closed_loop(scenario: &Scenario) -> Result<SimSeries, NetsimError> {
    Ok(run_multi_node(std::slice::from_ref(scenario))?
        .pop()
        .unwrap())
}

/// Drive several independent camera nodes over one virtual timeline.
/// Events interleave deterministically by virtual time, ties broken by
/// camera id.
pub fn run_multi_node(scenarios: &[Scenario]) -> Result<Vec<SimSeries>, NetsimError> {
    let mut states: Vec<NodeState> = scenarios
        .iter()
        .map(NodeState::new)
        .collect::<Result<_, _>>()?;

    // merged send schedule across nodes
    let mut sends: Vec<(f64, &str, usize, u64)> = Vec::new();
    for (i, sc) in scenarios.iter().enumerate() {
        let frames = (sc.duration_s * sc.fps as f64).floor() as u64;
        let interval = 1_000.0 / sc.fps as f64;
        for k in 0..frames {
            sends.push((k as f64 * interval, sc.camera.as_str(), i, k));
        }
    }
    sends.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));

    for (t_ms, _, i, _) in sends {
        states[i].step(&scenarios[i], t_ms)?;
    }
    Ok(states.into_iter().map(|s| s.series).collect())
}
