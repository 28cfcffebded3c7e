//! Timeout and retry policies. Failure detection rides on RPC timeouts
//! (no heartbeats): liveness is inferred from the continuous frame stream.

use std::time::Duration;

/// RPC timeouts. `publish` is small (camera and broker share a node);
/// `subscribe` scales with the frame interval plus base network latency;
/// `control` bounds the knob-pipeline time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeoutPolicy {
    pub publish: Duration,
    pub subscribe: Duration,
    pub control: Duration,
}

impl Default for TimeoutPolicy {
    fn default() -> Self {
        TimeoutPolicy {
            publish: Duration::from_millis(50),
            subscribe: Duration::from_millis(3 * 200 + 100),
            control: Duration::from_millis(500),
        }
    }
}

impl TimeoutPolicy {
    /// Subscribe timeout derived from the camera frame rate: three frame
    /// intervals plus the given base network latency.
    pub fn for_fps(fps: u16, base_network_ms: u64) -> Self {
        let interval_ms = 1_000 / u64::from(fps.max(1));
        TimeoutPolicy {
            subscribe: Duration::from_millis(3 * interval_ms + base_network_ms),
            ..TimeoutPolicy::default()
        }
    }
}

/// Reconnect policy: one initial attempt plus `retries` more with a fixed
/// backoff between attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            retries: 0,
            backoff: Duration::ZERO,
        }
    }

    pub fn attempts(&self) -> u32 {
        self.retries + 1
    }
}
