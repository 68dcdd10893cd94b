//! Graduated operator alerts.
//!
//! ```text
//!             S <= theta (immediate)
//!   GREEN <──────────────────────────> YELLOW
//!     │  S > theta                      │  S > theta for `debounce` samples
//!     └──────────> YELLOW (pending) ────┴──────────> RED ──(> persist ms)──> RED_ESCALATED
//!                                                     │                        │
//!                       first S <= theta ─────────────┴────────────────────────┘
//! ```
//!
//! Only red entry is debounced; green and yellow follow the score at once.
//! Degraded samples (nothing passed the confidence filters) neither extend
//! nor reset the red streak, and never cancel an active red alert.
//!
//! The red streak counts samples with `S > theta` (strict), while the display
//! band from [`instantaneous_level`](crate::vigilance::instantaneous_level)
//! is red at `S >= theta`. A sample sitting exactly on the threshold is
//! therefore red on the indicator bar but yellow in the alert state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vigilance::{VigilanceConfig, VigilanceSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlertLevel {
    Green,
    Yellow,
    Red,
    RedEscalated,
    NoDetections,
}

impl AlertLevel {
    pub fn is_red(self) -> bool {
        matches!(self, AlertLevel::Red | AlertLevel::RedEscalated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlertEventKind {
    EnterGreen,
    EnterYellow,
    EnterRed,
    Escalate,
    NoDetections,
    ModelDegraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub kind: AlertEventKind,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub score: Option<f64>,
    /// Single chime, red entry only.
    pub audio: bool,
    /// Flashing prompt, escalation only.
    pub flashing: bool,
}

impl AlertEvent {
    fn new(kind: AlertEventKind, sample: &VigilanceSample) -> Self {
        Self {
            kind,
            frame_index: sample.frame_index,
            timestamp_ms: sample.timestamp_ms,
            score: sample.score,
            audio: kind == AlertEventKind::EnterRed,
            flashing: kind == AlertEventKind::Escalate,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlertError {
    #[error("sample at {got} ms arrived after one at {last} ms")]
    OutOfOrder { last: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertState {
    pub level: AlertLevel,
    pub consecutive_red_frames: u32,
    pub red_entered_at_ms: Option<u64>,
    pub last_sample: Option<VigilanceSample>,
    /// Kind of degradation currently being reported, if any.
    pub degraded: Option<AlertEventKind>,
}

impl Default for AlertState {
    fn default() -> Self {
        reset_alert()
    }
}

pub fn reset_alert() -> AlertState {
    AlertState {
        level: AlertLevel::Green,
        consecutive_red_frames: 0,
        red_entered_at_ms: None,
        last_sample: None,
        degraded: None,
    }
}

/// Advances the alert machine by one sample.
pub fn step_alert(
    state: &AlertState,
    sample: &VigilanceSample,
    config: &VigilanceConfig,
) -> Result<(AlertState, Option<AlertEvent>), AlertError> {
    if let Some(last) = &state.last_sample {
        if sample.timestamp_ms < last.timestamp_ms {
            return Err(AlertError::OutOfOrder {
                last: last.timestamp_ms,
                got: sample.timestamp_ms,
            });
        }
    }

    let mut next = state.clone();
    next.last_sample = Some(sample.clone());

    let score = match sample.score {
        Some(s) if !sample.degraded => s,
        _ => {
            let kind = if sample.backend_failed || sample.n_detected_raw > 0 {
                AlertEventKind::ModelDegraded
            } else {
                AlertEventKind::NoDetections
            };
            let event = (state.degraded != Some(kind)).then(|| AlertEvent::new(kind, sample));
            next.degraded = Some(kind);
            if !state.level.is_red() {
                next.level = AlertLevel::NoDetections;
            }
            return Ok((next, event));
        }
    };
    next.degraded = None;

    let theta = config.theta_s;
    let mut event = None;
    if score > theta {
        next.consecutive_red_frames = state.consecutive_red_frames.saturating_add(1);
        match state.level {
            AlertLevel::Red => {
                let entered = state.red_entered_at_ms.unwrap_or(sample.timestamp_ms);
                if sample.timestamp_ms.saturating_sub(entered) > config.escalation_persist_ms {
                    next.level = AlertLevel::RedEscalated;
                    event = Some(AlertEvent::new(AlertEventKind::Escalate, sample));
                }
            }
            AlertLevel::RedEscalated => {}
            _ if next.consecutive_red_frames >= config.debounce_frames => {
                next.level = AlertLevel::Red;
                next.red_entered_at_ms = Some(sample.timestamp_ms);
                event = Some(AlertEvent::new(AlertEventKind::EnterRed, sample));
            }
            _ => {
                next.level = AlertLevel::Yellow;
            }
        }
    } else {
        next.consecutive_red_frames = 0;
        next.red_entered_at_ms = None;
        next.level = if score < config.yellow_factor * theta {
            AlertLevel::Green
        } else {
            AlertLevel::Yellow
        };
    }

    if event.is_none() && next.level != state.level {
        event = match next.level {
            AlertLevel::Green => Some(AlertEvent::new(AlertEventKind::EnterGreen, sample)),
            AlertLevel::Yellow => Some(AlertEvent::new(AlertEventKind::EnterYellow, sample)),
            _ => None,
        };
    }
    Ok((next, event))
}

/// Owned wrapper around [`step_alert`] for single-writer streams.
#[derive(Debug, Clone, Default)]
pub struct AlertMachine {
    state: AlertState,
}

impl AlertMachine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &AlertState {
        &self.state
    }

    pub fn level(&self) -> AlertLevel {
        self.state.level
    }

    pub fn step(
        &mut self,
        sample: &VigilanceSample,
        config: &VigilanceConfig,
    ) -> Result<Option<AlertEvent>, AlertError> {
        let (next, event) = step_alert(&self.state, sample, config)?;
        self.state = next;
        Ok(event)
    }

    pub fn reset(&mut self) {
        self.state = reset_alert();
    }
}
