//! Wire protocol, version 1.
//!
//! Telemetry flows server → client on `/session/{id}/telemetry`; commands
//! flow client → server on `/session/{id}/command`, each answered on the
//! same socket with an `ACK` or `REJECT`.
//!
//! Within a session, `seq` on broadcast messages (SAMPLE, ALERT, STATE,
//! LATENCY, MISSION_END) increases by exactly one. Two messages are exempt:
//! the `STATE` snapshot a client gets on connect carries the seq of the last
//! broadcast message (the next one it receives is `seq + 1`), and a `GAP`
//! notice tells a client that fell behind which seqs it lost.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use vigil_core::alerting::{AlertEvent, AlertLevel};
use vigil_core::pipeline::LatencyRecord;
use vigil_core::replay::DroneState;
use vigil_core::vigilance::{level_for, BehaviorLabel, FrameObservation, Level, VigilanceSample};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TelemetryKind {
    Sample,
    Alert,
    State,
    Latency,
    MissionEnd,
    Gap,
    Ack,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    pub v: u32,
    pub seq: u64,
    pub kind: TelemetryKind,
    pub payload: Value,
}

impl TelemetryMessage {
    pub fn new(seq: u64, kind: TelemetryKind, payload: impl Serialize) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            seq,
            kind,
            payload: serde_json::to_value(payload).unwrap_or(Value::Null),
        }
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }
}

/// One detected animal, for the herd schematic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualView {
    pub id: String,
    /// Normalized `[x, y, w, h]`.
    pub bbox: [f64; 4],
    pub behavior: BehaviorLabel,
    pub detection_confidence: f64,
    pub behavior_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePayload {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub score: Option<f64>,
    /// Display band of the instantaneous score; absent when degraded.
    pub color: Option<Level>,
    pub alert_level: AlertLevel,
    pub theta_s: f64,
    pub n_included: u32,
    pub n_detected: u32,
    pub centroid: Option<(f64, f64)>,
    pub degraded: bool,
    pub individuals: Vec<IndividualView>,
}

impl SamplePayload {
    pub fn new(
        sample: &VigilanceSample,
        frame: Option<&FrameObservation>,
        alert_level: AlertLevel,
        theta_s: f64,
        yellow_factor: f64,
    ) -> Self {
        let individuals = frame
            .map(|f| {
                f.individuals
                    .iter()
                    .map(|i| IndividualView {
                        id: i.individual_id.clone(),
                        bbox: [i.bbox.x, i.bbox.y, i.bbox.w, i.bbox.h],
                        behavior: i.behavior,
                        detection_confidence: i.detection_confidence,
                        behavior_confidence: i.behavior_confidence,
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            frame_index: sample.frame_index,
            timestamp_ms: sample.timestamp_ms,
            score: sample.score,
            color: sample
                .score
                .filter(|_| !sample.degraded)
                .map(|s| level_for(s, theta_s, yellow_factor)),
            alert_level,
            theta_s,
            n_included: sample.n_included,
            n_detected: sample.n_detected_raw,
            centroid: sample.centroid,
            degraded: sample.degraded,
            individuals,
        }
    }
}

pub type AlertPayload = AlertEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPayload {
    #[serde(flatten)]
    pub record: LatencyRecord,
    pub stride: u32,
    pub in_flight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    /// Created, waiting for START_REPLAY.
    Idle,
    Running,
    Stopping,
    Ended,
}

/// Mean confidences over the most recent frame's detections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelConfidence {
    pub detection: Option<f64>,
    pub behavior: Option<f64>,
    pub degraded: bool,
}

impl ModelConfidence {
    pub fn from_frame(frame: &FrameObservation, degraded: bool) -> Self {
        let n = frame.individuals.len();
        let mean = |f: fn(&vigil_core::vigilance::IndividualObservation) -> f64| {
            (n > 0).then(|| frame.individuals.iter().map(f).sum::<f64>() / n as f64)
        };
        Self {
            detection: mean(|i| i.detection_confidence),
            behavior: mean(|i| i.behavior_confidence),
            degraded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub session_id: String,
    pub mission_id: String,
    pub status: SessionStatus,
    /// Threshold the latest sample was scored under.
    pub theta_s: f64,
    pub speed: String,
    pub drone_state: DroneState,
    /// Stubbed: replays have no flight stack, so this mirrors the collection mode.
    pub navigation_mode: String,
    /// Stubbed from trace metadata.
    pub battery_pct: Option<f64>,
    pub alert_level: AlertLevel,
    pub model_confidence: ModelConfidence,
    pub frames_total: u64,
    pub frames_done: u64,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionEndPayload {
    pub processed: u64,
    pub skipped: u64,
    pub slo_misses: u64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapPayload {
    /// Broadcast messages this client never received.
    pub missed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OperatorCommand {
    SetThreshold { theta_s: f64 },
    Pause,
    Retreat,
    Resume,
    StartReplay,
    /// `"2x"`, `"afap"`, or a bare multiplier.
    SetSpeed { speed: Value },
    Stop,
}

impl OperatorCommand {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorCommand::SetThreshold { .. } => "SET_THRESHOLD",
            OperatorCommand::Pause => "PAUSE",
            OperatorCommand::Retreat => "RETREAT",
            OperatorCommand::Resume => "RESUME",
            OperatorCommand::StartReplay => "START_REPLAY",
            OperatorCommand::SetSpeed { .. } => "SET_SPEED",
            OperatorCommand::Stop => "STOP",
        }
    }
}

/// A command plus an optional client-chosen id echoed in the reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEnvelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    #[serde(flatten)]
    pub command: OperatorCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub command: String,
    /// SET_THRESHOLD only: seq of the first SAMPLE scored under the new
    /// value, or null if the session ended first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_seq: Option<Option<u64>>,
    pub state: Option<StatePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub command: Option<String>,
    pub reason: String,
}

/// Parses a speed given as `"2x"`, `"afap"`, `2` or `"2"`.
pub fn parse_speed(v: &Value) -> Result<vigil_core::replay::Speed, String> {
    use vigil_core::replay::Speed;
    match v {
        Value::Number(n) => Speed::RealTime(n.as_f64().unwrap_or(f64::NAN))
            .validate()
            .map_err(|e| e.to_string()),
        Value::String(s) => s.parse::<Speed>().map_err(|e| e.to_string()),
        _ => Err("speed must be a number or string".into()),
    }
}
