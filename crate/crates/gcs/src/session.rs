//! One replay session: a pipeline over a trace, fanned out to any number of
//! telemetry subscribers.

use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;
use tokio::sync::{broadcast, oneshot};

use vigil_core::alerting::AlertLevel;
use vigil_core::pipeline::{
    run_pipeline, trace_backend, trace_handles, PipelineController, PipelineOptions, PipelineOutput,
    SamplingPolicy, SimulatedDelays,
};
use vigil_core::replay::{DroneState, Speed};
use vigil_core::trace_io::MissionTrace;
use vigil_core::vigilance::{check_theta_s, FrameObservation, VigilanceConfig};

use crate::protocol::{
    LatencyPayload, MissionEndPayload, ModelConfidence, SamplePayload, SessionStatus, StatePayload, TelemetryKind,
    TelemetryMessage,
};

/// Messages a subscriber may fall behind by before it gets a GAP notice.
pub const BROADCAST_CAPACITY: usize = 4096;

/// Answer to a threshold change: the seq of the first SAMPLE scored under
/// it, or `None` if the session ended before one was produced.
pub type ThresholdAck = oneshot::Receiver<Option<u64>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Invalid(String),
    #[error("session is {0:?}")]
    WrongStatus(SessionStatus),
}

pub struct SessionSpec {
    pub trace: MissionTrace,
    pub config: VigilanceConfig,
    pub speed: Speed,
    pub policy: SamplingPolicy,
    pub delays: SimulatedDelays,
}

struct Shared {
    seq: u64,
    status: SessionStatus,
    /// Threshold of the latest sample, or the configured one before any.
    theta_s: f64,
    speed: Speed,
    drone_state: DroneState,
    alert_level: AlertLevel,
    model_confidence: ModelConfidence,
    frames_done: u64,
    pending_theta: Vec<(f64, oneshot::Sender<Option<u64>>)>,
    controller: Option<PipelineController>,
    config: VigilanceConfig,
}

pub struct Session {
    id: String,
    trace: Arc<MissionTrace>,
    policy: SamplingPolicy,
    delays: SimulatedDelays,
    tx: broadcast::Sender<TelemetryMessage>,
    shared: Mutex<Shared>,
}

impl Session {
    pub fn new(id: impl Into<String>, spec: SessionSpec) -> Arc<Self> {
        Self::with_capacity(id, spec, BROADCAST_CAPACITY)
    }

    pub fn with_capacity(id: impl Into<String>, spec: SessionSpec, capacity: usize) -> Arc<Self> {
        let (tx, _) = broadcast::channel(capacity.max(1));
        Arc::new(Self {
            id: id.into(),
            trace: Arc::new(spec.trace),
            policy: spec.policy,
            delays: spec.delays,
            tx,
            shared: Mutex::new(Shared {
                seq: 0,
                status: SessionStatus::Idle,
                theta_s: spec.config.theta_s,
                speed: spec.speed,
                drone_state: DroneState::Flying,
                alert_level: AlertLevel::NoDetections,
                model_confidence: ModelConfidence::default(),
                frames_done: 0,
                pending_theta: Vec::new(),
                controller: None,
                config: spec.config,
            }),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.shared.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn status(&self) -> SessionStatus {
        self.lock().status
    }

    pub fn state(&self) -> StatePayload {
        self.snapshot(&self.lock())
    }

    fn snapshot(&self, s: &Shared) -> StatePayload {
        let meta = &self.trace.metadata;
        StatePayload {
            session_id: self.id.clone(),
            mission_id: meta.mission_id.clone(),
            status: s.status,
            theta_s: s.theta_s,
            speed: s.speed.to_string(),
            drone_state: s.drone_state,
            navigation_mode: "REPLAY".into(),
            battery_pct: meta.battery_pct,
            alert_level: s.alert_level,
            model_confidence: s.model_confidence,
            frames_total: self.trace.frames.len() as u64,
            frames_done: s.frames_done,
            last_seq: s.seq,
        }
    }

    /// Subscribes and returns the current state as the first message. The
    /// snapshot and the subscription are taken under one lock, so the first
    /// broadcast the receiver sees is `snapshot.seq + 1`.
    pub fn subscribe(&self) -> (TelemetryMessage, broadcast::Receiver<TelemetryMessage>) {
        let s = self.lock();
        let rx = self.tx.subscribe();
        let snap = TelemetryMessage::new(s.seq, TelemetryKind::State, self.snapshot(&s));
        (snap, rx)
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().seq
    }

    fn publish_locked(&self, s: &mut Shared, kind: TelemetryKind, payload: impl Serialize) -> u64 {
        s.seq += 1;
        // No subscribers is not an error.
        let _ = self.tx.send(TelemetryMessage::new(s.seq, kind, payload));
        s.seq
    }

    fn publish_state_locked(&self, s: &mut Shared) {
        let mut snap = self.snapshot(s);
        snap.last_seq = s.seq + 1;
        self.publish_locked(s, TelemetryKind::State, snap);
    }

    pub fn start(self: &Arc<Self>) -> Result<(), CommandError> {
        let mut s = self.lock();
        if s.status != SessionStatus::Idle {
            return Err(CommandError::WrongStatus(s.status));
        }
        let mut options = PipelineOptions::paced(s.speed);
        options.fps = self.trace.metadata.fps;
        let handle = run_pipeline(
            trace_handles(&self.trace),
            trace_backend(&self.trace, self.delays),
            s.config.clone(),
            self.policy,
            options,
        )
        .map_err(|e| CommandError::Invalid(e.to_string()))?;
        s.controller = Some(handle.controller());
        s.status = SessionStatus::Running;
        self.publish_state_locked(&mut s);
        drop(s);

        let me = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            for out in handle.outputs().iter() {
                me.on_output(out);
            }
            let stats = handle.join();
            me.finish(MissionEndPayload {
                processed: stats.processed,
                skipped: stats.skipped(),
                slo_misses: stats.slo_misses,
                stopped_early: false,
            });
        });
        Ok(())
    }

    fn frame(&self, frame_index: u64) -> Option<&FrameObservation> {
        let frames = &self.trace.frames;
        frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &frames[i])
    }

    fn on_output(&self, out: PipelineOutput) {
        let mut s = self.lock();
        s.frames_done += 1;
        let PipelineOutput::Processed { sample, event, latency, stride, in_flight, theta_s, level } = out else {
            return;
        };
        let frame = self.frame(sample.frame_index);
        s.alert_level = level;
        s.theta_s = theta_s;
        s.config.theta_s = theta_s;
        if let Some(f) = frame {
            s.model_confidence = ModelConfidence::from_frame(f, sample.degraded);
        } else {
            s.model_confidence = ModelConfidence { degraded: true, ..Default::default() };
        }
        let payload = SamplePayload::new(&sample, frame, s.alert_level, theta_s, s.config.yellow_factor);
        let seq = self.publish_locked(&mut s, TelemetryKind::Sample, payload);

        // Every change queued before the one now in force has been applied
        // (and superseded) by this sample too.
        if let Some(pos) = s.pending_theta.iter().rposition(|(t, _)| *t == theta_s) {
            for (_, ack) in s.pending_theta.drain(..=pos) {
                let _ = ack.send(Some(seq));
            }
        }
        if let Some(e) = event {
            self.publish_locked(&mut s, TelemetryKind::Alert, e);
        }
        self.publish_locked(&mut s, TelemetryKind::Latency, LatencyPayload { record: latency, stride, in_flight });
    }

    fn finish(&self, mut end: MissionEndPayload) {
        let mut s = self.lock();
        end.stopped_early |= s.status == SessionStatus::Stopping;
        s.status = SessionStatus::Ended;
        s.controller = None;
        for (_, ack) in s.pending_theta.drain(..) {
            let _ = ack.send(None);
        }
        self.publish_locked(&mut s, TelemetryKind::MissionEnd, end);
        self.publish_state_locked(&mut s);
    }

    /// Queues a threshold change. Before the replay starts the new value is
    /// simply the one it will start with.
    pub fn set_threshold(&self, theta_s: f64) -> Result<ThresholdAck, CommandError> {
        check_theta_s(theta_s).map_err(|e| CommandError::Invalid(e.to_string()))?;
        let mut s = self.lock();
        let (tx, rx) = oneshot::channel();
        match s.status {
            SessionStatus::Idle => {
                s.config.theta_s = theta_s;
                s.theta_s = theta_s;
            }
            SessionStatus::Running => {
                if let Some(c) = &s.controller {
                    c.set_theta(theta_s).map_err(|e| CommandError::Invalid(e.to_string()))?;
                }
            }
            other => return Err(CommandError::WrongStatus(other)),
        }
        s.pending_theta.push((theta_s, tx));
        Ok(rx)
    }

    pub fn set_speed(&self, speed: Speed) -> Result<(), CommandError> {
        let speed = speed.validate().map_err(|e| CommandError::Invalid(e.to_string()))?;
        let mut s = self.lock();
        match s.status {
            SessionStatus::Idle => {}
            SessionStatus::Running => {
                if let Some(c) = &s.controller {
                    c.set_speed(speed).map_err(|e| CommandError::Invalid(e.to_string()))?;
                }
            }
            other => return Err(CommandError::WrongStatus(other)),
        }
        s.speed = speed;
        self.publish_state_locked(&mut s);
        Ok(())
    }

    /// PAUSE / RETREAT / RESUME. Replays have no aircraft to command, so
    /// this only records the operator's decision; scoring carries on.
    pub fn set_drone_state(&self, state: DroneState) -> Result<(), CommandError> {
        let mut s = self.lock();
        if s.status == SessionStatus::Ended {
            return Err(CommandError::WrongStatus(s.status));
        }
        s.drone_state = state;
        self.publish_state_locked(&mut s);
        Ok(())
    }

    pub fn stop(&self) -> Result<(), CommandError> {
        let mut s = self.lock();
        match s.status {
            SessionStatus::Idle => {
                drop(s);
                self.finish(MissionEndPayload { processed: 0, skipped: 0, slo_misses: 0, stopped_early: true });
            }
            SessionStatus::Running => {
                if let Some(c) = &s.controller {
                    c.stop();
                }
                s.status = SessionStatus::Stopping;
                self.publish_state_locked(&mut s);
            }
            SessionStatus::Stopping => {}
            SessionStatus::Ended => return Err(CommandError::WrongStatus(s.status)),
        }
        Ok(())
    }
}
