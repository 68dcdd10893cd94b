use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace_io::MissionTrace;
use crate::vigilance::FrameObservation;

/// Reference to a frame awaiting inference. Pixels never enter this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHandle {
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendMode {
    GpuClass,
    CpuClass,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub detect_latency_estimate_ms: f64,
    pub behavior_latency_estimate_ms: f64,
    pub mode: BackendMode,
}

impl BackendCapabilities {
    /// Detector 4.7 ms + behavior classifier 19.1 ms on an edge GPU.
    pub const GPU_REFERENCE: Self = Self {
        detect_latency_estimate_ms: 4.7,
        behavior_latency_estimate_ms: 19.1,
        mode: BackendMode::GpuClass,
    };

    /// The same models on CPU: 183.2 ms + 743.7 ms.
    pub const CPU_REFERENCE: Self = Self {
        detect_latency_estimate_ms: 183.2,
        behavior_latency_estimate_ms: 743.7,
        mode: BackendMode::CpuClass,
    };

    pub fn total_estimate_ms(&self) -> f64 {
        self.detect_latency_estimate_ms + self.behavior_latency_estimate_ms
    }
}

/// Observation plus the backend's own stage timings.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub observation: FrameObservation,
    pub detect_ms: f64,
    pub behave_ms: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("frame {0} is not in the trace")]
    OutOfRange(u64),
    #[error("inference exceeded its {0:?} deadline")]
    Timeout(Duration),
    #[error("backend i/o: {0}")]
    Io(String),
    #[error("backend protocol: {0}")]
    Protocol(String),
    #[error("backend failed: {0}")]
    Failed(String),
}

/// Detection plus behavior classification for one frame.
///
/// Implementations must return within `deadline` (or fail with
/// [`BackendError::Timeout`]); the pipeline never waits on them unbounded.
pub trait InferenceBackend: Send {
    fn capabilities(&self) -> BackendCapabilities;

    fn infer(&mut self, frame: &FrameHandle, deadline: Duration) -> Result<InferenceOutput, BackendError>;
}

impl<B: InferenceBackend + ?Sized> InferenceBackend for Box<B> {
    fn capabilities(&self) -> BackendCapabilities {
        (**self).capabilities()
    }

    fn infer(&mut self, frame: &FrameHandle, deadline: Duration) -> Result<InferenceOutput, BackendError> {
        (**self).infer(frame, deadline)
    }
}

/// Artificial per-stage latency injected by [`TraceBackend`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulatedDelays {
    pub detect_ms: f64,
    pub behave_ms: f64,
}

impl SimulatedDelays {
    pub const NONE: Self = Self {
        detect_ms: 0.0,
        behave_ms: 0.0,
    };

    pub fn new(detect_ms: f64, behave_ms: f64) -> Self {
        Self { detect_ms, behave_ms }
    }

    pub fn from_capabilities(c: &BackendCapabilities) -> Self {
        Self::new(c.detect_latency_estimate_ms, c.behavior_latency_estimate_ms)
    }

    pub fn total_ms(&self) -> f64 {
        self.detect_ms + self.behave_ms
    }
}

fn timed_sleep(ms: f64) -> f64 {
    if ms <= 0.0 {
        return 0.0;
    }
    let start = Instant::now();
    thread::sleep(Duration::from_secs_f64(ms / 1000.0));
    start.elapsed().as_secs_f64() * 1000.0
}

/// Serves a recorded trace's observations, optionally with stage delays.
#[derive(Debug, Clone)]
pub struct TraceBackend {
    frames: Vec<FrameObservation>,
    delays: SimulatedDelays,
}

pub fn trace_backend(trace: &MissionTrace, delays: SimulatedDelays) -> TraceBackend {
    TraceBackend {
        frames: trace.frames.clone(),
        delays,
    }
}

impl TraceBackend {
    pub fn from_frames(frames: Vec<FrameObservation>, delays: SimulatedDelays) -> Self {
        Self { frames, delays }
    }

    pub fn handles(&self) -> Vec<FrameHandle> {
        self.frames
            .iter()
            .map(|f| FrameHandle {
                frame_index: f.frame_index,
                timestamp_ms: f.timestamp_ms,
            })
            .collect()
    }

    fn lookup(&self, frame_index: u64) -> Option<&FrameObservation> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

impl InferenceBackend for TraceBackend {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            detect_latency_estimate_ms: self.delays.detect_ms,
            behavior_latency_estimate_ms: self.delays.behave_ms,
            mode: BackendMode::Trace,
        }
    }

    fn infer(&mut self, frame: &FrameHandle, _deadline: Duration) -> Result<InferenceOutput, BackendError> {
        let detect_ms = timed_sleep(self.delays.detect_ms);
        let observation = self
            .lookup(frame.frame_index)
            .cloned()
            .ok_or(BackendError::OutOfRange(frame.frame_index))?;
        let behave_ms = timed_sleep(self.delays.behave_ms);
        Ok(InferenceOutput {
            observation,
            detect_ms,
            behave_ms,
        })
    }
}

/// Frame handles for every frame of a trace, in order.
pub fn trace_handles(trace: &MissionTrace) -> Vec<FrameHandle> {
    trace
        .frames
        .iter()
        .map(|f| FrameHandle {
            frame_index: f.frame_index,
            timestamp_ms: f.timestamp_ms,
        })
        .collect()
}
