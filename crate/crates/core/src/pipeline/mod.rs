//! Latency-budgeted streaming: source → inference → scoring/alerting.
//!
//! A source thread paces frame handles (or not, for offline runs) and decides
//! which frames are admitted under the sampling policy. Admitted frames pass
//! through a bounded buffer to a worker thread that calls the backend, scores
//! the observation and steps the alert machine. Every source frame produces
//! exactly one output, in source order: a processed record or a skip marker.

mod backend;
mod buffer;
#[cfg(unix)]
mod socket;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use backend::{
    trace_backend, trace_handles, BackendCapabilities, BackendError, BackendMode, FrameHandle,
    InferenceBackend, InferenceOutput, SimulatedDelays, TraceBackend,
};
#[cfg(unix)]
pub use socket::SocketBackend;

use crate::alerting::{AlertEvent, AlertLevel};
use crate::error::ConfigError;
use crate::monitor::VigilanceMonitor;
use crate::replay::{ReplayClock, Speed};
use crate::vigilance::{check_theta_s, compute_vigilance, VigilanceConfig, VigilanceSample};
use buffer::{Admitted, FrameBuffer};

pub const DEFAULT_BUDGET_MS: f64 = 33.0;
pub const BUDGET_ENV: &str = "VIGIL_BUDGET_MS";
pub const DEFAULT_BUFFER_CAPACITY: usize = 4;
/// Every 40th frame: the fixed fallback for CPU-only inference.
pub const CPU_DEFAULT_STRIDE: u32 = 40;
pub const MAX_STRIDE: u32 = 120;

/// Per-frame budget, honoring `VIGIL_BUDGET_MS` when it holds a positive number.
pub fn budget_from_env() -> f64 {
    std::env::var(BUDGET_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v > 0.0)
        .unwrap_or(DEFAULT_BUDGET_MS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub frame_index: u64,
    pub detect_ms: f64,
    pub behave_ms: f64,
    pub score_ms: f64,
    pub alert_ms: f64,
    /// Wall time from admission to the alert decision.
    pub total_ms: f64,
    pub budget_ms: f64,
    pub met_slo: bool,
}

impl LatencyRecord {
    /// Everything except the backend call.
    pub fn overhead_ms(&self) -> f64 {
        self.total_ms - self.detect_ms - self.behave_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "k", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SamplingPolicy {
    EveryFrame,
    /// Process frame indices divisible by `k`.
    Stride(u32),
    /// Stride follows measured latency, see [`adaptive_stride`].
    Adaptive,
}

impl SamplingPolicy {
    pub fn cpu_default() -> Self {
        SamplingPolicy::Stride(CPU_DEFAULT_STRIDE)
    }

    pub fn validate(self) -> Result<Self, ConfigError> {
        match self {
            SamplingPolicy::Stride(0) => Err(ConfigError::Invalid("stride must be positive".into())),
            p => Ok(p),
        }
    }
}

/// Stride that keeps a backend with the window's mean latency from falling behind.
///
/// `ceil(mean total / interval)` clamped to `[1, 120]`, and 1 whenever the
/// mean is within budget. An empty window yields 1.
pub fn adaptive_stride(recent: &[LatencyRecord], frame_interval_ms: f64) -> u32 {
    if recent.is_empty() || !(frame_interval_ms > 0.0) {
        return 1;
    }
    let mean = recent.iter().map(|r| r.total_ms).sum::<f64>() / recent.len() as f64;
    let budget = recent.iter().map(|r| r.budget_ms).fold(f64::INFINITY, f64::min);
    if mean <= budget {
        return 1;
    }
    (mean / frame_interval_ms).ceil().clamp(1.0, MAX_STRIDE as f64) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OverflowPolicy {
    /// Drop stale frames; the worker always takes the newest queued frame.
    DropOldest,
    /// Hold the source until there is room. Only sensible when unpaced.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SkipReason {
    Stride,
    Overflow,
    OutOfOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub budget_ms: f64,
    /// Maximum frames admitted but not yet emitted.
    pub buffer_capacity: usize,
    pub pacing: Speed,
    pub overflow: OverflowPolicy,
    pub output_capacity: usize,
    /// Records averaged by the adaptive policy.
    pub stride_window: usize,
    /// Nominal frame rate, for the adaptive stride.
    pub fps: f64,
    /// Passed to every backend call.
    pub infer_deadline: Duration,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self::paced(Speed::RealTime(1.0))
    }
}

impl PipelineOptions {
    /// Live-style run: paced source, stale frames dropped.
    pub fn paced(speed: Speed) -> Self {
        let overflow = match speed {
            Speed::Afap => OverflowPolicy::Block,
            Speed::RealTime(_) => OverflowPolicy::DropOldest,
        };
        Self {
            budget_ms: budget_from_env(),
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            pacing: speed,
            overflow,
            output_capacity: 1024,
            stride_window: 8,
            fps: 30.0,
            infer_deadline: Duration::from_secs(5),
        }
    }

    /// Batch run: unpaced, every admitted frame processed.
    pub fn offline() -> Self {
        Self::paced(Speed::Afap)
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(self.budget_ms.is_finite() && self.budget_ms > 0.0) {
            return bad("budget_ms must be positive");
        }
        if self.buffer_capacity == 0 || self.output_capacity == 0 || self.stride_window == 0 {
            return bad("buffer sizes must be positive");
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps must be positive");
        }
        self.pacing.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineOutput {
    Processed {
        sample: VigilanceSample,
        event: Option<AlertEvent>,
        latency: LatencyRecord,
        /// Stride in force when the frame was admitted.
        stride: u32,
        in_flight: usize,
        /// Threshold the sample was judged against.
        theta_s: f64,
        /// Alert level after this sample.
        level: AlertLevel,
    },
    Skipped {
        frame_index: u64,
        timestamp_ms: u64,
        reason: SkipReason,
    },
}

impl PipelineOutput {
    pub fn frame_index(&self) -> u64 {
        match self {
            PipelineOutput::Processed { sample, .. } => sample.frame_index,
            PipelineOutput::Skipped { frame_index, .. } => *frame_index,
        }
    }

    pub fn sample(&self) -> Option<&VigilanceSample> {
        match self {
            PipelineOutput::Processed { sample, .. } => Some(sample),
            PipelineOutput::Skipped { .. } => None,
        }
    }

    pub fn latency(&self) -> Option<&LatencyRecord> {
        match self {
            PipelineOutput::Processed { latency, .. } => Some(latency),
            PipelineOutput::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames_in: u64,
    pub processed: u64,
    pub skipped_stride: u64,
    pub skipped_overflow: u64,
    pub skipped_out_of_order: u64,
    pub backend_failures: u64,
    pub slo_misses: u64,
    pub peak_in_flight: usize,
    /// Largest queue length including skip markers.
    pub peak_queue_len: usize,
    pub final_stride: u32,
}

impl PipelineStats {
    pub fn skipped(&self) -> u64 {
        self.skipped_stride + self.skipped_overflow + self.skipped_out_of_order
    }
}

enum Control {
    SetTheta(f64),
}

/// Cloneable remote for a running pipeline, usable while another thread
/// drains the outputs.
#[derive(Clone)]
pub struct PipelineController {
    control: Sender<Control>,
    speed: Sender<Speed>,
    stop: Arc<AtomicBool>,
}

impl PipelineController {
    /// Applies from the next frame the worker picks up.
    pub fn set_theta(&self, theta_s: f64) -> Result<(), ConfigError> {
        check_theta_s(theta_s)?;
        let _ = self.control.send(Control::SetTheta(theta_s));
        Ok(())
    }

    pub fn set_speed(&self, speed: Speed) -> Result<(), ConfigError> {
        let speed = speed.validate()?;
        let _ = self.speed.send(speed);
        Ok(())
    }

    /// Stops admitting frames; already admitted ones are still flushed.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// A running pipeline. Dropping it stops the threads.
pub struct PipelineHandle {
    outputs: Receiver<PipelineOutput>,
    control: Sender<Control>,
    speed: Sender<Speed>,
    stop: Arc<AtomicBool>,
    buffer: Arc<FrameBuffer>,
    stats: Arc<Mutex<PipelineStats>>,
    threads: Vec<JoinHandle<()>>,
}

impl PipelineHandle {
    pub fn outputs(&self) -> &Receiver<PipelineOutput> {
        &self.outputs
    }

    pub fn controller(&self) -> PipelineController {
        PipelineController {
            control: self.control.clone(),
            speed: self.speed.clone(),
            stop: Arc::clone(&self.stop),
        }
    }

    pub fn set_theta(&self, theta_s: f64) -> Result<(), ConfigError> {
        self.controller().set_theta(theta_s)
    }

    pub fn set_speed(&self, speed: Speed) -> Result<(), ConfigError> {
        self.controller().set_speed(speed)
    }

    pub fn stop(&self) {
        self.controller().stop()
    }

    pub fn stats(&self) -> PipelineStats {
        let mut s = self.stats.lock().unwrap_or_else(|e| e.into_inner()).clone();
        let (in_flight, queue) = self.buffer.peaks();
        s.peak_in_flight = in_flight;
        s.peak_queue_len = queue;
        s
    }

    /// Waits for both threads. Outputs not yet received stay in the channel.
    pub fn join(mut self) -> PipelineStats {
        self.join_threads();
        self.stats()
    }

    /// Drains every output until the pipeline finishes.
    pub fn collect(mut self) -> (Vec<PipelineOutput>, PipelineStats) {
        let outputs: Vec<_> = self.outputs.iter().collect();
        self.join_threads();
        (outputs, self.stats())
    }

    fn join_threads(&mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for PipelineHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.stop();
            self.buffer.close();
        }
    }
}

/// Starts a pipeline over `source`.
pub fn run_pipeline<I, B>(
    source: I,
    backend: B,
    config: VigilanceConfig,
    policy: SamplingPolicy,
    options: PipelineOptions,
) -> Result<PipelineHandle, ConfigError>
where
    I: IntoIterator<Item = FrameHandle>,
    I::IntoIter: Send + 'static,
    B: InferenceBackend + 'static,
{
    config.validate()?;
    options.validate()?;
    let policy = policy.validate()?;

    let buffer = Arc::new(FrameBuffer::new(options.buffer_capacity, options.overflow));
    let stop = Arc::new(AtomicBool::new(false));
    let stride = Arc::new(AtomicU32::new(match policy {
        SamplingPolicy::Stride(k) => k,
        _ => 1,
    }));
    let stats = Arc::new(Mutex::new(PipelineStats {
        final_stride: stride.load(Ordering::SeqCst),
        ..Default::default()
    }));
    let (out_tx, out_rx) = mpsc::sync_channel(options.output_capacity);
    let (ctl_tx, ctl_rx) = mpsc::channel();
    let (speed_tx, speed_rx) = mpsc::channel();

    let source_thread = {
        let src = Source {
            frames: source.into_iter(),
            policy,
            pacing: options.pacing,
            buffer: Arc::clone(&buffer),
            stop: Arc::clone(&stop),
            stride: Arc::clone(&stride),
            stats: Arc::clone(&stats),
            speed_rx,
        };
        thread::Builder::new()
            .name("vigil-source".into())
            .spawn(move || src.run())
            .map_err(|e| ConfigError::Invalid(format!("cannot spawn source thread: {e}")))?
    };
    let worker_thread = {
        let w = Worker {
            backend,
            monitor: VigilanceMonitor::new(config),
            policy,
            options,
            buffer: Arc::clone(&buffer),
            stride: Arc::clone(&stride),
            stats: Arc::clone(&stats),
            control: ctl_rx,
            out: out_tx,
            window: VecDeque::new(),
        };
        thread::Builder::new()
            .name("vigil-worker".into())
            .spawn(move || w.run())
            .map_err(|e| ConfigError::Invalid(format!("cannot spawn worker thread: {e}")))?
    };

    Ok(PipelineHandle {
        outputs: out_rx,
        control: ctl_tx,
        speed: speed_tx,
        stop,
        buffer,
        stats,
        threads: vec![source_thread, worker_thread],
    })
}

struct Source<I> {
    frames: I,
    policy: SamplingPolicy,
    pacing: Speed,
    buffer: Arc<FrameBuffer>,
    stop: Arc<AtomicBool>,
    stride: Arc<AtomicU32>,
    stats: Arc<Mutex<PipelineStats>>,
    speed_rx: Receiver<Speed>,
}

impl<I: Iterator<Item = FrameHandle>> Source<I> {
    fn run(mut self) {
        let mut clock = ReplayClock::new(self.pacing);
        let mut origin_ms = None;
        let mut last: Option<FrameHandle> = None;
        let mut last_admitted: Option<u64> = None;

        while let Some(h) = self.frames.next() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            while let Ok(speed) = self.speed_rx.try_recv() {
                let _ = clock.set_speed(speed);
            }
            self.bump(|s| s.frames_in += 1);

            let in_order = last.map_or(true, |l| h.frame_index > l.frame_index && h.timestamp_ms >= l.timestamp_ms);
            if !in_order {
                self.bump(|s| s.skipped_out_of_order += 1);
                self.buffer.push_skip(h, SkipReason::OutOfOrder);
                continue;
            }
            last = Some(h);

            let origin = *origin_ms.get_or_insert(h.timestamp_ms);
            clock.wait_until((h.timestamp_ms - origin) as f64);

            let admit = match self.policy {
                SamplingPolicy::EveryFrame => true,
                SamplingPolicy::Stride(k) => h.frame_index % u64::from(k) == 0,
                SamplingPolicy::Adaptive => {
                    let k = u64::from(self.stride.load(Ordering::SeqCst).max(1));
                    last_admitted.map_or(true, |a| h.frame_index - a >= k)
                }
            };
            if !admit {
                self.bump(|s| s.skipped_stride += 1);
                self.buffer.push_skip(h, SkipReason::Stride);
                continue;
            }
            last_admitted = Some(h.frame_index);
            let admitted = Admitted {
                handle: h,
                enqueued: Instant::now(),
            };
            if !self.buffer.push_frame(admitted) {
                break;
            }
        }
        self.buffer.close();
    }

    fn bump(&self, f: impl FnOnce(&mut PipelineStats)) {
        f(&mut self.stats.lock().unwrap_or_else(|e| e.into_inner()));
    }
}

struct Worker<B> {
    backend: B,
    monitor: VigilanceMonitor,
    policy: SamplingPolicy,
    options: PipelineOptions,
    buffer: Arc<FrameBuffer>,
    stride: Arc<AtomicU32>,
    stats: Arc<Mutex<PipelineStats>>,
    control: Receiver<Control>,
    out: SyncSender<PipelineOutput>,
    window: VecDeque<LatencyRecord>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

impl<B: InferenceBackend> Worker<B> {
    fn run(mut self) {
        while let Some(batch) = self.buffer.take() {
            for (h, reason) in batch.skips {
                if reason == SkipReason::Overflow {
                    self.bump(|s| s.skipped_overflow += 1);
                }
                let skipped = PipelineOutput::Skipped {
                    frame_index: h.frame_index,
                    timestamp_ms: h.timestamp_ms,
                    reason,
                };
                if self.out.send(skipped).is_err() {
                    return self.abandon();
                }
            }
            let Some(frame) = batch.frame else { continue };
            self.apply_control();
            let out = self.process(frame, batch.in_flight);
            self.buffer.done();
            if self.out.send(out).is_err() {
                return self.abandon();
            }
        }
    }

    /// The consumer went away: stop the source and wind down.
    fn abandon(self) {
        self.buffer.close();
    }

    fn apply_control(&mut self) {
        loop {
            match self.control.try_recv() {
                Ok(Control::SetTheta(t)) => {
                    let _ = self.monitor.set_theta(t);
                }
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
    }

    fn process(&mut self, frame: Admitted, in_flight: usize) -> PipelineOutput {
        let h = frame.handle;
        let stride = self.stride.load(Ordering::SeqCst);

        let call = Instant::now();
        let result = self.backend.infer(&h, self.options.infer_deadline);
        let infer_ms = ms(call.elapsed());

        let t = Instant::now();
        let (sample, detect_ms, behave_ms) = match result {
            Ok(out) if out.observation.frame_index == h.frame_index => {
                // Backends report their own split; never more than the call took.
                let reported = out.detect_ms + out.behave_ms;
                let scale = if reported > infer_ms { infer_ms / reported } else { 1.0 };
                let sample = compute_vigilance(&out.observation, self.monitor.config());
                (sample, out.detect_ms * scale, out.behave_ms * scale)
            }
            _ => {
                self.bump(|s| s.backend_failures += 1);
                (VigilanceSample::backend_failure(h.frame_index, h.timestamp_ms), infer_ms, 0.0)
            }
        };
        let score_ms = ms(t.elapsed());

        let t = Instant::now();
        // Source ordering guarantees monotone timestamps.
        let event = self.monitor.observe(&sample).unwrap_or(None);
        let alert_ms = ms(t.elapsed());

        let total_ms = ms(frame.enqueued.elapsed()).max(detect_ms + behave_ms + score_ms + alert_ms);
        let budget_ms = self.options.budget_ms;
        let latency = LatencyRecord {
            frame_index: h.frame_index,
            detect_ms,
            behave_ms,
            score_ms,
            alert_ms,
            total_ms,
            budget_ms,
            met_slo: total_ms <= budget_ms,
        };

        if self.policy == SamplingPolicy::Adaptive {
            if self.window.len() == self.options.stride_window {
                self.window.pop_front();
            }
            self.window.push_back(latency.clone());
            let (a, b) = self.window.as_slices();
            let recent: Vec<LatencyRecord> = a.iter().chain(b).cloned().collect();
            let k = adaptive_stride(&recent, self.options.frame_interval_ms());
            self.stride.store(k, Ordering::SeqCst);
        }
        let final_stride = self.stride.load(Ordering::SeqCst);
        let met = latency.met_slo;
        self.bump(|s| {
            s.processed += 1;
            s.slo_misses += u64::from(!met);
            s.final_stride = final_stride;
        });

        PipelineOutput::Processed {
            sample,
            event,
            latency,
            stride,
            in_flight,
            theta_s: self.monitor.config().theta_s,
            level: self.monitor.level(),
        }
    }

    fn bump(&self, f: impl FnOnce(&mut PipelineStats)) {
        f(&mut self.stats.lock().unwrap_or_else(|e| e.into_inner()));
    }
}
