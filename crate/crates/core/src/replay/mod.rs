//! Mission replay and counterfactual operator intervention.
//!
//! A replay scores every frame of a recorded mission and drives the alert
//! machine exactly as the live pipeline would. With an [`InterventionModel`]
//! it also answers "what if the operator had acted on the red alert":
//!
//! - every adverse run (maximal stretch of consecutive samples with
//!   `S > theta`) is cut off `lag + response_latency + deescalation_delay`
//!   after it starts, where `lag` is the time from run start to the red alert
//!   that run produced; runs that never reach a red alert are unchanged;
//! - the drone holds a pause/retreat from `red alert + response_latency` for
//!   at least `intervention_duration_ms`, and resumes once
//!   `resume_calm_frames` consecutive samples after that are below threshold.
//!
//! Recorded footage cannot show how animals would have reacted, so the
//! de-escalation delay is a modeling parameter, not a measurement.

mod clock;
mod synth;

pub use clock::{replay_clock, ReplayClock, Speed};
pub use synth::{frame_timestamp_ms, generate_synthetic_trace, Phase, SyntheticParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerting::{AlertError, AlertEvent, AlertEventKind, AlertLevel};
use crate::error::ConfigError;
use crate::monitor::VigilanceMonitor;
use crate::trace_io::{
    validate_trace, CollectionMode, Diagnostic, GroundTruthEvent, MissionTrace, Severity, TimeSpan,
};
use crate::vigilance::{VigilanceConfig, VigilanceSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DroneState {
    Flying,
    Pause,
    Retreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionModel {
    /// Operator reaction time after the red alert.
    pub response_latency_ms: u64,
    /// Minimum hold of the pause/retreat.
    pub intervention_duration_ms: u64,
    /// Time for the herd to settle below threshold once the drone backs off.
    pub deescalation_delay_ms: u64,
    pub resume_calm_frames: u32,
    pub action: DroneState,
}

impl Default for InterventionModel {
    fn default() -> Self {
        Self {
            response_latency_ms: 0,
            intervention_duration_ms: 5_000,
            deescalation_delay_ms: 1_000,
            resume_calm_frames: 5,
            action: DroneState::Pause,
        }
    }
}

impl InterventionModel {
    /// A human reacting to the chime rather than an automated response.
    pub fn operator_profile() -> Self {
        Self {
            response_latency_ms: 5_000,
            ..Self::default()
        }
    }

    /// Never engages; reproduces the raw recording.
    pub fn never() -> Self {
        Self {
            response_latency_ms: u64::MAX,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.action == DroneState::Flying {
            return Err(ConfigError::Invalid(
                "intervention action must be PAUSE or RETREAT".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    /// Sample position of the red alert that triggered the engagement.
    pub trigger_position: usize,
    pub engage_ms: f64,
    pub release_ms: f64,
    /// False when the mission ended before the resume condition held.
    pub released: bool,
    pub action: DroneState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneStateChange {
    pub at_ms: f64,
    pub state: DroneState,
}

/// Mission facts carried along so reports need only the replay result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub mission_id: String,
    pub species: String,
    pub herd_size: u32,
    pub fps: f64,
    pub collection_mode: CollectionMode,
    pub duration_ms: f64,
    pub sampling_phases: Vec<TimeSpan>,
    pub events: Vec<GroundTruthEvent>,
}

impl MissionSummary {
    pub fn from_trace(trace: &MissionTrace) -> Self {
        let m = &trace.metadata;
        Self {
            mission_id: m.mission_id.clone(),
            species: m.species.clone(),
            herd_size: m.herd_size,
            fps: m.fps,
            collection_mode: m.collection_mode,
            duration_ms: trace.duration_ms(),
            sampling_phases: m.sampling_phases.clone(),
            events: trace.events.clone(),
        }
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.fps
    }
}

/// A maximal stretch of consecutive samples above threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdverseRun {
    pub first: usize,
    /// Exclusive.
    pub end: usize,
    pub start_ms: f64,
    pub duration_ms: f64,
    /// Sample position of the red alert attributed to this run.
    pub alert_position: Option<usize>,
    pub counterfactual_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub mission: MissionSummary,
    pub config: VigilanceConfig,
    pub intervention: Option<InterventionModel>,
    pub samples: Vec<VigilanceSample>,
    /// Alert-machine level after each sample.
    pub levels: Vec<AlertLevel>,
    pub alert_events: Vec<AlertEvent>,
    pub runs: Vec<AdverseRun>,
    pub interventions: Vec<Intervention>,
    /// Per sample: inside an engagement window.
    pub intervened: Vec<bool>,
    /// Per sample: still above threshold in the counterfactual.
    pub counterfactual_adverse: Vec<bool>,
    pub drone_states: Vec<DroneStateChange>,
    pub raw_adverse_ms: f64,
    pub counterfactual_adverse_ms: f64,
}

impl ReplayResult {
    /// Reduction of adverse time relative to the raw recording, in `[0, 1]`.
    pub fn adverse_reduction(&self) -> Option<f64> {
        (self.raw_adverse_ms > 0.0).then(|| 1.0 - self.counterfactual_adverse_ms / self.raw_adverse_ms)
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("invalid trace: {}", .0.first().map(|d| d.to_string()).unwrap_or_default())]
    InvalidTrace(Vec<Diagnostic>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Alert(#[from] AlertError),
}

/// Per-sample time attribution: each sample covers the interval up to the
/// next one; the last covers one nominal frame interval.
pub fn sample_intervals(samples: &[VigilanceSample], frame_interval_ms: f64) -> Vec<f64> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| match samples.get(i + 1) {
            Some(next) => next.timestamp_ms.saturating_sub(s.timestamp_ms) as f64,
            None => frame_interval_ms,
        })
        .collect()
}

pub fn adverse_runs(samples: &[VigilanceSample], theta_s: f64, frame_interval_ms: f64) -> Vec<AdverseRun> {
    let intervals = sample_intervals(samples, frame_interval_ms);
    let mut runs = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if !samples[i].exceeds(theta_s) {
            i += 1;
            continue;
        }
        let first = i;
        while i < samples.len() && samples[i].exceeds(theta_s) {
            i += 1;
        }
        let duration_ms = intervals[first..i].iter().sum();
        runs.push(AdverseRun {
            first,
            end: i,
            start_ms: samples[first].timestamp_ms as f64,
            duration_ms,
            alert_position: None,
            counterfactual_ms: duration_ms,
        });
    }
    runs
}

pub fn replay_mission(
    trace: &MissionTrace,
    config: &VigilanceConfig,
    intervention: Option<&InterventionModel>,
    speed: Speed,
) -> Result<ReplayResult, ReplayError> {
    config.validate()?;
    let speed = speed.validate()?;
    if let Some(m) = intervention {
        m.validate()?;
    }
    let diags: Vec<Diagnostic> = validate_trace(trace)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .collect();
    if !diags.is_empty() {
        return Err(ReplayError::InvalidTrace(diags));
    }

    let mission = MissionSummary::from_trace(trace);
    let interval = mission.frame_interval_ms();
    let mut monitor = VigilanceMonitor::new(config.clone());
    let mut clock = ReplayClock::new(speed);
    let origin = trace.frames.first().map_or(0, |f| f.timestamp_ms);

    let n = trace.frames.len();
    let mut samples = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut alert_events = Vec::new();
    let mut red_alert_at = Vec::new();
    let mut red_before = Vec::with_capacity(n);
    for (pos, frame) in trace.frames.iter().enumerate() {
        clock.wait_until((frame.timestamp_ms - origin) as f64);
        red_before.push(monitor.level().is_red());
        let (sample, event) = monitor.process(frame)?;
        if let Some(e) = event {
            if e.kind == AlertEventKind::EnterRed {
                red_alert_at.push(pos);
            }
            alert_events.push(e);
        }
        samples.push(sample);
        levels.push(monitor.level());
    }

    let mut runs = adverse_runs(&samples, config.theta_s, interval);
    let raw_adverse_ms: f64 = runs.iter().map(|r| r.duration_ms).sum();
    let mut counterfactual_adverse: Vec<bool> = samples.iter().map(|s| s.exceeds(config.theta_s)).collect();
    let mut intervened = vec![false; n];
    let mut interventions = Vec::new();
    let mut drone_states = vec![DroneStateChange {
        at_ms: origin as f64,
        state: DroneState::Flying,
    }];

    for run in &mut runs {
        run.alert_position = if red_before[run.first] {
            Some(run.first)
        } else {
            red_alert_at
                .iter()
                .copied()
                .find(|&p| p >= run.first && p < run.end)
        };
    }

    if let Some(model) = intervention {
        let mission_end = origin as f64 + mission.duration_ms;
        for run in &mut runs {
            let Some(alert) = run.alert_position else {
                continue;
            };
            let lag = samples[alert].timestamp_ms as f64 - run.start_ms;
            let cut = lag + model.response_latency_ms as f64 + model.deescalation_delay_ms as f64;
            run.counterfactual_ms = run.duration_ms.min(cut);
            for (pos, flag) in counterfactual_adverse.iter_mut().enumerate().take(run.end).skip(run.first) {
                *flag = (samples[pos].timestamp_ms as f64 - run.start_ms) < cut;
            }
        }

        let mut busy_until = f64::NEG_INFINITY;
        for run in &runs {
            let Some(alert) = run.alert_position else {
                continue;
            };
            let engage = samples[alert].timestamp_ms as f64 + model.response_latency_ms as f64;
            if engage >= mission_end || engage < busy_until {
                continue;
            }
            let hold_until = engage + model.intervention_duration_ms as f64;
            let (release_ms, released) =
                find_release(&samples, &counterfactual_adverse, config.theta_s, hold_until, model.resume_calm_frames)
                    .map_or((mission_end, false), |t| (t, true));
            for (pos, s) in samples.iter().enumerate() {
                let t = s.timestamp_ms as f64;
                if t >= engage && t < release_ms {
                    intervened[pos] = true;
                }
            }
            drone_states.push(DroneStateChange {
                at_ms: engage,
                state: model.action,
            });
            if released {
                drone_states.push(DroneStateChange {
                    at_ms: release_ms,
                    state: DroneState::Flying,
                });
            }
            interventions.push(Intervention {
                trigger_position: alert,
                engage_ms: engage,
                release_ms,
                released,
                action: model.action,
            });
            busy_until = release_ms;
        }
    }

    let counterfactual_adverse_ms = runs.iter().map(|r| r.counterfactual_ms).sum();
    Ok(ReplayResult {
        mission,
        config: config.clone(),
        intervention: intervention.copied(),
        samples,
        levels,
        alert_events,
        runs,
        interventions,
        intervened,
        counterfactual_adverse,
        drone_states,
        raw_adverse_ms,
        counterfactual_adverse_ms,
    })
}

/// Timestamp of the sample completing `calm_frames` consecutive calm samples,
/// counting only samples at or after `hold_until`.
fn find_release(
    samples: &[VigilanceSample],
    counterfactual_adverse: &[bool],
    theta_s: f64,
    hold_until: f64,
    calm_frames: u32,
) -> Option<f64> {
    let need = calm_frames.max(1);
    let mut streak = 0u32;
    for (s, &adverse) in samples.iter().zip(counterfactual_adverse) {
        let t = s.timestamp_ms as f64;
        if t < hold_until {
            continue;
        }
        // Suppressed exceedances count as calm; degraded samples do not.
        let suppressed = s.exceeds(theta_s) && !adverse;
        let calm = suppressed || (!s.degraded && s.score.is_some_and(|v| v < theta_s));
        streak = if calm { streak + 1 } else { 0 };
        if streak >= need {
            return Some(t);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vigilance::compute_vigilance;

    fn trace(phases: Vec<Phase>) -> MissionTrace {
        generate_synthetic_trace(&SyntheticParams::new(4, phases, 11)).unwrap()
    }

    fn fourteen_second_run() -> MissionTrace {
        trace(vec![Phase::calm(10_000), Phase::vigilant(14_000, 0.5), Phase::calm(10_000)])
    }

    #[test]
    fn raw_adverse_of_engineered_run() {
        let r = replay_mission(&fourteen_second_run(), &VigilanceConfig::default(), None, Speed::Afap).unwrap();
        assert_eq!(r.raw_adverse_ms, 14_000.0);
        assert_eq!(r.counterfactual_adverse_ms, 14_000.0);
        assert!(r.interventions.is_empty());
        assert_eq!(r.runs.len(), 1);
    }

    #[test]
    fn default_intervention_cuts_to_delay_plus_debounce() {
        let t = fourteen_second_run();
        let r = replay_mission(&t, &VigilanceConfig::default(), Some(&InterventionModel::default()), Speed::Afap)
            .unwrap();
        // Red fires on the third exceedance, 67 ms after the run starts.
        assert_eq!(r.counterfactual_adverse_ms, 1_067.0);
        assert_eq!(r.interventions.len(), 1);
        let iv = r.interventions[0];
        assert_eq!(iv.engage_ms, 10_067.0);
        assert!(iv.released);
        assert!(iv.release_ms >= iv.engage_ms + 5_000.0);
        assert_eq!(
            r.drone_states.iter().map(|d| d.state).collect::<Vec<_>>(),
            [DroneState::Flying, DroneState::Pause, DroneState::Flying]
        );
    }

    #[test]
    fn calm_trace_has_nothing_to_do() {
        let r = replay_mission(
            &trace(vec![Phase::calm(5_000)]),
            &VigilanceConfig::default(),
            Some(&InterventionModel::default()),
            Speed::Afap,
        )
        .unwrap();
        assert!(r.interventions.is_empty());
        assert_eq!(r.raw_adverse_ms, 0.0);
        assert_eq!(r.counterfactual_adverse_ms, 0.0);
    }

    #[test]
    fn samples_match_batch_scoring() {
        let t = fourteen_second_run();
        let cfg = VigilanceConfig::default();
        let r = replay_mission(&t, &cfg, None, Speed::Afap).unwrap();
        let batch: Vec<_> = t.frames.iter().map(|f| compute_vigilance(f, &cfg)).collect();
        assert_eq!(r.samples, batch);
    }

    #[test]
    fn never_model_reproduces_raw() {
        let t = fourteen_second_run();
        let r = replay_mission(&t, &VigilanceConfig::default(), Some(&InterventionModel::never()), Speed::Afap)
            .unwrap();
        assert_eq!(r.counterfactual_adverse_ms, r.raw_adverse_ms);
        assert!(r.interventions.is_empty());
    }

    #[test]
    fn short_runs_never_alert() {
        // Two-frame blips stay below the debounce window.
        let t = trace(vec![
            Phase::calm(1_000),
            Phase::vigilant(67, 0.5),
            Phase::calm(1_000),
        ]);
        let r = replay_mission(&t, &VigilanceConfig::default(), Some(&InterventionModel::default()), Speed::Afap)
            .unwrap();
        assert_eq!(r.runs.len(), 1);
        assert_eq!(r.runs[0].alert_position, None);
        assert_eq!(r.counterfactual_adverse_ms, r.raw_adverse_ms);
    }

    #[test]
    fn rejects_invalid_input() {
        let mut t = fourteen_second_run();
        t.frames.swap(3, 4);
        assert!(matches!(
            replay_mission(&t, &VigilanceConfig::default(), None, Speed::Afap),
            Err(ReplayError::InvalidTrace(_))
        ));
        assert!(replay_mission(&fourteen_second_run(), &VigilanceConfig::default(), None, Speed::RealTime(0.0)).is_err());
    }
}
