//! Synthetic mission traces built from a list of behavioral phases.
//!
//! Each phase fixes how much of the herd shows the phase's active behavior.
//! Per frame the active count is `round(clamp(fraction + u, 0, 1) * herd)`
//! with `u ~ U(-noise, noise)`, so the expected score of a phase is its
//! fraction up to the noise band. Confidences are drawn well above the
//! default confidence threshold; invisible phases produce empty frames.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::trace_io::{
    CollectionMode, GroundTruthEvent, GroundTruthKind, MissionMetadata, MissionTrace, TimeSpan,
};
use crate::vigilance::{BBox, BehaviorLabel, FrameObservation, IndividualObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration_ms: u64,
    pub vigilant_fraction: f64,
    #[serde(default)]
    pub noise: f64,
    /// Label worn by the active share of the herd.
    #[serde(default = "default_active")]
    pub active_behavior: BehaviorLabel,
    /// Ground-truth annotation spanning this phase.
    #[serde(default)]
    pub event: Option<GroundTruthKind>,
    /// Counts toward the mission's sampling phases.
    #[serde(default)]
    pub sampling: bool,
    #[serde(default = "default_visible")]
    pub visible: bool,
}

fn default_active() -> BehaviorLabel {
    BehaviorLabel::HeadUp
}

fn default_visible() -> bool {
    true
}

impl Phase {
    pub fn calm(duration_ms: u64) -> Self {
        Self {
            duration_ms,
            vigilant_fraction: 0.0,
            noise: 0.0,
            active_behavior: default_active(),
            event: None,
            sampling: false,
            visible: true,
        }
    }

    pub fn vigilant(duration_ms: u64, fraction: f64) -> Self {
        Self {
            vigilant_fraction: fraction,
            ..Self::calm(duration_ms)
        }
    }

    /// Whole-herd flight, annotated as a flight response.
    pub fn flight(duration_ms: u64) -> Self {
        Self {
            vigilant_fraction: 1.0,
            active_behavior: BehaviorLabel::Running,
            event: Some(GroundTruthKind::FlightResponse),
            ..Self::calm(duration_ms)
        }
    }

    /// Animals out of view.
    pub fn hidden(duration_ms: u64) -> Self {
        Self {
            visible: false,
            ..Self::calm(duration_ms)
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_event(mut self, kind: GroundTruthKind) -> Self {
        self.event = Some(kind);
        self
    }

    pub fn sampling(mut self) -> Self {
        self.sampling = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    #[serde(default = "default_mission_id")]
    pub mission_id: String,
    #[serde(default = "default_species")]
    pub species: String,
    pub herd_size: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub collection_mode: CollectionMode,
}

fn default_mission_id() -> String {
    "synthetic".into()
}
fn default_species() -> String {
    "plains zebra".into()
}
fn default_fps() -> f64 {
    30.0
}
fn default_mode() -> CollectionMode {
    CollectionMode::Synthetic
}

impl SyntheticParams {
    pub fn new(herd_size: u32, phases: Vec<Phase>, seed: u64) -> Self {
        Self {
            mission_id: default_mission_id(),
            species: default_species(),
            herd_size,
            fps: default_fps(),
            phases,
            seed,
            collection_mode: default_mode(),
        }
    }

    pub fn mission_id(mut self, id: impl Into<String>) -> Self {
        self.mission_id = id.into();
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.herd_size == 0 {
            return bad("herd_size must be at least 1".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.duration_ms == 0 {
                return bad(format!("phase {i} has zero duration"));
            }
            if !(0.0..=1.0).contains(&p.vigilant_fraction) {
                return bad(format!("phase {i} fraction {} outside [0, 1]", p.vigilant_fraction));
            }
            if !(0.0..=1.0).contains(&p.noise) {
                return bad(format!("phase {i} noise {} outside [0, 1]", p.noise));
            }
        }
        Ok(())
    }

    pub fn total_duration_ms(&self) -> u64 {
        self.phases.iter().map(|p| p.duration_ms).sum()
    }
}

/// Timestamp of frame `i` at `fps`, rounded to the millisecond.
pub fn frame_timestamp_ms(i: u64, fps: f64) -> u64 {
    (i as f64 * 1000.0 / fps).round() as u64
}

fn calm_label(rng: &mut ChaCha8Rng, active: BehaviorLabel) -> BehaviorLabel {
    const CALM: [BehaviorLabel; 3] = [BehaviorLabel::Grazing, BehaviorLabel::Walking, BehaviorLabel::Standing];
    loop {
        let l = CALM[rng.gen_range(0..CALM.len())];
        if l != active {
            return l;
        }
    }
}

pub fn generate_synthetic_trace(params: &SyntheticParams) -> Result<MissionTrace, ConfigError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let herd = params.herd_size as usize;
    let ids: Vec<String> = (0..herd).map(|i| format!("ind-{i}")).collect();

    // Resting positions on a loose grid; boxes jitter around them.
    let side = 0.5 / (herd as f64).sqrt().ceil().max(1.0);
    let homes: Vec<(f64, f64)> = (0..herd)
        .map(|_| (rng.gen_range(0.05..0.95 - side), rng.gen_range(0.05..0.95 - side)))
        .collect();

    let mut bounds = Vec::with_capacity(params.phases.len());
    let mut t = 0u64;
    for p in &params.phases {
        bounds.push((t, t + p.duration_ms));
        t += p.duration_ms;
    }
    let total = t;

    let mut frames = Vec::new();
    let mut order: Vec<usize> = (0..herd).collect();
    let mut phase_idx = 0usize;
    for i in 0.. {
        let ts = frame_timestamp_ms(i, params.fps);
        if ts >= total {
            break;
        }
        while ts >= bounds[phase_idx].1 {
            phase_idx += 1;
        }
        let phase = &params.phases[phase_idx];
        if !phase.visible {
            frames.push(FrameObservation::new(i, ts, Vec::new()));
            continue;
        }

        let jitter = if phase.noise > 0.0 {
            rng.gen_range(-phase.noise..=phase.noise)
        } else {
            0.0
        };
        let frac = (phase.vigilant_fraction + jitter).clamp(0.0, 1.0);
        let active = ((frac * herd as f64).round() as usize).min(herd);
        order.shuffle(&mut rng);

        let mut individuals = Vec::with_capacity(herd);
        for (rank, &who) in order.iter().enumerate() {
            let label = if rank < active {
                phase.active_behavior
            } else {
                calm_label(&mut rng, phase.active_behavior)
            };
            let (hx, hy) = homes[who];
            let x = (hx + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0 - side);
            let y = (hy + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0 - side);
            individuals.push(IndividualObservation::new(
                ids[who].clone(),
                BBox::new(x, y, side, side),
                rng.gen_range(0.7..0.99),
                label,
                rng.gen_range(0.6..0.99),
            ));
        }
        individuals.sort_by(|a, b| a.individual_id.cmp(&b.individual_id));
        frames.push(FrameObservation::new(i, ts, individuals));
    }

    let interval = 1000.0 / params.fps;
    let horizon = frames
        .last()
        .map(|f| (f.timestamp_ms as f64 + interval).floor() as u64)
        .unwrap_or(0);
    let events = params
        .phases
        .iter()
        .zip(&bounds)
        .filter_map(|(p, &(start, end))| {
            let kind = p.event?;
            let end = end.min(horizon);
            (start < end).then_some(GroundTruthEvent {
                kind,
                start_ms: start,
                end_ms: end,
            })
        })
        .collect();

    let mut sampling: Vec<TimeSpan> = Vec::new();
    for (p, &(start, end)) in params.phases.iter().zip(&bounds) {
        if !p.sampling {
            continue;
        }
        match sampling.last_mut() {
            Some(last) if last.end_ms == start => last.end_ms = end,
            _ => sampling.push(TimeSpan::new(start, end)),
        }
    }

    let mut metadata = MissionMetadata::new(&params.mission_id, &params.species, params.herd_size);
    metadata.fps = params.fps;
    metadata.collection_mode = params.collection_mode;
    metadata.sampling_phases = sampling;
    metadata.altitude_m = Some(20.0);
    metadata.battery_pct = Some(100.0);
    Ok(MissionTrace::new(metadata, frames, events))
}
