//! Group vigilance scoring.
//!
//! A frame's score is the weighted fraction of confidently observed herd
//! members showing a vigilance behavior:
//!
//! ```text
//! S_t = (1 / N) * sum_i w(label_i)
//! ```
//!
//! where only individuals whose detection confidence *and* behavior
//! confidence exceed `theta_c` count toward `N`. When nobody survives the
//! filter the sample is marked degraded and carries no score at all.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Behavior label reported by the classifier for one individual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorLabel {
    HeadUp,
    Grazing,
    Walking,
    Running,
    Standing,
    Other,
    Unknown,
}

impl BehaviorLabel {
    pub const ALL: [BehaviorLabel; 7] = [
        BehaviorLabel::HeadUp,
        BehaviorLabel::Grazing,
        BehaviorLabel::Walking,
        BehaviorLabel::Running,
        BehaviorLabel::Standing,
        BehaviorLabel::Other,
        BehaviorLabel::Unknown,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorLabel::HeadUp => "head_up",
            BehaviorLabel::Grazing => "grazing",
            BehaviorLabel::Walking => "walking",
            BehaviorLabel::Running => "running",
            BehaviorLabel::Standing => "standing",
            BehaviorLabel::Other => "other",
            BehaviorLabel::Unknown => "unknown",
        }
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorLabel {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviorLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownLabel(s.to_string()))
    }
}

/// Normalized bounding box; all coordinates are fractions of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Fully inside the unit square with positive extent.
    pub fn is_valid(&self) -> bool {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        finite
            && self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= 1.0
            && self.y + self.h <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualObservation {
    pub individual_id: String,
    pub bbox: BBox,
    pub detection_confidence: f64,
    pub behavior: BehaviorLabel,
    pub behavior_confidence: f64,
    #[serde(flatten, default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl IndividualObservation {
    pub fn new(
        id: impl Into<String>,
        bbox: BBox,
        detection_confidence: f64,
        behavior: BehaviorLabel,
        behavior_confidence: f64,
    ) -> Self {
        Self {
            individual_id: id.into(),
            bbox,
            detection_confidence,
            behavior,
            behavior_confidence,
            extra: serde_json::Map::new(),
        }
    }
}

/// Everything the inference stage produced for one video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    #[serde(default)]
    pub individuals: Vec<IndividualObservation>,
    /// Fields this version does not know about, kept for round-tripping.
    #[serde(flatten, default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl FrameObservation {
    pub fn new(frame_index: u64, timestamp_ms: u64, individuals: Vec<IndividualObservation>) -> Self {
        Self {
            frame_index,
            timestamp_ms,
            individuals,
            extra: serde_json::Map::new(),
        }
    }
}

/// Per-label weights, stored densely and serialized as a `label -> weight` map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorWeights([f64; 7]);

impl BehaviorWeights {
    /// Only head-up scanning counts as vigilance.
    pub fn head_up_only() -> Self {
        Self::single(BehaviorLabel::HeadUp)
    }

    /// Running counts as the adverse behavior; the alternate profile.
    pub fn running_only() -> Self {
        Self::single(BehaviorLabel::Running)
    }

    pub fn zero() -> Self {
        Self([0.0; 7])
    }

    fn single(label: BehaviorLabel) -> Self {
        let mut w = Self::zero();
        w.0[label.index()] = 1.0;
        w
    }

    pub fn get(&self, label: BehaviorLabel) -> f64 {
        if label == BehaviorLabel::Unknown {
            return 0.0;
        }
        self.0[label.index()]
    }

    pub fn set(&mut self, label: BehaviorLabel, weight: f64) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(ConfigError::WeightOutOfRange { label, weight });
        }
        if label == BehaviorLabel::Unknown && weight != 0.0 {
            return Err(ConfigError::UnknownWeight);
        }
        self.0[label.index()] = weight;
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies every weight by `factor` without range checks.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut w = *self;
        w.0.iter_mut().for_each(|v| *v *= factor);
        w
    }
}

impl Default for BehaviorWeights {
    fn default() -> Self {
        Self::head_up_only()
    }
}

impl Serialize for BehaviorWeights {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, f64> = BehaviorLabel::ALL
            .iter()
            .map(|l| (l.as_str(), self.0[l.index()]))
            .collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BehaviorWeights {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<BehaviorLabel, f64>::deserialize(deserializer)?;
        let mut w = BehaviorWeights::zero();
        for (label, weight) in map {
            w.set(label, weight).map_err(serde::de::Error::custom)?;
        }
        Ok(w)
    }
}

pub const THETA_S_MIN: f64 = 0.1;
pub const THETA_S_MAX: f64 = 0.9;

/// Scoring and alerting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VigilanceConfig {
    /// Vigilance threshold, operator adjustable in `[0.1, 0.9]`.
    pub theta_s: f64,
    /// Confidence threshold applied to both detection and behavior confidence.
    pub theta_c: f64,
    pub weights: BehaviorWeights,
    /// Consecutive above-threshold samples required before a red alert.
    pub debounce_frames: u32,
    /// Yellow band starts at `yellow_factor * theta_s`.
    pub yellow_factor: f64,
    /// Red persistence after which the alert escalates.
    pub escalation_persist_ms: u64,
}

impl Default for VigilanceConfig {
    fn default() -> Self {
        Self {
            theta_s: 0.3,
            theta_c: 0.5,
            weights: BehaviorWeights::default(),
            debounce_frames: 3,
            yellow_factor: 0.5,
            escalation_persist_ms: 10_000,
        }
    }
}

impl VigilanceConfig {
    pub fn with_theta(theta_s: f64) -> Result<Self, ConfigError> {
        let cfg = Self {
            theta_s,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_theta_s(self.theta_s)?;
        if !(self.theta_c > 0.0 && self.theta_c < 1.0) {
            return Err(ConfigError::ConfidenceThreshold(self.theta_c));
        }
        if self.debounce_frames == 0 {
            return Err(ConfigError::Debounce);
        }
        if !(self.yellow_factor.is_finite() && self.yellow_factor >= 0.0 && self.yellow_factor <= 1.0) {
            return Err(ConfigError::YellowFactor(self.yellow_factor));
        }
        Ok(())
    }
}

pub fn check_theta_s(theta_s: f64) -> Result<(), ConfigError> {
    if (THETA_S_MIN..=THETA_S_MAX).contains(&theta_s) {
        Ok(())
    } else {
        Err(ConfigError::ThresholdOutOfRange(theta_s))
    }
}

/// Result of scoring one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VigilanceSample {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    /// `None` when the sample is degraded.
    pub score: Option<f64>,
    pub n_included: u32,
    pub n_adverse: u32,
    pub n_detected_raw: u32,
    pub centroid: Option<(f64, f64)>,
    pub degraded: bool,
    /// The inference backend failed for this frame.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backend_failed: bool,
}

impl VigilanceSample {
    /// Degraded placeholder for a frame the backend could not process.
    pub fn backend_failure(frame_index: u64, timestamp_ms: u64) -> Self {
        Self {
            frame_index,
            timestamp_ms,
            score: None,
            n_included: 0,
            n_adverse: 0,
            n_detected_raw: 0,
            centroid: None,
            degraded: true,
            backend_failed: true,
        }
    }

    /// `S_t > theta_s`; degraded samples never exceed.
    pub fn exceeds(&self, theta_s: f64) -> bool {
        self.score.is_some_and(|s| s > theta_s)
    }

    /// Share of raw detections that passed both confidence filters.
    pub fn included_fraction(&self) -> Option<f64> {
        (self.n_detected_raw > 0).then(|| self.n_included as f64 / self.n_detected_raw as f64)
    }
}

/// Individuals whose detection confidence is strictly above `theta_c`.
pub fn filter_confident(frame: &FrameObservation, theta_c: f64) -> Vec<IndividualObservation> {
    frame
        .individuals
        .iter()
        .filter(|ind| ind.detection_confidence > theta_c)
        .cloned()
        .collect()
}

fn is_included(ind: &IndividualObservation, theta_c: f64) -> bool {
    ind.detection_confidence > theta_c && ind.behavior_confidence > theta_c
}

pub fn compute_vigilance(frame: &FrameObservation, config: &VigilanceConfig) -> VigilanceSample {
    let theta_c = config.theta_c;
    let mut n_included = 0u32;
    let mut n_adverse = 0u32;
    let mut weight_sum = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);

    for ind in frame.individuals.iter().filter(|i| is_included(i, theta_c)) {
        let w = config.weights.get(ind.behavior);
        n_included += 1;
        weight_sum += w;
        if w >= 0.5 {
            n_adverse += 1;
        }
        let (x, y) = ind.bbox.center();
        cx += x;
        cy += y;
    }

    let n_detected_raw = frame.individuals.len() as u32;
    let (score, centroid) = if n_included > 0 {
        let n = n_included as f64;
        (Some((weight_sum / n).clamp(0.0, 1.0)), Some((cx / n, cy / n)))
    } else {
        (None, None)
    };

    VigilanceSample {
        frame_index: frame.frame_index,
        timestamp_ms: frame.timestamp_ms,
        score,
        n_included,
        n_adverse,
        n_detected_raw,
        centroid,
        degraded: n_included == 0,
        backend_failed: false,
    }
}

/// Display color band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Level {
    Green,
    Yellow,
    Red,
}

/// Instantaneous color band; red is inclusive at `theta_s`.
pub fn instantaneous_level(score: f64, config: &VigilanceConfig) -> Level {
    level_for(score, config.theta_s, config.yellow_factor)
}

pub fn level_for(score: f64, theta_s: f64, yellow_factor: f64) -> Level {
    if score >= theta_s {
        Level::Red
    } else if score >= yellow_factor * theta_s {
        Level::Yellow
    } else {
        Level::Green
    }
}
