//! Browser demo: generate a mission, score it, and see what an intervention
//! would have changed. Everything runs unpaced on the calling thread.
//!
//! The `#[wasm_bindgen]` exports take and return JSON strings; the plain
//! functions underneath are what the tests exercise.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use vigil_core::alerting::{AlertEvent, AlertLevel};
use vigil_core::metrics::{first_detection_ms, warning_window, UsableReport};
use vigil_core::replay::{
    generate_synthetic_trace, replay_mission, DroneState, Intervention, InterventionModel, Phase, ReplayResult, Speed,
    SyntheticParams,
};
use vigil_core::trace_io::{GroundTruthKind, MissionTrace};
use vigil_core::vigilance::{level_for, Level, VigilanceConfig};

/// A calm approach, an alert episode, optionally a flight, then calm again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub herd_size: u32,
    pub calm_ms: u64,
    pub alert_ms: u64,
    /// Share of the herd head-up during the alert episode.
    pub alert_fraction: f64,
    pub flight_ms: u64,
    pub tail_ms: u64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            herd_size: 8,
            calm_ms: 20_000,
            alert_ms: 12_000,
            alert_fraction: 0.5,
            flight_ms: 4_000,
            tail_ms: 10_000,
            noise: 0.05,
            seed: 1,
        }
    }
}

impl Scenario {
    pub fn params(&self) -> SyntheticParams {
        let mut phases = Vec::new();
        if self.calm_ms > 0 {
            phases.push(Phase::calm(self.calm_ms).with_noise(self.noise));
        }
        if self.alert_ms > 0 {
            phases.push(
                Phase::vigilant(self.alert_ms, self.alert_fraction)
                    .with_noise(self.noise)
                    .with_event(GroundTruthKind::AlertVigilance),
            );
        }
        if self.flight_ms > 0 {
            phases.push(Phase::flight(self.flight_ms));
        }
        if self.tail_ms > 0 {
            phases.push(Phase::calm(self.tail_ms).with_noise(self.noise));
        }
        SyntheticParams::new(self.herd_size, phases, self.seed).mission_id("demo")
    }

    pub fn trace(&self) -> Result<MissionTrace, String> {
        generate_synthetic_trace(&self.params()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub theta_s: f64,
    pub t_ms: Vec<u64>,
    /// `null` where no animal was confidently detected.
    pub score: Vec<Option<f64>>,
    pub level: Vec<AlertLevel>,
    pub events: Vec<AlertEvent>,
    pub first_detection_ms: Option<u64>,
    pub warning_window_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionView {
    pub raw_adverse_ms: f64,
    pub counterfactual_adverse_ms: f64,
    pub reduction_pct: Option<f64>,
    pub interventions: Vec<Intervention>,
    /// Per sample: still adverse with the intervention.
    pub counterfactual_adverse: Vec<bool>,
    pub usable_raw_pct: f64,
    pub usable_counterfactual_pct: f64,
}

fn run(scenario: &Scenario, theta_s: f64, model: Option<&InterventionModel>) -> Result<ReplayResult, String> {
    let cfg = VigilanceConfig::with_theta(theta_s).map_err(|e| e.to_string())?;
    let trace = scenario.trace()?;
    replay_mission(&trace, &cfg, model, Speed::Afap).map_err(|e| e.to_string())
}

pub fn timeline(scenario: &Scenario, theta_s: f64) -> Result<Timeline, String> {
    let r = run(scenario, theta_s, None)?;
    Ok(Timeline {
        theta_s,
        t_ms: r.samples.iter().map(|s| s.timestamp_ms).collect(),
        score: r.samples.iter().map(|s| s.score).collect(),
        level: r.levels.clone(),
        first_detection_ms: first_detection_ms(&r.samples, theta_s),
        warning_window_s: warning_window(&r.samples, &r.mission.events, theta_s),
        events: r.alert_events,
    })
}

pub fn intervention(scenario: &Scenario, theta_s: f64, model: &InterventionModel) -> Result<InterventionView, String> {
    model.validate().map_err(|e| e.to_string())?;
    let r = run(scenario, theta_s, Some(model))?;
    let usable = UsableReport::from_replay(&r);
    Ok(InterventionView {
        raw_adverse_ms: r.raw_adverse_ms,
        counterfactual_adverse_ms: r.counterfactual_adverse_ms,
        reduction_pct: r.adverse_reduction().map(|x| 100.0 * x),
        interventions: r.interventions.clone(),
        counterfactual_adverse: r.counterfactual_adverse.clone(),
        usable_raw_pct: usable.raw.total_pct(),
        usable_counterfactual_pct: usable.counterfactual.total_pct(),
    })
}

/// Display band for a score; `None` for an invalid threshold.
pub fn classify(score: f64, theta_s: f64) -> Option<Level> {
    VigilanceConfig::with_theta(theta_s)
        .ok()
        .map(|cfg| level_for(score, cfg.theta_s, cfg.yellow_factor))
}

fn parse_scenario(json: &str) -> Result<Scenario, JsError> {
    if json.trim().is_empty() {
        return Ok(Scenario::default());
    }
    serde_json::from_str(json).map_err(|e| JsError::new(&e.to_string()))
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

/// Scores a generated mission. Returns a JSON [`Timeline`].
#[wasm_bindgen(js_name = scoreTimeline)]
pub fn score_timeline(scenario_json: &str, theta_s: f64) -> Result<String, JsError> {
    let s = parse_scenario(scenario_json)?;
    to_json(&timeline(&s, theta_s).map_err(|e| JsError::new(&e))?)
}

/// Replays a generated mission with an operator who pauses (or retreats)
/// `response_ms` after each red alert. Returns a JSON [`InterventionView`].
#[wasm_bindgen(js_name = simulateIntervention)]
pub fn simulate_intervention(
    scenario_json: &str,
    theta_s: f64,
    response_ms: f64,
    deescalation_ms: f64,
    retreat: bool,
) -> Result<String, JsError> {
    let s = parse_scenario(scenario_json)?;
    let model = InterventionModel {
        response_latency_ms: response_ms.max(0.0) as u64,
        deescalation_delay_ms: deescalation_ms.max(0.0) as u64,
        action: if retreat { DroneState::Retreat } else { DroneState::Pause },
        ..InterventionModel::default()
    };
    to_json(&intervention(&s, theta_s, &model).map_err(|e| JsError::new(&e))?)
}

/// `"GREEN"`, `"YELLOW"` or `"RED"`.
#[wasm_bindgen(js_name = classifyLevel)]
pub fn classify_level(score: f64, theta_s: f64) -> Result<String, JsError> {
    let level = classify(score, theta_s).ok_or_else(|| JsError::new("threshold must be within [0.1, 0.9]"))?;
    to_json(&level).map(|s| s.trim_matches('"').to_string())
}

#[wasm_bindgen(js_name = defaultScenario)]
pub fn default_scenario() -> String {
    serde_json::to_string(&Scenario::default()).unwrap_or_default()
}
