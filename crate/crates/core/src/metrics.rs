//! Mission metrics: warning windows, usable frames, adverse time, and the
//! method comparison table.
//!
//! Time attribution follows [`sample_intervals`]: a sample's state holds
//! until the next sample, and the last sample holds for one frame interval.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::replay::{sample_intervals, ReplayResult};
use crate::trace_io::{GroundTruthEvent, GroundTruthKind, TimeSpan};
use crate::vigilance::VigilanceSample;

/// Seconds from the first `S > theta` sample to the first flight response.
/// Negative when the flight began before any exceedance.
pub fn warning_window(samples: &[VigilanceSample], events: &[GroundTruthEvent], theta_s: f64) -> Option<f64> {
    let first = first_detection_ms(samples, theta_s)?;
    let flight = events
        .iter()
        .filter(|e| e.kind == GroundTruthKind::FlightResponse)
        .map(|e| e.start_ms)
        .min()?;
    Some((flight as f64 - first as f64) / 1000.0)
}

pub fn first_detection_ms(samples: &[VigilanceSample], theta_s: f64) -> Option<u64> {
    samples.iter().find(|s| s.exceeds(theta_s)).map(|s| s.timestamp_ms)
}

/// Cumulative time with `S > theta`.
pub fn adverse_duration(samples: &[VigilanceSample], theta_s: f64, frame_interval_ms: f64) -> f64 {
    samples
        .iter()
        .zip(sample_intervals(samples, frame_interval_ms))
        .filter(|(s, _)| s.exceeds(theta_s))
        .map(|(_, dt)| dt)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameShare {
    pub usable: u64,
    pub frames: u64,
}

impl FrameShare {
    pub fn pct(&self) -> Option<f64> {
        (self.frames > 0).then(|| 100.0 * self.usable as f64 / self.frames as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UsableFrames {
    pub total: FrameShare,
    /// Restricted to the mission's sampling phases; empty when none are marked.
    pub sampling: FrameShare,
}

impl UsableFrames {
    pub fn total_pct(&self) -> f64 {
        self.total.pct().unwrap_or(0.0)
    }

    pub fn sampling_pct(&self) -> Option<f64> {
        self.sampling.pct()
    }
}

/// How frames inside an intervention window are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionAccounting {
    /// By their counterfactual state, like any other frame.
    Counterfactual,
    /// Always unusable.
    Unusable,
    /// Dropped from numerator and denominator.
    Excluded,
}

fn count_usable<F>(samples: &[VigilanceSample], sampling: &[TimeSpan], mut classify: F) -> UsableFrames
where
    F: FnMut(usize, &VigilanceSample) -> Option<bool>,
{
    let mut out = UsableFrames::default();
    for (i, s) in samples.iter().enumerate() {
        let Some(usable) = classify(i, s) else {
            continue;
        };
        let in_sampling = sampling.iter().any(|p| p.contains(s.timestamp_ms));
        out.total.frames += 1;
        out.total.usable += u64::from(usable);
        if in_sampling {
            out.sampling.frames += 1;
            out.sampling.usable += u64::from(usable);
        }
    }
    out
}

/// Frames with at least one confident detection and `S <= theta`.
pub fn usable_frames(samples: &[VigilanceSample], sampling_phases: &[TimeSpan], theta_s: f64) -> UsableFrames {
    count_usable(samples, sampling_phases, |_, s| {
        Some(!s.degraded && s.n_included > 0 && !s.exceeds(theta_s))
    })
}

/// Usable frames of a replay, with intervention frames counted per `accounting`.
/// Without an intervention model all three accountings equal the raw count.
pub fn usable_frames_replay(result: &ReplayResult, accounting: InterventionAccounting) -> UsableFrames {
    let theta = result.config.theta_s;
    if result.intervention.is_none() {
        return usable_frames(&result.samples, &result.mission.sampling_phases, theta);
    }
    count_usable(&result.samples, &result.mission.sampling_phases, |i, s| {
        let detected = !s.degraded && s.n_included > 0;
        let calm = !result.counterfactual_adverse[i];
        match (result.intervened[i], accounting) {
            (true, InterventionAccounting::Excluded) => None,
            (true, InterventionAccounting::Unusable) => Some(false),
            _ => Some(detected && calm),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsableReport {
    pub raw: UsableFrames,
    pub counterfactual: UsableFrames,
    pub intervened_unusable: UsableFrames,
    pub intervened_excluded: UsableFrames,
}

impl UsableReport {
    pub fn from_replay(result: &ReplayResult) -> Self {
        Self {
            raw: usable_frames(&result.samples, &result.mission.sampling_phases, result.config.theta_s),
            counterfactual: usable_frames_replay(result, InterventionAccounting::Counterfactual),
            intervened_unusable: usable_frames_replay(result, InterventionAccounting::Unusable),
            intervened_excluded: usable_frames_replay(result, InterventionAccounting::Excluded),
        }
    }

    /// The figure used in comparison rows.
    pub fn headline(&self) -> &UsableFrames {
        &self.counterfactual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionDuration {
    pub total_ms: f64,
    pub sampling_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mission_id: String,
    pub theta_s: f64,
    pub warning_window_s: Option<f64>,
    pub first_detection_ms: Option<u64>,
    pub usable_frames: UsableReport,
    pub adverse_behavior_ms: f64,
    pub counterfactual_adverse_ms: Option<f64>,
    pub mission_duration: MissionDuration,
    /// Durations of annotated flight responses, seconds.
    pub flight_response_s: Vec<f64>,
    /// One entry per annotated alert-vigilance event: was any sample inside
    /// it above threshold.
    pub detection_true_positive: Vec<bool>,
    pub diagnostics: Vec<String>,
}

impl MetricsReport {
    pub fn from_replay(result: &ReplayResult) -> Self {
        let theta = result.config.theta_s;
        let mission = &result.mission;
        let warning_window_s = warning_window(&result.samples, &mission.events, theta);
        let mut diagnostics = Vec::new();
        if let Some(w) = warning_window_s.filter(|w| *w < 0.0) {
            diagnostics.push(format!(
                "first exceedance came {:.1} s after the flight response began (missed warning)",
                -w
            ));
        }
        if mission.events.iter().any(|e| e.kind == GroundTruthKind::FlightResponse)
            && first_detection_ms(&result.samples, theta).is_none()
        {
            diagnostics.push("flight response without any threshold crossing".into());
        }
        let detection_true_positive = mission
            .events
            .iter()
            .filter(|e| e.kind == GroundTruthKind::AlertVigilance)
            .map(|e| {
                result
                    .samples
                    .iter()
                    .any(|s| e.span().contains(s.timestamp_ms) && s.exceeds(theta))
            })
            .collect();
        MetricsReport {
            mission_id: mission.mission_id.clone(),
            theta_s: theta,
            warning_window_s,
            first_detection_ms: first_detection_ms(&result.samples, theta),
            usable_frames: UsableReport::from_replay(result),
            adverse_behavior_ms: result.raw_adverse_ms,
            counterfactual_adverse_ms: result.intervention.map(|_| result.counterfactual_adverse_ms),
            mission_duration: MissionDuration {
                total_ms: mission.duration_ms,
                sampling_ms: mission.sampling_phases.iter().map(|p| p.duration_ms() as f64).sum(),
            },
            flight_response_s: mission
                .events
                .iter()
                .filter(|e| e.kind == GroundTruthKind::FlightResponse)
                .map(|e| e.span().duration_ms() as f64 / 1000.0)
                .collect(),
            detection_true_positive,
            diagnostics,
        }
    }

    /// Adverse time after intervention when simulated, raw otherwise.
    pub fn effective_adverse_ms(&self) -> f64 {
        self.counterfactual_adverse_ms.unwrap_or(self.adverse_behavior_ms)
    }
}

/// Mean over the reports that have a warning window.
pub fn mean_warning_window(reports: &[MetricsReport]) -> Option<f64> {
    let w: Vec<f64> = reports.iter().filter_map(|r| r.warning_window_s).collect();
    (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
}

/// `mm:ss`, rounded to the nearest second.
pub fn format_mmss(ms: f64) -> String {
    let secs = (ms.max(0.0) / 1000.0).round() as u64;
    format!("{:02}:{:02}", secs / 60, secs % 60)
}

fn format_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub usable_total_pct: f64,
    pub usable_sampling_pct: Option<f64>,
    pub adverse_ms: f64,
    pub mission_total_ms: f64,
    pub mission_sampling_ms: f64,
    pub intervention: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

pub fn comparison_report<'a, I>(results: I) -> ComparisonReport
where
    I: IntoIterator<Item = (&'a str, &'a ReplayResult)>,
{
    let rows = results
        .into_iter()
        .map(|(label, result)| {
            let m = MetricsReport::from_replay(result);
            let usable = m.usable_frames.headline();
            ComparisonRow {
                label: label.to_string(),
                usable_total_pct: usable.total_pct(),
                usable_sampling_pct: usable.sampling_pct(),
                adverse_ms: m.effective_adverse_ms(),
                mission_total_ms: m.mission_duration.total_ms,
                mission_sampling_ms: m.mission_duration.sampling_ms,
                intervention: result.intervention.is_some(),
            }
        })
        .collect();
    ComparisonReport { rows }
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,usable_total_pct,usable_sampling_pct,adverse_mmss,mission_total_mmss,mission_sampling_mmss\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&r.label),
                format_pct(Some(r.usable_total_pct)),
                format_pct(r.usable_sampling_pct),
                format_mmss(r.adverse_ms),
                format_mmss(r.mission_total_ms),
                format_mmss(r.mission_sampling_ms),
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Method | Usable frames (%) total / sampling | Adverse behavior (mm:ss) | Mission time total / sampling |\n\
             |---|---|---|---|\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} / {} | {} | {} / {} |",
                r.label.replace('|', "\\|"),
                format_pct(Some(r.usable_total_pct)),
                format_pct(r.usable_sampling_pct),
                format_mmss(r.adverse_ms),
                format_mmss(r.mission_total_ms),
                format_mmss(r.mission_sampling_ms),
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
