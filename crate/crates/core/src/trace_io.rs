//! Mission trace files (`.vtrace.jsonl`).
//!
//! Line 1 is a header object:
//!
//! ```json
//! {"v":1,"metadata":{"mission_id":"m1","species":"plains zebra","herd_size":4,"fps":30.0,
//!   "collection_mode":"SYNTHETIC","sampling_phases":[{"start_ms":0,"end_ms":60000}]},
//!  "events":[{"kind":"FLIGHT_RESPONSE","start_ms":63000,"end_ms":82000}]}
//! ```
//!
//! Every following non-empty line is one [`FrameObservation`]. Unknown
//! fields at the header, metadata, frame and individual level are kept and
//! written back unchanged.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vigilance::FrameObservation;

pub const TRACE_VERSION: u32 = 1;
pub const TRACE_EXTENSION: &str = ".vtrace.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CollectionMode {
    Hitl,
    Hotl,
    Synthetic,
}

/// Half-open `[start_ms, end_ms)` span of mission time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl TimeSpan {
    pub fn new(start_ms: u64, end_ms: u64) -> Self {
        Self { start_ms, end_ms }
    }

    pub fn contains(&self, t_ms: u64) -> bool {
        t_ms >= self.start_ms && t_ms < self.end_ms
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms.saturating_sub(self.start_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionMetadata {
    pub mission_id: String,
    pub species: String,
    pub herd_size: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altitude_m: Option<f64>,
    pub collection_mode: CollectionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery_pct: Option<f64>,
    /// Portions of the mission spent on behavioral sampling (as opposed to
    /// launch, transit and landing).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sampling_phases: Vec<TimeSpan>,
    #[serde(flatten, default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn default_fps() -> f64 {
    30.0
}

impl MissionMetadata {
    pub fn new(mission_id: impl Into<String>, species: impl Into<String>, herd_size: u32) -> Self {
        Self {
            mission_id: mission_id.into(),
            species: species.into(),
            herd_size,
            fps: default_fps(),
            altitude_m: None,
            collection_mode: CollectionMode::Synthetic,
            battery_pct: None,
            sampling_phases: Vec::new(),
            extra: serde_json::Map::new(),
        }
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroundTruthKind {
    FlightResponse,
    AlertVigilance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub kind: GroundTruthKind,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl GroundTruthEvent {
    pub fn span(&self) -> TimeSpan {
        TimeSpan::new(self.start_ms, self.end_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionTrace {
    pub metadata: MissionMetadata,
    pub frames: Vec<FrameObservation>,
    pub events: Vec<GroundTruthEvent>,
    /// Unknown header fields.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl MissionTrace {
    pub fn new(
        metadata: MissionMetadata,
        frames: Vec<FrameObservation>,
        events: Vec<GroundTruthEvent>,
    ) -> Self {
        Self {
            metadata,
            frames,
            events,
            extra: serde_json::Map::new(),
        }
    }

    /// Mission time covered by the frames; the last frame covers one
    /// nominal frame interval.
    pub fn duration_ms(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(first), Some(last)) => {
                (last.timestamp_ms - first.timestamp_ms) as f64 + self.metadata.frame_interval_ms()
            }
            _ => 0.0,
        }
    }

    pub fn flight_responses(&self) -> impl Iterator<Item = &GroundTruthEvent> {
        self.events
            .iter()
            .filter(|e| e.kind == GroundTruthKind::FlightResponse)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    v: u32,
    metadata: MissionMetadata,
    #[serde(default)]
    events: Vec<GroundTruthEvent>,
    #[serde(flatten, default)]
    extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize)]
struct HeaderRef<'a> {
    v: u32,
    metadata: &'a MissionMetadata,
    events: &'a [GroundTruthEvent],
    #[serde(flatten)]
    extra: &'a serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticKind {
    Schema,
    Ordering,
    Invariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "lowercase")]
pub enum Location {
    Header,
    Frame { position: usize, frame_index: u64 },
    Event { position: usize },
}

impl Location {
    /// One-based line in the file layout produced by [`write_trace`].
    pub fn line(&self) -> usize {
        match self {
            Location::Header | Location::Event { .. } => 1,
            Location::Frame { position, .. } => position + 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: DiagnosticKind,
    pub location: Location,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        let at = match self.location {
            Location::Header => "header".to_string(),
            Location::Frame { frame_index, .. } => format!("frame {frame_index}"),
            Location::Event { position } => format!("event #{position}"),
        };
        write!(f, "{sev}: line {} ({at}): {}", self.location.line(), self.message)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: schema error at `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: unsupported trace version {found}")]
    Version { line: usize, found: u32 },
    #[error("line {line}: ordering violation: {message}")]
    Ordering { line: usize, message: String },
    #[error("line {line}: invariant violation: {message}")]
    Invariant { line: usize, message: String },
}

impl TraceError {
    pub fn line(&self) -> Option<usize> {
        match self {
            TraceError::Io(_) => None,
            TraceError::Schema { line, .. }
            | TraceError::Version { line, .. }
            | TraceError::Ordering { line, .. }
            | TraceError::Invariant { line, .. } => Some(*line),
        }
    }
}

impl From<&Diagnostic> for TraceError {
    fn from(d: &Diagnostic) -> Self {
        let line = d.location.line();
        let message = d.message.clone();
        match d.kind {
            DiagnosticKind::Ordering => TraceError::Ordering { line, message },
            DiagnosticKind::Invariant => TraceError::Invariant { line, message },
            DiagnosticKind::Schema => TraceError::Schema {
                line,
                field: String::new(),
                message,
            },
        }
    }
}

fn decode_line<T: DeserializeOwned>(bytes: &[u8], line: usize) -> Result<T, TraceError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| TraceError::Schema {
        line,
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| TraceError::Schema {
        line,
        field: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn is_blank(bytes: &[u8]) -> bool {
    bytes.iter().all(u8::is_ascii_whitespace)
}

/// Parses without running [`validate_trace`].
pub fn read_trace_unchecked<R: BufRead>(mut reader: R) -> Result<MissionTrace, TraceError> {
    let mut buf = Vec::new();
    let mut line = 0usize;
    let header: Header = loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Err(TraceError::Schema {
                line: line.max(1),
                field: "v".into(),
                message: "missing header line".into(),
            });
        }
        line += 1;
        if !is_blank(&buf) {
            break decode_line(&buf, line)?;
        }
    };
    if header.v != TRACE_VERSION {
        return Err(TraceError::Version {
            line,
            found: header.v,
        });
    }

    let mut frames = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line += 1;
        if is_blank(&buf) {
            continue;
        }
        frames.push(decode_line::<FrameObservation>(&buf, line)?);
    }

    Ok(MissionTrace {
        metadata: header.metadata,
        frames,
        events: header.events,
        extra: header.extra,
    })
}

/// Parses and validates; the first error-severity diagnostic becomes the error.
pub fn read_trace<R: BufRead>(reader: R) -> Result<MissionTrace, TraceError> {
    let trace = read_trace_unchecked(reader)?;
    if let Some(d) = validate_trace(&trace)
        .iter()
        .find(|d| d.severity == Severity::Error)
    {
        return Err(d.into());
    }
    Ok(trace)
}

pub fn parse_trace(path: impl AsRef<Path>) -> Result<MissionTrace, TraceError> {
    read_trace(BufReader::new(File::open(path)?))
}

pub fn parse_trace_str(s: &str) -> Result<MissionTrace, TraceError> {
    read_trace(s.as_bytes())
}

pub fn write_trace_to<W: Write>(trace: &MissionTrace, mut w: W) -> io::Result<()> {
    let header = HeaderRef {
        v: TRACE_VERSION,
        metadata: &trace.metadata,
        events: &trace.events,
        extra: &trace.extra,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for frame in &trace.frames {
        serde_json::to_writer(&mut w, frame)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_trace(trace: &MissionTrace, path: impl AsRef<Path>) -> io::Result<()> {
    write_trace_to(trace, BufWriter::new(File::create(path)?))
}

pub fn trace_to_string(trace: &MissionTrace) -> String {
    let mut out = Vec::new();
    write_trace_to(trace, &mut out).expect("writing to memory");
    String::from_utf8(out).expect("serde_json emits utf-8")
}

/// Checks every trace invariant. An empty result means the trace is valid.
pub fn validate_trace(trace: &MissionTrace) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |kind, location, message: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            kind,
            location,
            message,
        })
    };

    let meta = &trace.metadata;
    if !(meta.fps.is_finite() && meta.fps > 0.0) {
        err(
            DiagnosticKind::Invariant,
            Location::Header,
            format!("fps must be positive, got {}", meta.fps),
        );
    }
    if meta.herd_size == 0 {
        err(
            DiagnosticKind::Invariant,
            Location::Header,
            "herd_size must be at least 1".into(),
        );
    }
    for span in &meta.sampling_phases {
        if span.start_ms >= span.end_ms {
            err(
                DiagnosticKind::Invariant,
                Location::Header,
                format!("sampling phase {}..{} is empty", span.start_ms, span.end_ms),
            );
        }
    }
    let interval = if meta.fps > 0.0 && meta.fps.is_finite() {
        Some(1000.0 / meta.fps)
    } else {
        None
    };

    let first = trace.frames.first();
    let mut prev: Option<&FrameObservation> = None;
    let mut ids = HashSet::new();
    for (position, frame) in trace.frames.iter().enumerate() {
        let loc = Location::Frame {
            position,
            frame_index: frame.frame_index,
        };
        if let Some(p) = prev {
            if frame.frame_index <= p.frame_index {
                err(
                    DiagnosticKind::Ordering,
                    loc,
                    format!(
                        "frame_index {} does not increase past {}",
                        frame.frame_index, p.frame_index
                    ),
                );
            }
            if frame.timestamp_ms < p.timestamp_ms {
                err(
                    DiagnosticKind::Ordering,
                    loc,
                    format!(
                        "timestamp_ms {} precedes {}",
                        frame.timestamp_ms, p.timestamp_ms
                    ),
                );
            }
        }
        if let (Some(first), Some(interval)) = (first, interval) {
            if frame.frame_index >= first.frame_index && frame.timestamp_ms >= first.timestamp_ms {
                let expected = (frame.frame_index - first.frame_index) as f64 * interval;
                let actual = (frame.timestamp_ms - first.timestamp_ms) as f64;
                if (actual - expected).abs() > interval + 1e-9 {
                    err(
                        DiagnosticKind::Invariant,
                        loc,
                        format!(
                            "timestamp_ms {} is more than one frame from the {:.1} ms implied by fps",
                            frame.timestamp_ms,
                            expected + first.timestamp_ms as f64
                        ),
                    );
                }
            }
        }

        ids.clear();
        for ind in &frame.individuals {
            if !ids.insert(ind.individual_id.as_str()) {
                err(
                    DiagnosticKind::Invariant,
                    loc,
                    format!("duplicate individual_id `{}`", ind.individual_id),
                );
            }
            if !(0.0..=1.0).contains(&ind.detection_confidence) {
                err(
                    DiagnosticKind::Invariant,
                    loc,
                    format!(
                        "detection_confidence {} of `{}` outside [0, 1]",
                        ind.detection_confidence, ind.individual_id
                    ),
                );
            }
            if !(0.0..=1.0).contains(&ind.behavior_confidence) {
                err(
                    DiagnosticKind::Invariant,
                    loc,
                    format!(
                        "behavior_confidence {} of `{}` outside [0, 1]",
                        ind.behavior_confidence, ind.individual_id
                    ),
                );
            }
            if !ind.bbox.is_valid() {
                err(
                    DiagnosticKind::Invariant,
                    loc,
                    format!("bbox of `{}` leaves the unit square", ind.individual_id),
                );
            }
        }
        prev = Some(frame);
    }

    // Events may extend through the last frame's own interval.
    let horizon = trace
        .frames
        .last()
        .map(|f| f.timestamp_ms as f64 + interval.unwrap_or(0.0));
    let mut flights: Vec<(usize, &GroundTruthEvent)> = Vec::new();
    for (position, ev) in trace.events.iter().enumerate() {
        let loc = Location::Event { position };
        if ev.start_ms >= ev.end_ms {
            err(
                DiagnosticKind::Invariant,
                loc,
                format!("event ends at {} before it starts at {}", ev.end_ms, ev.start_ms),
            );
        }
        match horizon {
            Some(h) if (ev.end_ms as f64) <= h + 1e-9 => {}
            Some(h) => err(
                DiagnosticKind::Invariant,
                loc,
                format!("event end {} lies beyond the recording ({h:.0} ms)", ev.end_ms),
            ),
            None => err(
                DiagnosticKind::Invariant,
                loc,
                "event in a trace without frames".into(),
            ),
        }
        if ev.kind == GroundTruthKind::FlightResponse {
            flights.push((position, ev));
        }
    }
    flights.sort_by_key(|(_, e)| e.start_ms);
    for pair in flights.windows(2) {
        let ((_, a), (pos, b)) = (pair[0], pair[1]);
        if b.start_ms < a.end_ms {
            err(
                DiagnosticKind::Invariant,
                Location::Event { position: pos },
                format!(
                    "flight response {}..{} overlaps {}..{}",
                    b.start_ms, b.end_ms, a.start_ms, a.end_ms
                ),
            );
        }
    }

    out
}
