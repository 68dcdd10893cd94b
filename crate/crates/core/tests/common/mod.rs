//! Shared fixtures and independent oracles for the integration suites.
//!
//! Oracles here deliberately avoid the crate's scoring, alerting and replay
//! code paths: they recompute from raw observations with the simplest
//! possible algorithm (enumeration, direct scans, frame counting).

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vigil_core::replay::{generate_synthetic_trace, Phase, SyntheticParams};
use vigil_core::trace_io::{CollectionMode, GroundTruthKind, MissionTrace};
use vigil_core::vigilance::{
    BBox, BehaviorLabel, BehaviorWeights, FrameObservation, IndividualObservation, VigilanceConfig,
};

pub const FPS: f64 = 30.0;

/// Frames a phase of `ms` milliseconds occupies at 30 fps, for durations that
/// are multiples of 100 ms (frame timestamps then land exactly on phase edges).
pub const fn frames(ms: u64) -> u64 {
    assert!(ms % 100 == 0);
    ms * 3 / 100
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Scores a frame by enumerating every subset of individuals and keeping the
/// one subset that contains exactly the confident ones.
///
/// Exponential on purpose; call with at most ~12 individuals.
pub fn brute_force_score(frame: &FrameObservation, cfg: &VigilanceConfig) -> Option<f64> {
    let inds = &frame.individuals;
    let n = inds.len();
    assert!(n <= 16, "enumeration oracle is exponential");
    let passes = |i: &IndividualObservation| {
        i.detection_confidence > cfg.theta_c && i.behavior_confidence > cfg.theta_c
    };
    let mut chosen = None;
    for mask in 0u32..(1 << n) {
        let consistent = (0..n).all(|k| ((mask >> k) & 1 == 1) == passes(&inds[k]));
        if consistent {
            assert!(chosen.is_none(), "two consistent subsets");
            chosen = Some(mask);
        }
    }
    let mask = chosen.expect("one subset always matches");
    let members: Vec<&IndividualObservation> = (0..n).filter(|k| (mask >> k) & 1 == 1).map(|k| &inds[k]).collect();
    if members.is_empty() {
        return None;
    }
    let total: f64 = members.iter().map(|i| cfg.weights.get(i.behavior)).sum();
    Some(total / members.len() as f64)
}

/// Positions at which a red alert should be raised for a boolean exceedance
/// sequence: the third sample of every maximal run of at least three.
pub fn enter_red_positions(exceed: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < exceed.len() {
        if !exceed[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < exceed.len() && exceed[i] {
            i += 1;
        }
        if i - start >= 3 {
            out.push(start + 2);
        }
    }
    out
}

/// Frame-level counterfactual accounting for traces without degraded frames
/// inside adverse runs.
///
/// Each maximal run of exceeding frames is alerted on its third frame when it
/// has one, or immediately if the previous run's alert is still latched (never
/// the case in the fixtures, which separate runs by calm frames). The run
/// stays adverse for `lag + response + deescalation` after its first frame,
/// where lag is the alert frame's offset. Returns (raw_ms, counterfactual_ms),
/// summing per-frame intervals (next timestamp minus this one; the last frame
/// spans `1000 / fps`).
pub fn frame_level_adverse_ms(
    ts: &[u64],
    exceed: &[bool],
    fps: f64,
    response_ms: u64,
    deescalation_ms: u64,
) -> (f64, f64) {
    let interval = |i: usize| -> f64 {
        if i + 1 < ts.len() {
            (ts[i + 1] - ts[i]) as f64
        } else {
            1000.0 / fps
        }
    };
    let (mut raw, mut cf) = (0.0, 0.0);
    let mut i = 0;
    while i < exceed.len() {
        if !exceed[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < exceed.len() && exceed[i] {
            i += 1;
        }
        let alert = (i - start >= 3).then_some(start + 2);
        for k in start..i {
            raw += interval(k);
            let adverse = match alert {
                Some(a) => ts[k] - ts[start] < ts[a] - ts[start] + response_ms + deescalation_ms,
                None => true,
            };
            if adverse {
                cf += interval(k);
            }
        }
    }
    (raw, cf)
}

/// Exceedance flags straight from observations, head-up weighting only.
pub fn head_up_exceedances(trace: &MissionTrace, theta_s: f64, theta_c: f64) -> Vec<bool> {
    trace
        .frames
        .iter()
        .map(|f| {
            let inc: Vec<_> = f
                .individuals
                .iter()
                .filter(|i| i.detection_confidence > theta_c && i.behavior_confidence > theta_c)
                .collect();
            if inc.is_empty() {
                return false;
            }
            let up = inc.iter().filter(|i| i.behavior == BehaviorLabel::HeadUp).count();
            up as f64 / inc.len() as f64 > theta_s
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Random inputs
// ---------------------------------------------------------------------------

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Confidence that often lands exactly on, just below or just above 0.5.
pub fn random_confidence(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..6) {
        0 => 0.5,
        1 => 0.5 - 1e-9,
        2 => 0.5 + 1e-9,
        _ => rng.gen_range(0.0..=1.0),
    }
}

pub fn random_label(rng: &mut ChaCha8Rng) -> BehaviorLabel {
    BehaviorLabel::ALL[rng.gen_range(0..BehaviorLabel::ALL.len())]
}

pub fn random_individual(rng: &mut ChaCha8Rng, id: usize) -> IndividualObservation {
    let w = rng.gen_range(0.01..0.3);
    let h = rng.gen_range(0.01..0.3);
    IndividualObservation::new(
        format!("z{id}"),
        BBox::new(rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h), w, h),
        random_confidence(rng),
        random_label(rng),
        random_confidence(rng),
    )
}

pub fn random_frame(rng: &mut ChaCha8Rng, index: u64, max_individuals: usize) -> FrameObservation {
    let n = rng.gen_range(0..=max_individuals);
    let inds = (0..n).map(|k| random_individual(rng, k)).collect();
    FrameObservation::new(index, index * 33, inds)
}

/// Weights drawn from eighths, so weight sums are exact in binary and two
/// summation orders agree bit for bit. Unknown stays at zero.
pub fn random_weights(rng: &mut ChaCha8Rng) -> BehaviorWeights {
    let mut w = BehaviorWeights::zero();
    for l in BehaviorLabel::ALL {
        if l != BehaviorLabel::Unknown {
            w.set(l, rng.gen_range(0..=8) as f64 / 8.0).unwrap();
        }
    }
    w
}

/// Random but valid mission built from 1–6 random phases.
pub fn random_trace(rng: &mut ChaCha8Rng, seed: u64) -> MissionTrace {
    let herd = rng.gen_range(1..=12);
    let n_phases = rng.gen_range(1..=6);
    let phases = (0..n_phases)
        .map(|_| {
            let d = rng.gen_range(1..=40) * 100;
            let p = match rng.gen_range(0..5) {
                0 => Phase::calm(d),
                1 => Phase::vigilant(d, rng.gen_range(0.0..=1.0)),
                2 => Phase::hidden(d),
                3 => Phase::flight(d),
                _ => Phase::vigilant(d, 0.35),
            };
            p.with_noise(rng.gen_range(0.0..0.3))
        })
        .collect();
    generate_synthetic_trace(&SyntheticParams::new(herd, phases, seed)).unwrap()
}

// ---------------------------------------------------------------------------
// Warning-window missions
// ---------------------------------------------------------------------------

/// Four field missions: herd size and the calm / alert-vigilance / flight
/// phase lengths (ms). Alert-vigilance phases keep half the herd head-up
/// (S = 0.5 > 0.3); calm phases have noise small enough that no animal is
/// ever head-up. The warning window is the alert-vigilance phase length,
/// since the first exceedance is the phase's first frame and the flight
/// starts right after it.
pub const WARNING_MISSIONS: [(u32, u64, u64, u64); 4] = [
    (4, 225_000, 53_000, 19_000),
    (8, 209_000, 22_000, 18_000),
    (5, 620_000, 38_000, 51_000),
    (5, 90_000, 91_000, 9_000),
];

pub const EXPECTED_WINDOWS_S: [f64; 4] = [53.0, 22.0, 38.0, 91.0];

pub fn warning_mission(i: usize) -> MissionTrace {
    let (herd, calm, alert, flight) = WARNING_MISSIONS[i];
    let params = SyntheticParams {
        mission_id: format!("M{}", i + 1),
        collection_mode: CollectionMode::Hitl,
        ..SyntheticParams::new(
            herd,
            vec![
                Phase::calm(calm).with_noise(0.05),
                Phase::vigilant(alert, 0.5)
                    .with_noise(0.05)
                    .with_event(GroundTruthKind::AlertVigilance),
                Phase::flight(flight),
            ],
            100 + i as u64,
        )
    };
    generate_synthetic_trace(&params).unwrap()
}

// ---------------------------------------------------------------------------
// Method-comparison missions
// ---------------------------------------------------------------------------
//
// Usable frame: at least one confident detection and S <= theta. Hidden
// phases give empty frames (unusable), calm phases give S = 0 (usable),
// alert phases give S = 0.5 (unusable unless an intervention suppresses
// them). All phase lengths are multiples of 100 ms, so frame counts are
// exactly 3 per 100 ms (see `frames`).
//
// With the default intervention (response 0, de-escalation 1 s) an alert
// run raises ENTER_RED on its third frame, 67 ms after the run starts, and
// stays counterfactually adverse while t - start < 67 + 0 + 1000 = 1067 ms:
// frames 0..=31 of the run (frame 32 sits at exactly 1067 ms). So 32 frames
// remain unusable and the adverse time is 1067 ms, displayed as 00:01.
//
// HITL (no intervention), 718 s = 11:58 total, 544 s sampling:
//   hidden 120 s | calm 0.5 s | sampling[calm 100, hidden 14.3, alert 14,
//   calm 415.7] | hidden 53.5 s
//   frames: 3600 + 15 + 16320 + 1605 = 21540
//   usable: 15 + (16320 - 429 - 420) = 15486 -> 71.894 %
//   sampling usable: 15471 / 16320 -> 94.80 %; adverse 14 s -> 00:14
//
// HOTL (no intervention), 258 s = 4:18 total, 123 s sampling:
//   calm 89.2 | hidden 45.8 | sampling[calm 60, alert 2, hidden 0.2, calm 60.8]
//   frames: 2676 + 1374 + 3690 = 7740
//   usable: 2676 + (3690 - 60 - 6) = 6300 -> 81.395 %
//   sampling usable: 3624 / 3690 -> 98.21 %; adverse 2 s -> 00:02
//
// BAF (default intervention), 282 s = 4:42 total, 249 s sampling:
//   hidden 25.2 | calm 7.8 | sampling[calm 100, alert 14, calm 20,
//   hidden 10.9, calm 104.1]
//   frames: 756 + 234 + 7470 = 8460
//   usable: 234 + (7470 - 32 - 327) = 7345 -> 86.820 %
//   sampling usable: 7111 / 7470 -> 95.19 %; adverse 1.067 s -> 00:01
//
// BAF+HOTL (default intervention), 455 s = 7:35 total, 304 s sampling:
//   calm 81.7 | hidden 69.3 | sampling[calm 100, alert 10, calm 20,
//   hidden 8, calm 166]
//   frames: 2451 + 2079 + 9120 = 13650
//   usable: 2451 + (9120 - 32 - 240) = 11299 -> 82.776 %
//   sampling usable: 8848 / 9120 -> 97.02 %; adverse 1.067 s -> 00:01

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hitl,
    Hotl,
    Baf,
    BafHotl,
}

pub struct MethodFixture {
    pub label: &'static str,
    pub method: Method,
    pub intervention: bool,
    pub expected_frames: u64,
    pub expected_usable: u64,
    pub expected_sampling_frames: u64,
    pub expected_sampling_usable: u64,
    pub expected_total_pct: f64,
    pub expected_adverse_ms: f64,
    /// As printed in the comparison table.
    pub published_total_pct: f64,
    pub published_adverse_s: u64,
}

pub const METHODS: [MethodFixture; 4] = [
    MethodFixture {
        label: "HITL",
        method: Method::Hitl,
        intervention: false,
        expected_frames: 21_540,
        expected_usable: 15_486,
        expected_sampling_frames: 16_320,
        expected_sampling_usable: 15_471,
        expected_total_pct: 100.0 * 15_486.0 / 21_540.0,
        expected_adverse_ms: 14_000.0,
        published_total_pct: 71.9,
        published_adverse_s: 14,
    },
    MethodFixture {
        label: "HOTL",
        method: Method::Hotl,
        intervention: false,
        expected_frames: 7_740,
        expected_usable: 6_300,
        expected_sampling_frames: 3_690,
        expected_sampling_usable: 3_624,
        expected_total_pct: 100.0 * 6_300.0 / 7_740.0,
        expected_adverse_ms: 2_000.0,
        published_total_pct: 81.4,
        published_adverse_s: 2,
    },
    MethodFixture {
        label: "BAF",
        method: Method::Baf,
        intervention: true,
        expected_frames: 8_460,
        expected_usable: 7_345,
        expected_sampling_frames: 7_470,
        expected_sampling_usable: 7_111,
        expected_total_pct: 100.0 * 7_345.0 / 8_460.0,
        expected_adverse_ms: 1_067.0,
        published_total_pct: 86.8,
        published_adverse_s: 1,
    },
    MethodFixture {
        label: "BAF+HOTL",
        method: Method::BafHotl,
        intervention: true,
        expected_frames: 13_650,
        expected_usable: 11_299,
        expected_sampling_frames: 9_120,
        expected_sampling_usable: 8_848,
        expected_total_pct: 100.0 * 11_299.0 / 13_650.0,
        expected_adverse_ms: 1_067.0,
        published_total_pct: 82.8,
        published_adverse_s: 1,
    },
];

fn alert(ms: u64) -> Phase {
    Phase::vigilant(ms, 0.5).sampling()
}

fn calm_s(ms: u64) -> Phase {
    Phase::calm(ms).sampling()
}

fn hidden_s(ms: u64) -> Phase {
    Phase::hidden(ms).sampling()
}

pub fn method_phases(method: Method) -> Vec<Phase> {
    match method {
        Method::Hitl => vec![
            Phase::hidden(120_000),
            Phase::calm(500),
            calm_s(100_000),
            hidden_s(14_300),
            alert(14_000),
            calm_s(415_700),
            Phase::hidden(53_500),
        ],
        Method::Hotl => vec![
            Phase::calm(89_200),
            Phase::hidden(45_800),
            calm_s(60_000),
            alert(2_000),
            hidden_s(200),
            calm_s(60_800),
        ],
        Method::Baf => vec![
            Phase::hidden(25_200),
            Phase::calm(7_800),
            calm_s(100_000),
            alert(14_000),
            calm_s(20_000),
            hidden_s(10_900),
            calm_s(104_100),
        ],
        Method::BafHotl => vec![
            Phase::calm(81_700),
            Phase::hidden(69_300),
            calm_s(100_000),
            alert(10_000),
            calm_s(20_000),
            hidden_s(8_000),
            calm_s(166_000),
        ],
    }
}

pub fn method_trace(f: &MethodFixture) -> MissionTrace {
    let mode = match f.method {
        Method::Hitl => CollectionMode::Hitl,
        _ => CollectionMode::Hotl,
    };
    let params = SyntheticParams {
        mission_id: f.label.to_string(),
        collection_mode: mode,
        ..SyntheticParams::new(6, method_phases(f.method), 7)
    };
    generate_synthetic_trace(&params).unwrap()
}

/// Same sums as the fixture comments, recomputed from the phase list alone.
pub fn derived_counts(method: Method, cf_adverse_frames: u64) -> (u64, u64, u64, u64) {
    let phases = method_phases(method);
    let (mut total, mut usable, mut s_total, mut s_usable) = (0, 0, 0, 0);
    for p in &phases {
        let n = frames(p.duration_ms);
        let u = if !p.visible {
            0
        } else if p.vigilant_fraction > 0.3 {
            // Alerted runs keep `cf_adverse_frames` unusable; others keep all.
            n - cf_adverse_frames.min(n)
        } else {
            n
        };
        total += n;
        usable += u;
        if p.sampling {
            s_total += n;
            s_usable += u;
        }
    }
    (total, usable, s_total, s_usable)
}
