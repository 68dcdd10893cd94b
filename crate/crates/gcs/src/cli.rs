use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use vigil_core::alerting::AlertEventKind;
use vigil_core::metrics::{comparison_report, format_mmss, mean_warning_window, MetricsReport};
use vigil_core::pipeline::{
    budget_from_env, run_pipeline, trace_backend, trace_handles, BackendCapabilities, PipelineOptions,
    PipelineOutput, PipelineStats, SamplingPolicy, SimulatedDelays,
};
use vigil_core::replay::{generate_synthetic_trace, replay_mission, DroneState, InterventionModel, Phase, Speed, SyntheticParams};
use vigil_core::trace_io::{
    read_trace_unchecked, trace_to_string, validate_trace, GroundTruthKind, MissionTrace, Severity,
};
use vigil_core::vigilance::VigilanceConfig;

use crate::server::{self, AppState};
use crate::session::SessionSpec;

#[derive(Debug, Parser)]
#[command(name = "vigil", version, about = "Herd vigilance monitoring: replay, analysis and ground-station service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-mission metrics and the mean warning window.
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        theta: f64,
        #[arg(long)]
        json: bool,
    },
    /// Replay a trace through the live pipeline, printing alerts as they fire.
    Replay {
        trace: PathBuf,
        /// `1x`, `4x`, `afap`, ...
        #[arg(long, default_value = "1x")]
        speed: Speed,
        #[arg(long, default_value_t = 0.3)]
        theta: f64,
        /// Serve the replay over HTTP/WebSocket instead of printing it.
        #[arg(long)]
        serve: bool,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Compare each trace with and without a simulated intervention.
    Simulate {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// JSON intervention model; flags below override its fields.
        #[arg(long)]
        intervention: Option<PathBuf>,
        #[arg(long)]
        response_ms: Option<u64>,
        #[arg(long)]
        deescalation_ms: Option<u64>,
        #[arg(long)]
        duration_ms: Option<u64>,
        #[arg(long, value_enum)]
        action: Option<Action>,
        #[arg(long, default_value_t = 0.3)]
        theta: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Generate a synthetic trace.
    Gen {
        /// JSON generator parameters; a built-in mission if omitted.
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Check traces for schema, ordering and invariant problems.
    Validate {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Run the ground-station service.
    Serve {
        /// Defaults to $VIGIL_BIND, then 127.0.0.1:8787.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Measure pipeline latency over a trace with a simulated or external backend.
    Pipeline {
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Latency::Gpu)]
        latency: Latency,
        /// Unix socket of an external inference process; overrides --latency.
        #[arg(long)]
        socket: Option<PathBuf>,
        /// `every`, `stride:K` or `adaptive`.
        #[arg(long, default_value = "every", value_parser = parse_policy)]
        policy: SamplingPolicy,
        #[arg(long, default_value = "1x")]
        speed: Speed,
        /// Defaults to $VIGIL_BUDGET_MS, then 33.
        #[arg(long)]
        budget_ms: Option<f64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Action {
    Pause,
    Retreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Latency {
    None,
    Gpu,
    Cpu,
}

fn parse_policy(s: &str) -> Result<SamplingPolicy, String> {
    let p = match s {
        "every" => SamplingPolicy::EveryFrame,
        "adaptive" => SamplingPolicy::Adaptive,
        _ => {
            let k = s
                .strip_prefix("stride:")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| format!("expected every, stride:K or adaptive, got `{s}`"))?;
            SamplingPolicy::Stride(k)
        }
    };
    p.validate().map_err(|e| e.to_string())
}

type Outcome = Result<ExitCode, String>;

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Analyze { traces, theta, json } => analyze(&traces, theta, json),
        Command::Replay { trace, speed, theta, serve, bind } => replay(&trace, speed, theta, serve, bind),
        Command::Simulate { traces, intervention, response_ms, deescalation_ms, duration_ms, action, theta, format } => {
            load_intervention(intervention.as_deref()).and_then(|mut m| {
                if let Some(v) = response_ms {
                    m.response_latency_ms = v;
                }
                if let Some(v) = deescalation_ms {
                    m.deescalation_delay_ms = v;
                }
                if let Some(v) = duration_ms {
                    m.intervention_duration_ms = v;
                }
                if let Some(a) = action {
                    m.action = match a {
                        Action::Pause => DroneState::Pause,
                        Action::Retreat => DroneState::Retreat,
                    };
                }
                simulate(&traces, &m, theta, format)
            })
        }
        Command::Gen { params, seed, out } => gen(params.as_deref(), seed, out.as_deref()),
        Command::Validate { traces } => validate(&traces),
        Command::Serve { bind } => serve(bind),
        Command::Pipeline { trace, latency, socket, policy, speed, budget_ms, json } => {
            pipeline(&trace, latency, socket.as_deref(), policy, speed, budget_ms, json)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}

fn config(theta: f64) -> Result<VigilanceConfig, String> {
    VigilanceConfig::with_theta(theta).map_err(|e| e.to_string())
}

/// Reads a trace, reporting every diagnostic rather than only the first.
fn load(path: &Path) -> Result<MissionTrace, String> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let trace = read_trace_unchecked(std::io::BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))?;
    let errors: Vec<String> = validate_trace(&trace)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| format!("{}: {d}", path.display()))
        .collect();
    if errors.is_empty() {
        Ok(trace)
    } else {
        Err(errors.join("\n"))
    }
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.2}{unit}"))
}

fn analyze(paths: &[PathBuf], theta: f64, as_json: bool) -> Outcome {
    let cfg = config(theta)?;
    let mut reports = Vec::new();
    for p in paths {
        let trace = load(p)?;
        let result = replay_mission(&trace, &cfg, None, Speed::Afap).map_err(|e| format!("{}: {e}", p.display()))?;
        reports.push(MetricsReport::from_replay(&result));
    }
    let mean = mean_warning_window(&reports);
    if as_json {
        let out = json!({"reports": reports, "mean_warning_window_s": mean});
        println!("{}", serde_json::to_string_pretty(&out).map_err(|e| e.to_string())?);
        return Ok(ExitCode::SUCCESS);
    }
    println!("{:<16} {:>10} {:>12} {:>10} {:>9}", "mission", "warning", "first", "adverse", "usable");
    for r in &reports {
        println!(
            "{:<16} {:>10} {:>12} {:>10} {:>8.1}%",
            r.mission_id,
            fmt_opt(r.warning_window_s, " s"),
            r.first_detection_ms.map_or_else(|| "-".into(), |t| format_mmss(t as f64)),
            format_mmss(r.adverse_behavior_ms),
            r.usable_frames.headline().total_pct(),
        );
        for d in &r.diagnostics {
            println!("  note: {d}");
        }
    }
    println!("mean warning window: {}", fmt_opt(mean, " s"));
    Ok(ExitCode::SUCCESS)
}

fn replay(path: &Path, speed: Speed, theta: f64, serve: bool, bind: Option<String>) -> Outcome {
    let trace = load(path)?;
    let cfg = config(theta)?;
    if serve {
        let spec = SessionSpec {
            trace,
            config: cfg,
            speed,
            policy: SamplingPolicy::EveryFrame,
            delays: SimulatedDelays::NONE,
        };
        return run_server(bind, Some(spec));
    }
    let mut options = PipelineOptions::paced(speed);
    options.fps = trace.metadata.fps;
    let handle = run_pipeline(
        trace_handles(&trace),
        trace_backend(&trace, SimulatedDelays::NONE),
        cfg,
        SamplingPolicy::EveryFrame,
        options,
    )
    .map_err(|e| e.to_string())?;
    let origin = trace.frames.first().map_or(0, |f| f.timestamp_ms);
    let mut out = std::io::stdout().lock();
    for o in handle.outputs().iter() {
        if let PipelineOutput::Processed { event: Some(e), .. } = &o {
            let cue = match (e.audio, e.flashing) {
                (true, true) => " [audio, flashing]",
                (true, false) => " [audio]",
                (false, true) => " [flashing]",
                _ => "",
            };
            let score = e.score.map_or_else(|| "-".into(), |s| format!("{s:.3}"));
            let _ = writeln!(
                out,
                "{} frame {:>6} {:<14} score {score}{cue}",
                format_mmss((e.timestamp_ms - origin) as f64),
                e.frame_index,
                json!(e.kind).as_str().unwrap_or_default(),
            );
        }
    }
    let stats = handle.join();
    let _ = writeln!(out, "processed {} frames, skipped {}", stats.processed, stats.skipped());
    Ok(ExitCode::SUCCESS)
}

fn load_intervention(path: Option<&Path>) -> Result<InterventionModel, String> {
    let Some(p) = path else { return Ok(InterventionModel::default()) };
    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
}

fn simulate(paths: &[PathBuf], model: &InterventionModel, theta: f64, format: Format) -> Outcome {
    model.validate().map_err(|e| e.to_string())?;
    let cfg = config(theta)?;
    let mut runs = Vec::new();
    for p in paths {
        let trace = load(p)?;
        let raw = replay_mission(&trace, &cfg, None, Speed::Afap).map_err(|e| e.to_string())?;
        let with = replay_mission(&trace, &cfg, Some(model), Speed::Afap).map_err(|e| e.to_string())?;
        let id = trace.metadata.mission_id.clone();
        runs.push((id.clone(), raw));
        runs.push((format!("{id} + intervention"), with));
    }
    let report = comparison_report(runs.iter().map(|(l, r)| (l.as_str(), r)));
    match format {
        Format::Table => print!("{}", report.to_markdown()),
        Format::Csv => print!("{}", report.to_csv()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?),
    }
    Ok(ExitCode::SUCCESS)
}

/// A short mission with one alert episode and a flight response.
pub fn default_params() -> SyntheticParams {
    SyntheticParams::new(
        6,
        vec![
            Phase::calm(60_000).with_noise(0.05).sampling(),
            Phase::vigilant(10_000, 0.5)
                .with_noise(0.05)
                .with_event(GroundTruthKind::AlertVigilance)
                .sampling(),
            Phase::flight(5_000),
            Phase::calm(20_000).with_noise(0.05).sampling(),
        ],
        0,
    )
}

fn gen(params: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Outcome {
    let mut params = match params {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str::<SyntheticParams>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => default_params(),
    };
    if let Some(s) = seed {
        params.seed = s;
    }
    let trace = generate_synthetic_trace(&params).map_err(|e| e.to_string())?;
    let text = trace_to_string(&trace);
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                // `vigil gen | head` is fine.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.to_string()),
                _ => {}
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(paths: &[PathBuf]) -> Outcome {
    let mut ok = true;
    for p in paths {
        let file = match fs::File::open(p) {
            Ok(f) => f,
            Err(e) => {
                println!("{}: {e}", p.display());
                ok = false;
                continue;
            }
        };
        match read_trace_unchecked(std::io::BufReader::new(file)) {
            Err(e) => {
                println!("{}: error: {e}", p.display());
                ok = false;
            }
            Ok(trace) => {
                let diags = validate_trace(&trace);
                for d in &diags {
                    println!("{}: {d}", p.display());
                }
                let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
                if errors > 0 {
                    ok = false;
                } else {
                    println!("{}: ok ({} frames, {} warnings)", p.display(), trace.frames.len(), diags.len());
                }
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn serve(bind: Option<String>) -> Outcome {
    run_server(bind, None)
}

fn run_server(bind: Option<String>, initial: Option<SessionSpec>) -> Outcome {
    let addr = bind.unwrap_or_else(server::bind_from_env);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let (listener, local) = server::bind(&addr).await.map_err(|e| format!("{addr}: {e}"))?;
        let state = AppState::new();
        println!("listening on http://{local}");
        if let Some(spec) = initial {
            let s = state.add(spec, true)?;
            println!("session {} telemetry: ws://{local}/session/{}/telemetry", s.id(), s.id());
        }
        server::serve(listener, state).await.map_err(|e| e.to_string())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    Some(sorted[i])
}

fn pipeline(
    path: &Path,
    latency: Latency,
    socket: Option<&Path>,
    policy: SamplingPolicy,
    speed: Speed,
    budget_ms: Option<f64>,
    as_json: bool,
) -> Outcome {
    let trace = load(path)?;
    let mut options = PipelineOptions::paced(speed);
    options.fps = trace.metadata.fps;
    options.budget_ms = budget_ms.unwrap_or_else(budget_from_env);
    let cfg = VigilanceConfig::default();
    let budget = options.budget_ms;
    let handle = match socket {
        #[cfg(unix)]
        Some(p) => {
            let backend = vigil_core::pipeline::SocketBackend::connect(p, BackendCapabilities::GPU_REFERENCE)
                .map_err(|e| format!("{}: {e}", p.display()))?;
            run_pipeline(trace_handles(&trace), backend, cfg, policy, options)
        }
        #[cfg(not(unix))]
        Some(_) => return Err("socket backends need a unix platform".into()),
        None => {
            let delays = match latency {
                Latency::None => SimulatedDelays::NONE,
                Latency::Gpu => SimulatedDelays::from_capabilities(&BackendCapabilities::GPU_REFERENCE),
                Latency::Cpu => SimulatedDelays::from_capabilities(&BackendCapabilities::CPU_REFERENCE),
            };
            run_pipeline(trace_handles(&trace), trace_backend(&trace, delays), cfg, policy, options)
        }
    }
    .map_err(|e| e.to_string())?;
    let (outs, stats) = handle.collect();
    let mut totals: Vec<f64> = outs.iter().filter_map(|o| o.latency()).map(|l| l.total_ms).collect();
    totals.sort_by(f64::total_cmp);
    let mean = (!totals.is_empty()).then(|| totals.iter().sum::<f64>() / totals.len() as f64);
    let red = outs
        .iter()
        .filter(|o| matches!(o, PipelineOutput::Processed { event: Some(e), .. } if e.kind == AlertEventKind::EnterRed))
        .count();
    if as_json {
        let v = json!({
            "stats": stats,
            "mean_total_ms": mean,
            "p95_total_ms": percentile(&totals, 0.95),
            "budget_ms": budget,
            "red_alerts": red,
        });
        println!("{}", serde_json::to_string_pretty(&v).map_err(|e| e.to_string())?);
    } else {
        print_stats(&stats, mean, percentile(&totals, 0.95), budget, red);
    }
    Ok(ExitCode::SUCCESS)
}

fn print_stats(s: &PipelineStats, mean: Option<f64>, p95: Option<f64>, budget: f64, red: usize) {
    println!("frames in        {}", s.frames_in);
    println!("processed        {}", s.processed);
    println!(
        "skipped          {} (stride {}, overflow {}, out of order {})",
        s.skipped(),
        s.skipped_stride,
        s.skipped_overflow,
        s.skipped_out_of_order
    );
    println!("latency mean     {}", fmt_opt(mean, " ms"));
    println!("latency p95      {}", fmt_opt(p95, " ms"));
    println!("budget           {budget:.1} ms, missed {}", s.slo_misses);
    println!("peak in flight   {}", s.peak_in_flight);
    println!("final stride     {}", s.final_stride);
    println!("backend failures {}", s.backend_failures);
    println!("red alerts       {red}");
}
