use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lipstream::bench::{
    parse_synthetic, run_baseline_on, run_bench, run_pipeline_on, segment_clip, BenchMode, ClipInput, ClockChoice,
    Mode, RunOutcome, RunReport, Scenario,
};
use lipstream::config::load_scenario;
use lipstream::segmenter::SegmenterConfig;
use lipstream::visual::frames::read_frames_csv;
use lipstream::wav::read_wav;
use lipstream::{Error, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

const REAL_CLOCK_TIMEOUT_MS: u64 = 600_000;

#[derive(Parser)]
#[command(name = "lipstream", version, about = "Real-time audiovisual translation pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one clip through the baseline and/or the pipeline.
    Run(Opts),
    /// Run a benchmark scenario and print the speedup table.
    Bench(Opts),
    /// Re-render a saved bench JSON report.
    Report(Opts),
    /// Print the segments the segmenter cuts from a recording.
    Segment(Opts),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClockArg {
    Virtual,
    Real,
}

#[derive(Args, Clone)]
struct Opts {
    /// baseline, pipeline or both (segment: baseline or semantic).
    #[arg(long)]
    mode: Option<String>,
    /// WAV file, frame CSV, bench JSON (report) or `synthetic:<N>s`.
    #[arg(long)]
    input: Vec<String>,
    /// Flat dotted-key config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "paper-table3")]
    scenario: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ClockArg::Virtual)]
    clock: ClockArg,
}

/// Failure carrying the process exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(1, e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(1, e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIPSTREAM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Run(o) => cmd_run(&o),
        Command::Bench(o) => cmd_bench(&o),
        Command::Report(o) => cmd_report(&o),
        Command::Segment(o) => cmd_segment(&o),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("lipstream: {msg}");
            ExitCode::from(code)
        }
    }
}

fn scenario(o: &Opts) -> Result<Scenario> {
    let mut scn = load_scenario(&o.scenario, o.config.as_deref())?;
    if let Some(s) = o.seed {
        scn.seed = s;
    }
    Ok(scn)
}

fn bench_mode(o: &Opts, default: BenchMode) -> Result<BenchMode> {
    o.mode.as_deref().map_or(Ok(default), str::parse)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest(o: &Opts, command: &str, scn: Option<&Scenario>) -> Result<()> {
    let config_file = match &o.config {
        Some(p) => Some(sha256_hex(&fs::read(p)?)),
        None => None,
    };
    let effective = scn.map(|s| sha256_hex(&serde_json::to_vec(s).expect("scenario serializes")));
    let manifest = json!({
        "command": command,
        "scenario": scn.map(|s| s.name.clone()),
        "config_path": o.config.as_ref().map(|p| p.display().to_string()),
        "config_file_sha256": config_file,
        "config_sha256": effective,
        "seed": scn.map(|s| s.seed).or(o.seed),
        "mode": o.mode,
        "input": o.input,
        "clock": match o.clock { ClockArg::Virtual => "virtual", ClockArg::Real => "real" },
        "versions": {
            "lipstream": env!("CARGO_PKG_VERSION"),
            "manifest": 1,
        },
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("json");
    text.push('\n');
    fs::write(o.out.join("manifest.json"), text)?;
    Ok(())
}

fn load_input(o: &Opts, scn: &Scenario) -> Result<ClipInput> {
    if o.input.is_empty() {
        return Err(Error::Config("--input is required (a WAV file or synthetic:<N>s)".into()));
    }
    if let [one] = o.input.as_slice() {
        if one.starts_with("synthetic:") {
            let ms = parse_synthetic(one)
                .ok_or_else(|| Error::Config(format!("bad synthetic spec `{one}` (expected synthetic:<N>s)")))?;
            return Ok(ClipInput::synthetic(scn, ms));
        }
    }
    let (mut audio, mut frames) = (None, None);
    for p in &o.input {
        let path = Path::new(p);
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("wav") => audio = Some(read_wav(path).map_err(|e| Error::Wav(format!("{p}: {e}")))?),
            Some("csv") => {
                let f = File::open(path).map_err(|e| Error::Config(format!("{p}: {e}")))?;
                frames = Some(read_frames_csv(f)?);
            }
            _ => return Err(Error::Config(format!("{p}: unrecognised input (expected .wav or .csv)"))),
        }
    }
    let audio = audio.ok_or_else(|| Error::Config("a WAV input is required".into()))?;
    Ok(match frames {
        Some(frames) => ClipInput { audio, frames },
        None => ClipInput::audio_only(audio, scn.fps),
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_run_files(out: &Path, runs: &[RunOutcome]) -> Result<()> {
    let mut events = String::new();
    for r in runs {
        for e in &r.events {
            let mut v = serde_json::to_value(e).expect("event serializes");
            v["mode"] = json!(r.mode.to_string());
            events += &v.to_string();
            events.push('\n');
        }
    }
    fs::write(out.join("events.ndjson"), events)?;

    let mut metrics = String::from(
        "mode,clip_ms,latency_ms,segments,sync_failures,depth_avg,depth_peak,peak_memory_bytes,queue_peak_bytes,delta_sync_max_ms,inter_output_mean_ms,scorer_ms\n",
    );
    for r in runs {
        let inter = (!r.inter_output_ms.is_empty())
            .then(|| r.inter_output_ms.iter().sum::<u64>() as f64 / r.inter_output_ms.len() as f64);
        let _ = writeln!(
            metrics,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.mode,
            r.clip_ms,
            r.latency_ms,
            r.segments.len(),
            r.sync_failures,
            opt(r.depth_avg.map(|d| format!("{d:.4}"))),
            opt(r.depth_peak),
            r.peak_memory_bytes,
            r.queue_peak_bytes,
            opt(r.delta_sync_ms.iter().max()),
            opt(inter.map(|v| format!("{v:.3}"))),
            r.segmenter.scorer_ms,
        );
    }
    fs::write(out.join("metrics.csv"), metrics)?;

    let mut segs = String::from("mode,segment,start_ms,end_ms,released_ms,emitted_ms,latency_ms,frames,offset_ms\n");
    for r in runs {
        for s in &r.segments {
            let _ = writeln!(
                segs,
                "{},{},{},{},{},{},{},{},{}",
                r.mode,
                s.segment,
                s.start_ms,
                s.end_ms,
                s.released_ms,
                opt(s.emitted_ms),
                opt(s.latency_ms),
                s.frames,
                opt(s.offset_ms)
            );
        }
    }
    fs::write(out.join("segments.csv"), segs)?;
    Ok(())
}

fn cmd_run(o: &Opts) -> std::result::Result<u8, Fail> {
    let scn = scenario(o)?;
    let mode = bench_mode(o, BenchMode::Pipeline)?;
    let input = load_input(o, &scn)?;
    fs::create_dir_all(&o.out)?;
    let clock = match o.clock {
        ClockArg::Virtual => ClockChoice::Virtual,
        ClockArg::Real => ClockChoice::Real {
            timeout_ms: REAL_CLOCK_TIMEOUT_MS,
        },
    };
    let mut runs = Vec::new();
    for &m in mode.modes() {
        runs.push(match m {
            Mode::Baseline => run_baseline_on(&scn, &input, scn.seed)?,
            Mode::Pipeline => run_pipeline_on(&scn, &input, scn.seed, clock)?,
        });
    }
    write_run_files(&o.out, &runs)?;
    write_manifest(o, "run", Some(&scn))?;

    for r in &runs {
        println!("{} mode: {} ms end-to-end, {} segments", r.mode, r.latency_ms, r.segments.len());
        println!("  {:>8} {:>8} {:>10} {:>10} {:>8}", "start", "end", "emitted", "latency", "offset");
        for s in &r.segments {
            println!(
                "  {:>8} {:>8} {:>10} {:>10} {:>8}",
                s.start_ms,
                s.end_ms,
                s.emitted_ms.map_or("failed".into(), |v| v.to_string()),
                opt(s.latency_ms),
                opt(s.offset_ms)
            );
        }
    }
    let failures: usize = runs.iter().map(|r| r.sync_failures).sum();
    if failures > 0 {
        eprintln!("lipstream: {failures} segment(s) failed to synchronise");
        return Ok(2);
    }
    Ok(0)
}

fn cmd_bench(o: &Opts) -> std::result::Result<u8, Fail> {
    if o.clock == ClockArg::Real {
        return Err(Fail(1, "bench runs on the virtual clock only".into()));
    }
    let mut scn = scenario(o)?;
    if let Some(m) = &o.mode {
        scn.mode = m.parse()?;
    }
    let report = run_bench(&scn)?;
    fs::create_dir_all(&o.out)?;
    write_report_files(&o.out, &report)?;
    write_manifest(o, "bench", Some(&scn))?;
    print!("{}", report.speedup_table());
    Ok(0)
}

fn write_report_files(out: &Path, report: &RunReport) -> Result<()> {
    report.write_csv(BufWriter::new(File::create(out.join("bench.csv"))?))?;
    report.write_json(BufWriter::new(File::create(out.join("bench.json"))?))?;
    report.write_plot_data(BufWriter::new(File::create(out.join("bench_plot.dat"))?))?;
    Ok(())
}

fn cmd_report(o: &Opts) -> std::result::Result<u8, Fail> {
    let [path] = o.input.as_slice() else {
        return Err(Fail(1, "report takes exactly one --input (a bench JSON file)".into()));
    };
    let f = File::open(path).map_err(|e| Fail(1, format!("{path}: {e}")))?;
    let report = RunReport::read_json(f)?;
    fs::create_dir_all(&o.out)?;
    write_report_files(&o.out, &report)?;
    write_manifest(o, "report", None)?;
    print!("{}", report.speedup_table());
    Ok(0)
}

fn cmd_segment(o: &Opts) -> std::result::Result<u8, Fail> {
    let scn = scenario(o)?;
    let cfg = match o.mode.as_deref() {
        None | Some("semantic") | Some("pipeline") => scn.segmenter.clone(),
        Some("baseline") => SegmenterConfig {
            lang_src: scn.segmenter.lang_src.clone(),
            lang_dst: scn.segmenter.lang_dst.clone(),
            ..SegmenterConfig::baseline()
        },
        Some(other) => return Err(Fail(1, format!("unknown segmenter mode `{other}` (semantic|baseline)"))),
    };
    let input = load_input(o, &scn)?;
    let (events, _) = segment_clip(cfg, &input.audio, scn.seed)?;
    fs::create_dir_all(&o.out)?;
    let mut csv = String::from("start_ms,end_ms,duration_ms,confidence,forced_split\n");
    for e in &events {
        let s = &e.segment;
        let line = format!(
            "{},{},{},{:.2},{}",
            s.start().millis(),
            s.end().millis(),
            s.duration_ms(),
            s.boundary_confidence,
            s.forced_split
        );
        println!("{}", line.replace(',', " "));
        csv += &line;
        csv.push('\n');
    }
    fs::write(o.out.join("segments.csv"), csv)?;
    write_manifest(o, "segment", Some(&scn))?;
    Ok(0)
}
