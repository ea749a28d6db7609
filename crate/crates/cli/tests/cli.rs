use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lipstream::media::AudioBuffer;
use lipstream::time::Timestamp;
use lipstream::wav::encode_wav;

const SR: u32 = 16_000;

fn lipstream(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipstream"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("LIPSTREAM_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tone(ms: usize) -> Vec<i16> {
    (0..ms * 16)
        .map(|i| (8000.0 * (2.0 * PI * 220.0 * i as f64 / SR as f64).sin()) as i16)
        .collect()
}

fn wav_file(dir: &Path, name: &str, samples: Vec<i16>) -> String {
    let path = dir.join(name);
    let audio = AudioBuffer::new(samples, SR, Timestamp::ZERO).unwrap();
    fs::write(&path, encode_wav(&audio)).unwrap();
    path.to_string_lossy().into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn synthetic_run_emits_aligned_events() {
    let dir = tempfile::tempdir().unwrap();
    let o = lipstream(&["run", "--mode", "pipeline", "--input", "synthetic:8s", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let events = fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
    let aligned = events
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["kind"] == "aligned")
        .count();
    assert!(aligned >= 4, "{aligned} aligned events");
    assert!(dir.path().join("segments.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn run_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["run", "--mode", "both", "--input", "synthetic:5s", "--seed", "3"];
    assert_eq!(lipstream(&args, a.path()).status.code(), Some(0));
    assert_eq!(lipstream(&args, b.path()).status.code(), Some(0));
    for f in ["metrics.csv", "events.ndjson", "segments.csv", "manifest.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    let rows = csv_rows(&a.path().join("metrics.csv"));
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["baseline", "pipeline"]);
}

#[test]
fn truncated_wav_names_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.wav");
    let audio = AudioBuffer::new(tone(500), SR, Timestamp::ZERO).unwrap();
    let bytes = encode_wav(&audio);
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let o = lipstream(&["run", "--input", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("byte offset 36"), "{err}");
}

#[test]
fn wav_input_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let samples = [tone(2000), vec![0; 16 * 700], tone(2000)].concat();
    let wav = wav_file(dir.path(), "two.wav", samples);
    let o = lipstream(&["run", "--mode", "both", "--input", &wav], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[3] == "2"), "{rows:?}");
}

#[test]
fn sync_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.toml");
    fs::write(&cfg, "sync.min_frames = 1000\n").unwrap();
    let o = lipstream(
        &["run", "--input", "synthetic:3s", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let events = fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
    assert!(events.contains("\"sync_failure\""));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lipstream(&["run", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(lipstream(&["run"], dir.path()).status.code(), Some(1));
    assert_eq!(lipstream(&["bench", "--scenario", "nope"], dir.path()).status.code(), Some(1));
    assert_eq!(
        lipstream(&["run", "--input", "synthetic:2s", "--clock", "sundial"], dir.path()).status.code(),
        Some(1)
    );
}

#[test]
fn bench_reproduces_speedup_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = lipstream(&["bench", "--scenario", "paper-table3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("speedup"));
    let speedups: Vec<f64> = csv_rows(&dir.path().join("bench.csv"))
        .into_iter()
        .filter(|r| r[1] == "pipeline")
        .map(|r| r[4].parse().unwrap())
        .collect();
    for (got, want) in speedups.iter().zip([2.3, 2.1, 2.5, 3.1]) {
        assert!((got - want).abs() <= 0.1 * want, "{got} vs {want}");
    }
    assert_eq!(speedups.len(), 4);
    assert!(dir.path().join("bench.json").exists() && dir.path().join("bench_plot.dat").exists());

    // re-render the saved report
    let rep = tempfile::tempdir().unwrap();
    let json = dir.path().join("bench.json");
    let o = lipstream(&["report", "--input", json.to_str().unwrap()], rep.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read(rep.path().join("bench.csv")).unwrap(),
        fs::read(dir.path().join("bench.csv")).unwrap()
    );
}

#[test]
fn bench_baseline_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = lipstream(&["bench", "--scenario", "paper-table3", "--mode", "baseline"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("bench.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1] == "baseline" && r[4].is_empty()));
}

#[test]
fn equal_stage_costs_approach_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = lipstream(&["bench", "--scenario", "equal"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("bench.csv"));
    let last: f64 = rows.iter().rev().find(|r| r[1] == "pipeline").unwrap()[4].parse().unwrap();
    assert!(last > 3.5 && last <= 4.0, "{last}");
}

#[test]
fn segment_listing() {
    let dir = tempfile::tempdir().unwrap();

    let silent = wav_file(dir.path(), "silent.wav", vec![0; 16 * 3000]);
    let o = lipstream(&["segment", "--input", &silent], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 0);

    let two = wav_file(dir.path(), "two.wav", [tone(2000), vec![0; 16 * 700], tone(2000)].concat());
    let o = lipstream(&["segment", "--input", &two], dir.path());
    let lines: Vec<Vec<String>> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    assert_eq!(lines.len(), 2, "{lines:?}");
    let boundary: u64 = lines[0][1].parse().unwrap();
    assert!((2000..=2700).contains(&boundary), "{boundary}");

    let long = wav_file(dir.path(), "long.wav", tone(12_000));
    let o = lipstream(&["segment", "--input", &long], dir.path());
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert!(first.ends_with("true"), "{first}");
    assert!(first.starts_with("0 10000 10000"), "{first}");
    assert!(dir.path().join("manifest.json").exists());
}
