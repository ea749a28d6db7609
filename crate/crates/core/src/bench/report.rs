use std::io::Write;

use serde::{Deserialize, Serialize};

use super::system::{run_baseline, run_pipeline, ClockChoice, RunOutcome};
use super::{Mode, Scenario};
use crate::error::{Error, Result};

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_scaling(points: &[(f64, f64)]) -> Result<Fit> {
    if points.len() < 3 {
        return Err(Error::Bench(format!("need at least 3 points to fit, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Bench("clip lengths must not all be equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(Fit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// `1 / (latency_s * peak_mem_gb)`, in (s·GB)⁻¹.
pub fn efficiency(latency_s: f64, peak_mem_gb: f64) -> Result<f64> {
    if !(latency_s > 0.0 && peak_mem_gb > 0.0) {
        return Err(Error::Bench(format!(
            "efficiency needs positive inputs, got latency {latency_s} s and memory {peak_mem_gb} GB"
        )));
    }
    Ok(1.0 / (latency_s * peak_mem_gb))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipResult {
    pub clip_s: f64,
    pub mode: Mode,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub latencies_ms: Vec<u64>,
    /// Baseline mean over pipeline mean; set on pipeline rows.
    pub speedup: Option<f64>,
    pub depth_avg: Option<f64>,
    pub peak_memory_bytes: u64,
    pub efficiency: Option<f64>,
    pub delta_sync_max_ms: Option<u64>,
    pub inter_output_mean_ms: Option<f64>,
    pub sync_failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub repetitions: u32,
    pub rows: Vec<ClipResult>,
    pub baseline_fit: Option<Fit>,
    pub pipeline_fit: Option<Fit>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(clip_s: f64, mode: Mode, runs: &[RunOutcome]) -> ClipResult {
    let lat: Vec<f64> = runs.iter().map(|r| r.latency_ms as f64).collect();
    let (mean_ms, std_ms) = mean_std(&lat);
    let peak = runs.iter().map(|r| r.peak_memory_bytes).max().unwrap_or(0);
    ClipResult {
        clip_s,
        mode,
        mean_ms,
        std_ms,
        latencies_ms: runs.iter().map(|r| r.latency_ms).collect(),
        speedup: None,
        depth_avg: mean(runs.iter().filter_map(|r| r.depth_avg)),
        peak_memory_bytes: peak,
        efficiency: efficiency(mean_ms / 1000.0, peak as f64 / 1e9).ok(),
        delta_sync_max_ms: runs.iter().flat_map(|r| r.delta_sync_ms.iter().copied()).max(),
        inter_output_mean_ms: mean(runs.iter().flat_map(|r| r.inter_output_ms.iter().map(|v| *v as f64))),
        sync_failures: runs.iter().map(|r| r.sync_failures).sum(),
    }
}

/// Run every clip length in every selected mode, `repetitions` times with
/// seeds `seed, seed + 1, ...`.
pub fn run_bench(scn: &Scenario) -> Result<RunReport> {
    scn.validate()?;
    let mut rows = Vec::new();
    for &clip_s in &scn.clip_lengths_s {
        let clip_ms = (clip_s * 1000.0).round() as u64;
        for &mode in scn.mode.modes() {
            let runs = (0..scn.repetitions as u64)
                .map(|r| {
                    let seed = scn.seed + r;
                    match mode {
                        Mode::Baseline => run_baseline(scn, clip_ms, seed),
                        Mode::Pipeline => run_pipeline(scn, clip_ms, seed, ClockChoice::Virtual),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(summarize(clip_s, mode, &runs));
        }
        if let [.., b, p] = rows.as_mut_slice() {
            if b.mode == Mode::Baseline && p.mode == Mode::Pipeline && b.clip_s == clip_s && p.mean_ms > 0.0 {
                p.speedup = Some(b.mean_ms / p.mean_ms);
            }
        }
    }
    let fit = |mode| {
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.mode == mode).map(|r| (r.clip_s, r.mean_ms / 1000.0)).collect();
        fit_scaling(&pts).ok()
    };
    Ok(RunReport {
        scenario: scn.name.clone(),
        repetitions: scn.repetitions,
        baseline_fit: fit(Mode::Baseline),
        pipeline_fit: fit(Mode::Pipeline),
        rows,
    })
}

impl RunReport {
    pub fn row(&self, clip_s: f64, mode: Mode) -> Option<&ClipResult> {
        self.rows.iter().find(|r| r.clip_s == clip_s && r.mode == mode)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["clip_s", "mode", "mean_ms", "std_ms", "speedup"])
            .map_err(|e| Error::Bench(e.to_string()))?;
        for r in &self.rows {
            out.write_record([
                format!("{}", r.clip_s),
                r.mode.to_string(),
                format!("{:.3}", r.mean_ms),
                format!("{:.3}", r.std_ms),
                r.speedup.map(|s| format!("{s:.4}")).unwrap_or_default(),
            ])
            .map_err(|e| Error::Bench(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Bench(format!("report json: {e}")))
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Bench(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Whitespace-separated `clip_s baseline_s pipeline_s`, NaN when absent.
    pub fn write_plot_data<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# clip_s baseline_s pipeline_s")?;
        let mut clips: Vec<f64> = self.rows.iter().map(|r| r.clip_s).collect();
        clips.dedup();
        for c in clips {
            let v = |m| self.row(c, m).map_or(f64::NAN, |r| r.mean_ms / 1000.0);
            writeln!(w, "{c} {:.4} {:.4}", v(Mode::Baseline), v(Mode::Pipeline))?;
        }
        Ok(())
    }

    /// Human-readable table for stdout.
    pub fn speedup_table(&self) -> String {
        let mut s = format!("{:>7} {:>12} {:>12} {:>8}\n", "clip_s", "baseline_s", "pipeline_s", "speedup");
        let mut clips: Vec<f64> = self.rows.iter().map(|r| r.clip_s).collect();
        clips.dedup();
        for c in clips {
            let cell = |m| self.row(c, m).map_or("-".to_string(), |r| format!("{:.3}", r.mean_ms / 1000.0));
            let sp = self
                .row(c, Mode::Pipeline)
                .and_then(|r| r.speedup)
                .map_or("-".to_string(), |v| format!("{v:.2}x"));
            s += &format!("{c:>7} {:>12} {:>12} {sp:>8}\n", cell(Mode::Baseline), cell(Mode::Pipeline));
        }
        for (name, f) in [("baseline", self.baseline_fit), ("pipeline", self.pipeline_fit)] {
            if let Some(f) = f {
                s += &format!("{name} fit: slope {:.3} s/s, intercept {:.3} s, r2 {:.4}\n", f.slope, f.intercept, f.r2);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_closed_form() {
        let f = fit_scaling(&[(1.0, 3.0), (2.0, 5.0), (4.0, 9.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let flat = fit_scaling(&[(1.0, 2.0), (3.0, 2.0), (5.0, 2.0)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(fit_scaling(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn efficiency_reciprocal() {
        assert_eq!(efficiency(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(efficiency(2.0, 0.5).unwrap(), 1.0);
        assert!(efficiency(0.0, 1.0).is_err());
        assert!(efficiency(1.0, -1.0).is_err());
    }

    #[test]
    fn baseline_only_report() {
        let mut s = Scenario::linear();
        s.mode = super::super::BenchMode::Baseline;
        s.clip_lengths_s = vec![2.0, 4.0, 6.0];
        let r = run_bench(&s).unwrap();
        assert!(r.rows.iter().all(|r| r.mode == Mode::Baseline && r.speedup.is_none()));
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("clip_s,mode,mean_ms,std_ms,speedup\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
