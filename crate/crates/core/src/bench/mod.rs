//! Benchmark harness: sequential baseline vs the parallel pipeline on
//! identical synthetic workloads, plus a discrete-event oracle.

mod oracle;
mod report;
mod system;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{ms_to_samples, AudioBuffer};
use crate::orchestrator::SyncConfig;
use crate::pipeline::{StageKind, StageProfile};
use crate::segmenter::{HintFn, SegmenterConfig};
use crate::time::Timestamp;
use crate::visual::frames::{frame_timeline, FrameRecord};
use crate::visual::stubs::{LipsyncEngine, WAV2LIP_FP32, WAV2LIP_TRT_FP16};

pub use oracle::{oracle_baseline, oracle_pipeline, oracle_segments, oracle_simulate, OracleSegment};
pub use report::{efficiency, fit_scaling, run_bench, ClipResult, Fit, RunReport};
pub use system::{
    run_baseline, run_baseline_on, run_pipeline, run_pipeline_on, segment_clip, ClockChoice, RunOutcome, SegmentTiming,
};

/// Lag of synthetic mouth motion behind the speech envelope.
pub const MOUTH_LAG_MS: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Pipeline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Pipeline => "pipeline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Baseline,
    Pipeline,
    Both,
}

impl BenchMode {
    pub fn modes(self) -> &'static [Mode] {
        match self {
            BenchMode::Baseline => &[Mode::Baseline],
            BenchMode::Pipeline => &[Mode::Pipeline],
            BenchMode::Both => &[Mode::Baseline, Mode::Pipeline],
        }
    }
}

impl FromStr for BenchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(BenchMode::Baseline),
            "pipeline" => Ok(BenchMode::Pipeline),
            "both" => Ok(BenchMode::Both),
            other => Err(Error::Config(format!("unknown mode `{other}` (baseline|pipeline|both)"))),
        }
    }
}

/// Repeating speech pattern: silence, speech, silence per period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpeechPattern {
    pub lead_ms: u64,
    pub speech_ms: u64,
    pub trail_ms: u64,
}

impl Default for SpeechPattern {
    fn default() -> Self {
        SpeechPattern {
            lead_ms: 300,
            speech_ms: 1400,
            trail_ms: 300,
        }
    }
}

impl SpeechPattern {
    pub fn period_ms(&self) -> u64 {
        self.lead_ms + self.speech_ms + self.trail_ms
    }

    pub fn is_speech(&self, t_ms: u64) -> bool {
        let p = t_ms % self.period_ms();
        p >= self.lead_ms && p < self.lead_ms + self.speech_ms
    }

    /// Syllable-rate envelope in `[0.5, 1]` during speech, 0 in silence.
    pub fn envelope(&self, t_ms: f64) -> f64 {
        if t_ms < 0.0 || !self.is_speech(t_ms as u64) {
            return 0.0;
        }
        0.75 + 0.25 * (2.0 * std::f64::consts::PI * 4.0 * t_ms / 1000.0).sin()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    pub clip_lengths_s: Vec<f64>,
    pub repetitions: u32,
    pub seed: u64,
    pub mode: BenchMode,
    pub stt: StageProfile,
    pub mt: StageProfile,
    pub tts: StageProfile,
    pub lipsync: StageProfile,
    pub face_detect_ms: f64,
    pub baseline_engine: LipsyncEngine,
    pub pipeline_engine: LipsyncEngine,
    /// One-off sequential setup charged to each baseline run.
    pub baseline_setup_ms: u64,
    pub pattern: SpeechPattern,
    pub segmenter: SegmenterConfig,
    pub sync: SyncConfig,
    pub prefetch: usize,
    pub sample_rate: u32,
    pub fps: u32,
    pub tts_ratio: f64,
}

pub const NO_ENGINE: LipsyncEngine = LipsyncEngine {
    name: "none",
    per_frame_ms: 0.0,
};

impl Scenario {
    pub fn paper_table3() -> Self {
        let atp = |k| StageProfile::new(k, 30.0, 660.0).with_jitter(0.03, 7);
        Scenario {
            name: "paper-table3".into(),
            clip_lengths_s: vec![1.0, 3.0, 5.0, 8.0],
            repetitions: 10,
            seed: 7,
            mode: BenchMode::Both,
            stt: atp(StageKind::Stt),
            mt: atp(StageKind::Mt),
            tts: atp(StageKind::Tts),
            lipsync: StageProfile::new(StageKind::Lipsync, 10.0, 0.0).with_jitter(0.03, 7),
            face_detect_ms: 22.0,
            baseline_engine: WAV2LIP_FP32,
            pipeline_engine: WAV2LIP_TRT_FP16,
            baseline_setup_ms: 1750,
            pattern: SpeechPattern::default(),
            segmenter: SegmenterConfig::default(),
            sync: SyncConfig::default(),
            prefetch: 2,
            sample_rate: 16_000,
            fps: 30,
            tts_ratio: 1.0,
        }
    }

    /// No fixed costs and whole 2 s segments: latency is affine in clip
    /// length, so fitted slopes are exact.
    pub fn linear() -> Self {
        let flat = |k, per_sec| StageProfile::new(k, 0.0, per_sec);
        Scenario {
            name: "linear".into(),
            clip_lengths_s: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            repetitions: 1,
            stt: flat(StageKind::Stt, 780.0),
            mt: flat(StageKind::Mt, 780.0),
            tts: flat(StageKind::Tts, 780.0),
            lipsync: flat(StageKind::Lipsync, 620.0),
            face_detect_ms: 0.0,
            baseline_engine: NO_ENGINE,
            pipeline_engine: NO_ENGINE,
            baseline_setup_ms: 0,
            segmenter: SegmenterConfig {
                scorer_latency_ms: 0,
                ..SegmenterConfig::default()
            },
            sync: SyncConfig {
                gather_ms: 0,
                align_ms: 0,
                mel_ms: 0,
                emit_ms: 0,
                ..SyncConfig::default()
            },
            ..Scenario::paper_table3()
        }
    }

    /// Four stages of equal cost; speedup approaches 4 on long clips.
    pub fn equal() -> Self {
        let c = |k| StageProfile::new(k, 0.0, 500.0);
        Scenario {
            name: "equal".into(),
            clip_lengths_s: vec![8.0, 16.0, 32.0, 64.0],
            stt: c(StageKind::Stt),
            mt: c(StageKind::Mt),
            tts: c(StageKind::Tts),
            lipsync: c(StageKind::Lipsync),
            // long clips outgrow the frame ring unless detection is paced
            face_detect_ms: 22.0,
            ..Scenario::linear()
        }
    }

    /// Jitter-free scenario with randomized costs, pattern and clips.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prof = |k, rng: &mut ChaCha8Rng| {
            StageProfile::new(k, rng.random_range(0..200) as f64, rng.random_range(50..1500) as f64)
        };
        let stt = prof(StageKind::Stt, &mut rng);
        let mt = prof(StageKind::Mt, &mut rng);
        let tts = prof(StageKind::Tts, &mut rng);
        let lipsync = prof(StageKind::Lipsync, &mut rng);
        let step = |rng: &mut ChaCha8Rng, lo: u64, hi: u64| rng.random_range(lo / 20..=hi / 20) * 20;
        let lead = step(&mut rng, 260, 500);
        let trail = step(&mut rng, 260, 500).max(520u64.saturating_sub(lead));
        let pattern = SpeechPattern {
            lead_ms: lead,
            speech_ms: step(&mut rng, 1000, 5000),
            trail_ms: trail,
        };
        let clips = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(5..=90) as f64 / 10.0)
            .collect();
        let engine = LipsyncEngine {
            name: "random",
            per_frame_ms: rng.random_range(0..=500) as f64 / 100.0,
        };
        let sync = SyncConfig {
            gather_ms: rng.random_range(0..5),
            align_ms: rng.random_range(0..8),
            mel_ms: rng.random_range(0..8),
            emit_ms: rng.random_range(0..4),
            ..SyncConfig::default()
        };
        Scenario {
            name: format!("random-{seed}"),
            clip_lengths_s: clips,
            repetitions: 1,
            seed,
            stt,
            mt,
            tts,
            lipsync,
            face_detect_ms: rng.random_range(0..40) as f64,
            baseline_engine: engine,
            pipeline_engine: engine,
            baseline_setup_ms: rng.random_range(0..2000),
            pattern,
            segmenter: SegmenterConfig {
                scorer_latency_ms: rng.random_range(0..30),
                ..SegmenterConfig::default()
            },
            sync,
            ..Scenario::paper_table3()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper-table3" => Ok(Scenario::paper_table3()),
            "linear" => Ok(Scenario::linear()),
            "equal" => Ok(Scenario::equal()),
            other => match other.strip_prefix("random-").map(str::parse::<u64>) {
                Some(Ok(seed)) => Ok(Scenario::random(seed)),
                _ => Err(Error::Config(format!(
                    "unknown scenario `{other}` (paper-table3, linear, equal, random-<seed>)"
                ))),
            },
        }
    }

    pub fn is_jitter_free(&self) -> bool {
        [&self.stt, &self.mt, &self.tts, &self.lipsync].iter().all(|p| p.jitter_pct == 0.0)
    }

    /// Copy with every stage's jitter seed set to `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        for p in [&mut s.stt, &mut s.mt, &mut s.tts, &mut s.lipsync] {
            p.seed = seed;
        }
        s.seed = seed;
        s
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.stt, &self.mt, &self.tts, &self.lipsync] {
            p.validate()?;
        }
        self.sync.validate()?;
        self.segmenter.vad.validate()?;
        if self.clip_lengths_s.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("clip lengths must be finite and >= 0".into()));
        }
        if self.repetitions == 0 || self.fps == 0 || self.sample_rate == 0 || self.prefetch == 0 {
            return Err(Error::Config("repetitions, fps, sample_rate and prefetch must be > 0".into()));
        }
        if !(self.face_detect_ms >= 0.0 && self.baseline_engine.per_frame_ms >= 0.0 && self.pipeline_engine.per_frame_ms >= 0.0) {
            return Err(Error::Config("per-frame costs must be >= 0".into()));
        }
        if self.pattern.speech_ms == 0 || self.pattern.period_ms() == 0 {
            return Err(Error::Config("speech pattern needs speech".into()));
        }
        Ok(())
    }
}

/// Media handed to a run: the recording and its frame records.
#[derive(Debug, Clone)]
pub struct ClipInput {
    pub audio: AudioBuffer,
    pub frames: Vec<FrameRecord>,
}

impl ClipInput {
    pub fn synthetic(scn: &Scenario, clip_ms: u64) -> Self {
        ClipInput {
            audio: synthetic_clip(&scn.pattern, clip_ms, scn.sample_rate),
            frames: synthetic_frames(&scn.pattern, clip_ms, scn.fps),
        }
    }

    /// Recording without frame records: a bare timeline at `fps`.
    pub fn audio_only(audio: AudioBuffer, fps: u32) -> Self {
        let frames = frame_timeline(audio.duration_ms(), fps)
            .into_iter()
            .enumerate()
            .map(|(j, ts)| FrameRecord::new(j as u64, ts))
            .collect();
        ClipInput { audio, frames }
    }

    pub fn duration_ms(&self) -> u64 {
        self.audio.duration_ms()
    }
}

/// Synthetic recording: a harmonic voice following the pattern envelope.
pub fn synthetic_clip(pattern: &SpeechPattern, clip_ms: u64, sample_rate: u32) -> AudioBuffer {
    let n = ms_to_samples(clip_ms, sample_rate);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let env = pattern.envelope(t * 1000.0);
            let w = 2.0 * std::f64::consts::PI * 150.0 * t;
            (9000.0 * env * (0.7 * w.sin() + 0.3 * (2.0 * w).sin())) as i16
        })
        .collect();
    AudioBuffer::new(samples, sample_rate, Timestamp::ZERO).expect("mono pcm")
}

/// Frame records for the clip; mouth motion trails the voice envelope.
pub fn synthetic_frames(pattern: &SpeechPattern, clip_ms: u64, fps: u32) -> Vec<FrameRecord> {
    frame_timeline(clip_ms, fps)
        .into_iter()
        .enumerate()
        .map(|(j, ts)| FrameRecord {
            mouth_motion: pattern.envelope(ts.millis() as f64 - MOUTH_LAG_MS as f64),
            ..FrameRecord::new(j as u64, ts)
        })
        .collect()
}

/// Transcript hints for the synthetic voice: one sentence per period.
pub fn synthetic_hints() -> HintFn {
    Box::new(|_, _| Some("the speaker finishes a sentence.".into()))
}

/// Parse `synthetic:<N>s` (or `synthetic:<N>`) into a clip length in ms.
pub fn parse_synthetic(spec: &str) -> Option<u64> {
    let body = spec.strip_prefix("synthetic:")?;
    let secs: f64 = body.strip_suffix('s').unwrap_or(body).parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| (secs * 1000.0).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in ["paper-table3", "linear", "equal", "random-3"] {
            Scenario::by_name(s).unwrap().validate().unwrap();
        }
        assert!(Scenario::by_name("nope").is_err());
    }

    #[test]
    fn synthetic_spec_parsing() {
        assert_eq!(parse_synthetic("synthetic:8s"), Some(8000));
        assert_eq!(parse_synthetic("synthetic:2.5"), Some(2500));
        assert_eq!(parse_synthetic("clip.wav"), None);
    }

    #[test]
    fn pattern_shape() {
        let p = SpeechPattern::default();
        assert!(!p.is_speech(299) && p.is_speech(300) && p.is_speech(1699) && !p.is_speech(1700));
        let clip = synthetic_clip(&p, 2000, 16_000);
        assert_eq!(clip.len(), 32_000);
        assert!(clip.samples[..4800].iter().all(|s| *s == 0));
        let frames = synthetic_frames(&p, 2000, 30);
        assert_eq!(frames.len(), 60);
        assert_eq!(frames[10].mouth_motion, p.envelope(333.0 - 30.0));
    }
}
