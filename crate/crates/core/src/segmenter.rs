//! Semantic-aware speech segmentation.
//!
//! An energy VAD marks candidate pauses; when a pause of at least
//! `silence_ms` ends after `min_segment_ms` of accumulated audio, a
//! [`BoundaryScorer`] decides whether the material so far is a complete
//! utterance. Accumulation is force-split at `max_segment_ms`.
//!
//! Cuts fall on VAD frame boundaries at the midpoint of the pause. A pause
//! that runs into end-of-stream is absorbed by the final segment, and a
//! stream containing no speech at all emits nothing.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::media::{ms_to_samples, samples_to_ms, AudioBuffer, IdGenerator, LanguageCode, Segment};
use crate::time::Timestamp;

pub const SILENCE_FLOOR_DB: f64 = -120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EnergyReference {
    /// Relative to the running stream peak, decaying with the given half-life.
    RunningPeak { half_life_ms: Option<u64> },
    /// Relative to i16 full scale (dBFS).
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VadConfig {
    pub silence_ms: u64,
    pub energy_floor_db: f64,
    pub min_segment_ms: u64,
    pub max_segment_ms: Option<u64>,
    pub frame_ms: u64,
    pub reference: EnergyReference,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            silence_ms: 500,
            energy_floor_db: -35.0,
            min_segment_ms: 1500,
            max_segment_ms: Some(10_000),
            frame_ms: 20,
            reference: EnergyReference::RunningPeak {
                half_life_ms: Some(10_000),
            },
        }
    }
}

impl VadConfig {
    /// Plain VAD cutting: 500 ms silence, no length limits.
    pub fn baseline() -> Self {
        VadConfig {
            min_segment_ms: 0,
            max_segment_ms: None,
            ..VadConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_ms == 0 {
            return Err(Error::Config("vad.frame_ms must be > 0".into()));
        }
        if let Some(max) = self.max_segment_ms {
            if self.min_segment_ms >= max {
                return Err(Error::Config(
                    "vad.min_segment_ms must be below vad.max_segment_ms".into(),
                ));
            }
            if max % self.frame_ms != 0 {
                return Err(Error::Config(
                    "vad.frame_ms must divide vad.max_segment_ms".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VadFrame {
    pub frame_index: u64,
    pub rms_db: f64,
    pub is_speech: bool,
}

/// Streaming frame classifier; keeps the running peak across calls.
#[derive(Debug, Clone)]
pub struct VadAnalyzer {
    cfg: VadConfig,
    peak: f64,
    decay: f64,
    next_index: u64,
}

impl VadAnalyzer {
    pub fn new(cfg: &VadConfig) -> Self {
        let decay = match cfg.reference {
            EnergyReference::RunningPeak {
                half_life_ms: Some(h),
            } if h > 0 => 0.5f64.powf(cfg.frame_ms as f64 / h as f64),
            _ => 1.0,
        };
        VadAnalyzer {
            cfg: cfg.clone(),
            peak: 0.0,
            decay,
            next_index: 0,
        }
    }

    pub fn analyze(&mut self, frame: &[i16]) -> VadFrame {
        let frame_peak = frame.iter().map(|s| (*s as f64).abs()).fold(0.0, f64::max);
        let reference = match self.cfg.reference {
            EnergyReference::Absolute => i16::MAX as f64,
            EnergyReference::RunningPeak { .. } => {
                self.peak = frame_peak.max(self.peak * self.decay);
                self.peak
            }
        };
        let rms = if frame.is_empty() {
            0.0
        } else {
            (frame.iter().map(|s| (*s as f64).powi(2)).sum::<f64>() / frame.len() as f64).sqrt()
        };
        let rms_db = if rms <= 0.0 || reference <= 0.0 {
            SILENCE_FLOOR_DB
        } else {
            (20.0 * (rms / reference).log10()).max(SILENCE_FLOOR_DB)
        };
        let idx = self.next_index;
        self.next_index += 1;
        VadFrame {
            frame_index: idx,
            rms_db,
            is_speech: rms_db > self.cfg.energy_floor_db,
        }
    }
}

/// Classify every non-overlapping `frame_ms` frame of `audio` (a trailing
/// partial frame is classified on the samples it has).
pub fn vad_frames(audio: &AudioBuffer, cfg: &VadConfig) -> Result<Vec<VadFrame>> {
    if audio.is_empty() {
        return Err(Error::Audio("vad on empty audio".into()));
    }
    if cfg.frame_ms == 0 {
        return Err(Error::Config("vad.frame_ms must be > 0".into()));
    }
    let frame_len = ms_to_samples(cfg.frame_ms, audio.sample_rate).max(1);
    let mut an = VadAnalyzer::new(cfg);
    Ok(audio.samples.chunks(frame_len).map(|f| an.analyze(f)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryScore {
    pub confidence: f64,
    pub complete: bool,
    pub threshold: f64,
}

impl BoundaryScore {
    pub fn new(confidence: f64, threshold: f64) -> Self {
        let confidence = confidence.clamp(0.0, 1.0);
        BoundaryScore {
            confidence,
            complete: confidence >= threshold,
            threshold,
        }
    }
}

pub const DEFAULT_BOUNDARY_THRESHOLD: f64 = 0.85;

pub trait BoundaryScorer: Send {
    fn score(&mut self, transcript_hint: Option<&str>, accumulated_ms: u64) -> BoundaryScore;

    /// Virtual processing time charged per consultation.
    fn latency_ms(&self) -> u64 {
        0
    }
}

/// Deterministic stand-in for a sentence-boundary model.
#[derive(Debug, Clone)]
pub struct HeuristicScorer {
    pub threshold: f64,
    pub latency_ms: u64,
}

impl Default for HeuristicScorer {
    fn default() -> Self {
        HeuristicScorer {
            threshold: DEFAULT_BOUNDARY_THRESHOLD,
            latency_ms: 15,
        }
    }
}

pub fn heuristic_boundary_scorer(
    transcript_hint: Option<&str>,
    accumulated_ms: u64,
    threshold: f64,
) -> BoundaryScore {
    let terminal = transcript_hint
        .map(|h| h.trim_end().ends_with(['.', '?', '!', '…']))
        .unwrap_or(false);
    let confidence = if terminal {
        0.95
    } else if accumulated_ms >= 6000 {
        0.90
    } else {
        0.50
    };
    BoundaryScore::new(confidence, threshold)
}

impl BoundaryScorer for HeuristicScorer {
    fn score(&mut self, transcript_hint: Option<&str>, accumulated_ms: u64) -> BoundaryScore {
        heuristic_boundary_scorer(transcript_hint, accumulated_ms, self.threshold)
    }

    fn latency_ms(&self) -> u64 {
        self.latency_ms
    }
}

/// Accepts every candidate pause.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysComplete;

impl BoundaryScorer for AlwaysComplete {
    fn score(&mut self, _hint: Option<&str>, _accumulated_ms: u64) -> BoundaryScore {
        BoundaryScore::new(1.0, DEFAULT_BOUNDARY_THRESHOLD)
    }
}

/// Fast-pass transcript source: `(segment start, candidate cut) -> text`.
pub type HintFn = Box<dyn FnMut(Timestamp, Timestamp) -> Option<String> + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SegmenterMode {
    Semantic,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmenterConfig {
    pub mode: SegmenterMode,
    pub vad: VadConfig,
    pub boundary_threshold: f64,
    pub scorer_latency_ms: u64,
    pub lang_src: LanguageCode,
    pub lang_dst: LanguageCode,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            mode: SegmenterMode::Semantic,
            vad: VadConfig::default(),
            boundary_threshold: DEFAULT_BOUNDARY_THRESHOLD,
            scorer_latency_ms: 15,
            lang_src: LanguageCode::new("en"),
            lang_dst: LanguageCode::new("tr"),
        }
    }
}

impl SegmenterConfig {
    pub fn baseline() -> Self {
        SegmenterConfig {
            mode: SegmenterMode::Baseline,
            vad: VadConfig::baseline(),
            scorer_latency_ms: 0,
            ..SegmenterConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEvent {
    pub segment: Segment,
    /// Cumulative scorer time spent when this segment was emitted.
    pub scorer_elapsed_ms: u64,
    pub consults: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SegmenterStats {
    pub frames: u64,
    pub consults: u32,
    pub rejected: u32,
    pub scorer_ms: u64,
    pub emitted: u32,
    pub forced: u32,
}

impl SegmenterStats {
    /// Mean scorer latency added per emitted segment.
    pub fn added_latency_per_segment_ms(&self) -> f64 {
        if self.emitted == 0 {
            0.0
        } else {
            self.scorer_ms as f64 / self.emitted as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PauseRun {
    start: u64,
    frames: u64,
}

pub struct Segmenter {
    cfg: SegmenterConfig,
    scorer: Box<dyn BoundaryScorer>,
    hint: Option<HintFn>,
    ids: IdGenerator,
    analyzer: VadAnalyzer,
    sample_rate: u32,
    stream_start: Timestamp,
    frame_len: usize,
    /// Samples of the open segment, starting at absolute index `pending_start`.
    pending: Vec<i16>,
    pending_start: u64,
    /// Samples not yet forming a full VAD frame.
    tail: Vec<i16>,
    run: Option<PauseRun>,
    last_speech_end: Option<u64>,
    stream_has_speech: bool,
    stats: SegmenterStats,
}

impl Segmenter {
    pub fn new(
        cfg: SegmenterConfig,
        scorer: Box<dyn BoundaryScorer>,
        sample_rate: u32,
        stream_start: Timestamp,
        id_seed: u64,
    ) -> Result<Self> {
        cfg.vad.validate()?;
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        let frame_len = ms_to_samples(cfg.vad.frame_ms, sample_rate).max(1);
        Ok(Segmenter {
            analyzer: VadAnalyzer::new(&cfg.vad),
            cfg,
            scorer,
            hint: None,
            ids: IdGenerator::new(id_seed),
            sample_rate,
            stream_start,
            frame_len,
            pending: Vec::new(),
            pending_start: 0,
            tail: Vec::new(),
            run: None,
            last_speech_end: None,
            stream_has_speech: false,
            stats: SegmenterStats::default(),
        })
    }

    /// Semantic segmenter using the heuristic scorer, or the plain VAD
    /// baseline, depending on `cfg.mode`.
    pub fn from_config(cfg: SegmenterConfig, sample_rate: u32, id_seed: u64) -> Result<Self> {
        let scorer: Box<dyn BoundaryScorer> = match cfg.mode {
            SegmenterMode::Semantic => Box::new(HeuristicScorer {
                threshold: cfg.boundary_threshold,
                latency_ms: cfg.scorer_latency_ms,
            }),
            SegmenterMode::Baseline => Box::new(AlwaysComplete),
        };
        Segmenter::new(cfg, scorer, sample_rate, Timestamp::ZERO, id_seed)
    }

    pub fn with_hints(mut self, hint: HintFn) -> Self {
        self.hint = Some(hint);
        self
    }

    pub fn stats(&self) -> SegmenterStats {
        self.stats
    }

    fn ts_of(&self, abs_sample: u64) -> Timestamp {
        self.stream_start + samples_to_ms(abs_sample as usize, self.sample_rate)
    }

    fn pending_end(&self) -> u64 {
        self.pending_start + self.pending.len() as u64
    }

    pub fn push(&mut self, chunk: &[i16]) -> Vec<SegmentEvent> {
        let mut out = Vec::new();
        self.tail.extend_from_slice(chunk);
        let full = self.tail.len() / self.frame_len * self.frame_len;
        let frames: Vec<i16> = self.tail.drain(..full).collect();
        for frame in frames.chunks(self.frame_len) {
            self.process_frame(frame, &mut out);
        }
        out
    }

    fn process_frame(&mut self, frame: &[i16], out: &mut Vec<SegmentEvent>) {
        let vad = self.analyzer.analyze(frame);
        self.stats.frames += 1;
        let frame_start = self.pending_end();
        self.pending.extend_from_slice(frame);
        let frame_end = self.pending_end();

        if vad.is_speech {
            if let Some(run) = self.run.take() {
                let run_ms = samples_to_ms((run.frames as usize) * self.frame_len, self.sample_rate);
                let speech_before = self.last_speech_end.is_some_and(|e| e > self.pending_start && e <= run.start);
                if run_ms >= self.cfg.vad.silence_ms && speech_before {
                    let cut = run.start + (run.frames / 2) * self.frame_len as u64;
                    self.consider_cut(cut, out);
                }
            }
            self.last_speech_end = Some(frame_end);
            self.stream_has_speech = true;
        } else {
            match self.run.as_mut() {
                Some(r) => r.frames += 1,
                None => {
                    self.run = Some(PauseRun {
                        start: frame_start,
                        frames: 1,
                    })
                }
            }
        }

        if let Some(max_ms) = self.cfg.vad.max_segment_ms {
            let max_len = ms_to_samples(max_ms, self.sample_rate);
            while self.pending.len() >= max_len {
                self.emit(max_len, 0.0, true, out);
            }
        }
    }

    fn consider_cut(&mut self, cut: u64, out: &mut Vec<SegmentEvent>) {
        let len = (cut - self.pending_start) as usize;
        let acc_ms = samples_to_ms(len, self.sample_rate);
        if acc_ms < self.cfg.vad.min_segment_ms {
            return;
        }
        let score = match self.cfg.mode {
            SegmenterMode::Baseline => BoundaryScore::new(1.0, self.cfg.boundary_threshold),
            SegmenterMode::Semantic => {
                let (s, c) = (self.ts_of(self.pending_start), self.ts_of(cut));
                let hint = self.hint.as_mut().and_then(|h| h(s, c));
                self.stats.consults += 1;
                self.stats.scorer_ms += self.scorer.latency_ms();
                self.scorer.score(hint.as_deref(), acc_ms)
            }
        };
        if score.complete {
            self.emit(len, score.confidence, false, out);
        } else {
            self.stats.rejected += 1;
        }
    }

    fn emit(&mut self, len: usize, confidence: f64, forced: bool, out: &mut Vec<SegmentEvent>) {
        let rest = self.pending.split_off(len);
        let samples = std::mem::replace(&mut self.pending, rest);
        let start = self.ts_of(self.pending_start);
        self.pending_start += len as u64;
        let end = self.pending_end();
        let (pstart, flen) = (self.pending_start, self.frame_len as u64);
        if let Some(run) = self.run.as_mut() {
            // a pause straddling a forced cut restarts at the cut
            if run.start < pstart {
                run.start = pstart;
                run.frames = (end - pstart) / flen;
            }
        }
        if self.run.is_some_and(|r| r.frames == 0) {
            self.run = None;
        }
        let audio = AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
            start,
        };
        self.stats.emitted += 1;
        if forced {
            self.stats.forced += 1;
        }
        out.push(SegmentEvent {
            segment: Segment {
                id: self.ids.segment_id(start),
                audio,
                boundary_confidence: confidence,
                forced_split: forced,
                lang_src: self.cfg.lang_src.clone(),
                lang_dst: self.cfg.lang_dst.clone(),
            },
            scorer_elapsed_ms: self.stats.scorer_ms,
            consults: self.stats.consults,
        });
    }

    /// End of stream: classify the partial frame and flush the remainder.
    pub fn finish(&mut self) -> Vec<SegmentEvent> {
        let mut out = Vec::new();
        if !self.tail.is_empty() {
            let frame = std::mem::take(&mut self.tail);
            self.process_frame(&frame, &mut out);
        }
        self.run = None;
        if !self.pending.is_empty() && self.stream_has_speech {
            let n = self.pending.len();
            self.emit(n, 1.0, false, &mut out);
        }
        if !self.stream_has_speech {
            self.pending.clear();
        }
        out
    }
}

/// Segment a whole buffer in one pass.
pub fn segment_all(mut segmenter: Segmenter, audio: &AudioBuffer) -> (Vec<SegmentEvent>, SegmenterStats) {
    let mut events = segmenter.push(&audio.samples);
    events.extend(segmenter.finish());
    (events, segmenter.stats())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: u32 = 16_000;

    fn tone(ms: u64, amp: f64) -> Vec<i16> {
        (0..ms_to_samples(ms, SR))
            .map(|i| (amp * (2.0 * std::f64::consts::PI * 250.0 * i as f64 / SR as f64).sin()) as i16)
            .collect()
    }

    fn silence(ms: u64) -> Vec<i16> {
        vec![0; ms_to_samples(ms, SR)]
    }

    fn buffer(parts: &[Vec<i16>]) -> AudioBuffer {
        AudioBuffer::new(parts.concat(), SR, Timestamp::ZERO).unwrap()
    }

    fn run(cfg: SegmenterConfig, scorer: Box<dyn BoundaryScorer>, audio: &AudioBuffer) -> Vec<Segment> {
        let seg = Segmenter::new(cfg, scorer, SR, Timestamp::ZERO, 1).unwrap();
        segment_all(seg, audio).0.into_iter().map(|e| e.segment).collect()
    }

    #[test]
    fn silent_frames_hit_floor() {
        let frames = vad_frames(&buffer(&[silence(1000)]), &VadConfig::default()).unwrap();
        assert_eq!(frames.len(), 50);
        assert!(frames.iter().all(|f| !f.is_speech && f.rms_db == SILENCE_FLOOR_DB));
    }

    #[test]
    fn square_wave_is_zero_db() {
        let sq: Vec<i16> = (0..16_000).map(|i| if (i / 40) % 2 == 0 { 20_000 } else { -20_000 }).collect();
        let frames = vad_frames(&buffer(&[sq]), &VadConfig::default()).unwrap();
        for f in frames {
            assert!(f.rms_db.abs() < 1e-9, "{}", f.rms_db);
            assert!(f.is_speech);
        }
    }

    #[test]
    fn quiet_tone_below_floor() {
        // 1 frame full-scale square sets the peak; then a sine at 1% of it.
        // The sine RMS is 0.01/sqrt(2) of peak (-43 dB); with decay the peak shrinks a little.
        let peak = 30_000.0;
        let sq: Vec<i16> = vec![peak as i16; 320];
        let quiet = tone(200, peak * 0.01 * std::f64::consts::SQRT_2);
        let frames = vad_frames(&buffer(&[sq, quiet]), &VadConfig::default()).unwrap();
        let f = frames[5];
        let expected = 20.0 * (0.01f64).log10();
        let decay_db = -20.0 * (0.5f64.powf(5.0 * 20.0 / 10_000.0)).log10();
        assert!((f.rms_db - (expected + decay_db)).abs() < 0.05, "{}", f.rms_db);
        assert!(!f.is_speech);
    }

    #[test]
    fn empty_audio_is_error() {
        assert!(vad_frames(&AudioBuffer::empty(SR, Timestamp::ZERO), &VadConfig::default()).is_err());
    }

    #[test]
    fn heuristic_rules() {
        let s = heuristic_boundary_scorer(Some("Hello there."), 1000, 0.85);
        assert_eq!((s.confidence, s.complete), (0.95, true));
        let s = heuristic_boundary_scorer(Some("and then we"), 2000, 0.85);
        assert_eq!((s.confidence, s.complete), (0.50, false));
        let s = heuristic_boundary_scorer(None, 7000, 0.85);
        assert_eq!((s.confidence, s.complete), (0.90, true));
        assert!(heuristic_boundary_scorer(Some("wait?"), 0, 0.85).complete);
        assert!(heuristic_boundary_scorer(Some("so…"), 0, 0.85).complete);
    }

    #[test]
    fn two_utterances_cut_inside_pause() {
        let audio = buffer(&[tone(1800, 8000.0), silence(600), tone(1600, 8000.0)]);
        let segs = run(SegmenterConfig::default(), Box::new(AlwaysComplete), &audio);
        assert_eq!(segs.len(), 2);
        let cut = segs[0].end().millis();
        assert!((1800..2400).contains(&cut), "{cut}");
        assert_eq!(cut, 2100);
        assert_eq!(segs[1].start().millis(), 2100);
        assert_eq!(segs[1].end().millis(), 4000);
    }

    #[test]
    fn long_speech_forced_split() {
        let audio = buffer(&[tone(12_000, 8000.0)]);
        let segs = run(SegmenterConfig::default(), Box::new(HeuristicScorer::default()), &audio);
        assert_eq!(segs.len(), 2);
        assert!(segs[0].forced_split);
        assert_eq!(segs[0].duration_ms(), 10_000);
        assert!(!segs[1].forced_split);
        assert_eq!(segs[1].duration_ms(), 2000);
    }

    #[test]
    fn short_gap_is_not_a_pause() {
        let audio = buffer(&[tone(2000, 8000.0), silence(400), tone(2000, 8000.0)]);
        let segs = run(SegmenterConfig::default(), Box::new(AlwaysComplete), &audio);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].duration_ms(), 4400);
    }

    #[test]
    fn incomplete_score_keeps_accumulating() {
        let audio = buffer(&[tone(1800, 8000.0), silence(600), tone(1600, 8000.0)]);
        let segs = run(SegmenterConfig::default(), Box::new(HeuristicScorer::default()), &audio);
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn hints_drive_semantic_cuts() {
        let audio = buffer(&[tone(1800, 8000.0), silence(600), tone(1600, 8000.0)]);
        let seg = Segmenter::new(
            SegmenterConfig::default(),
            Box::new(HeuristicScorer::default()),
            SR,
            Timestamp::ZERO,
            1,
        )
        .unwrap()
        .with_hints(Box::new(|_, _| Some("A full sentence.".into())));
        let (events, stats) = segment_all(seg, &audio);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].segment.boundary_confidence, 0.95);
        assert_eq!(stats.consults, 1);
        assert_eq!(events[0].scorer_elapsed_ms, 15);
    }

    #[test]
    fn baseline_cuts_short_utterances() {
        let audio = buffer(&[tone(1000, 8000.0), silence(600), tone(2000, 8000.0)]);
        let semantic = run(SegmenterConfig::default(), Box::new(AlwaysComplete), &audio);
        let baseline = run(SegmenterConfig::baseline(), Box::new(AlwaysComplete), &audio);
        assert_eq!(semantic.len(), 1);
        assert_eq!(baseline.len(), 2);
        assert_eq!(baseline[0].duration_ms(), 1300);
    }

    #[test]
    fn silence_only_emits_nothing() {
        let audio = buffer(&[silence(3000)]);
        assert!(run(SegmenterConfig::default(), Box::new(AlwaysComplete), &audio).is_empty());
    }

    #[test]
    fn leading_silence_is_not_a_pause() {
        let audio = buffer(&[silence(2000), tone(2000, 8000.0)]);
        let segs = run(SegmenterConfig::baseline(), Box::new(AlwaysComplete), &audio);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].duration_ms(), 4000);
    }

    #[test]
    fn trailing_pause_absorbed() {
        let audio = buffer(&[tone(2000, 8000.0), silence(700)]);
        let segs = run(SegmenterConfig::default(), Box::new(AlwaysComplete), &audio);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].duration_ms(), 2700);
    }

    #[test]
    fn chunked_push_matches_one_shot() {
        let audio = buffer(&[tone(1800, 8000.0), silence(600), tone(1600, 9000.0), silence(900), tone(700, 8000.0)]);
        let one = run(SegmenterConfig::default(), Box::new(AlwaysComplete), &audio);
        let mut seg = Segmenter::new(SegmenterConfig::default(), Box::new(AlwaysComplete), SR, Timestamp::ZERO, 1).unwrap();
        let mut chunked = Vec::new();
        for c in audio.samples.chunks(777) {
            chunked.extend(seg.push(c).into_iter().map(|e| e.segment));
        }
        chunked.extend(seg.finish().into_iter().map(|e| e.segment));
        assert_eq!(one, chunked);
    }
}
