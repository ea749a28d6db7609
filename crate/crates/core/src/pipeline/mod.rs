//! Asynchronous translation pipeline: STT -> MT -> TTS stages chained
//! through broker queues, with deterministic mock stage bodies.

mod depth;
mod worker;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{ms_to_samples, AudioBuffer, LanguageCode, Segment, SegmentId};
use crate::time::Timestamp;
use crate::wire::{Decoder, Encoder};

pub use depth::DepthTracker;
pub use worker::{clock_wait, run_stage_worker, Outgoing, StageHandler, StageWorker, WorkHandler, WorkerSummary};

pub const AUDIO_QUEUE: &str = "audio_queue";
pub const TEXT_QUEUE: &str = "text_queue";
pub const TRANSLATION_QUEUE: &str = "translation_queue";
pub const AUDIO_OUTPUT_QUEUE: &str = "audio_output_queue";
pub const LIPSYNC_QUEUE: &str = "lipsync_queue";
pub const SYNCED_QUEUE: &str = "synced_queue";

/// One token of mock transcript per this much audio.
pub const MS_PER_TOKEN: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Stt,
    Mt,
    Tts,
    Lipsync,
    FaceDetect,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Stt => "stt",
            StageKind::Mt => "mt",
            StageKind::Tts => "tts",
            StageKind::Lipsync => "lipsync",
            StageKind::FaceDetect => "facedetect",
        }
    }

    /// The ATP chain in order.
    pub const ATP: [StageKind; 3] = [StageKind::Stt, StageKind::Mt, StageKind::Tts];

    pub fn queues(self) -> Option<(&'static str, &'static str)> {
        match self {
            StageKind::Stt => Some((AUDIO_QUEUE, TEXT_QUEUE)),
            StageKind::Mt => Some((TEXT_QUEUE, TRANSLATION_QUEUE)),
            StageKind::Tts => Some((TRANSLATION_QUEUE, AUDIO_OUTPUT_QUEUE)),
            StageKind::Lipsync => Some((LIPSYNC_QUEUE, SYNCED_QUEUE)),
            StageKind::FaceDetect => None,
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "stt" => StageKind::Stt,
            "mt" => StageKind::Mt,
            "tts" => StageKind::Tts,
            "lipsync" => StageKind::Lipsync,
            "facedetect" => StageKind::FaceDetect,
            other => return Err(Error::Config(format!("unknown stage `{other}`"))),
        })
    }
}

/// Latency model for a stage: `fixed + per_sec * seconds`, scaled by a
/// seeded noise factor in `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageProfile {
    pub name: StageKind,
    pub fixed_ms: f64,
    pub per_sec_ms: f64,
    pub jitter_pct: f64,
    pub seed: u64,
}

impl StageProfile {
    pub fn new(name: StageKind, fixed_ms: f64, per_sec_ms: f64) -> Self {
        StageProfile {
            name,
            fixed_ms,
            per_sec_ms,
            jitter_pct: 0.0,
            seed: 0,
        }
    }

    pub fn with_jitter(mut self, jitter_pct: f64, seed: u64) -> Self {
        self.jitter_pct = jitter_pct;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fixed_ms >= 0.0
            && self.per_sec_ms >= 0.0
            && (0.0..1.0).contains(&self.jitter_pct)
            && self.fixed_ms.is_finite()
            && self.per_sec_ms.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad profile for stage {}: {self:?}", self.name)))
        }
    }

    /// Noise factor for one work item; keyed so it does not depend on
    /// processing order.
    pub fn noise_factor(&self, key: u128) -> f64 {
        if self.jitter_pct == 0.0 {
            return 1.0;
        }
        let mixed = self.seed ^ (key as u64) ^ ((key >> 64) as u64).rotate_left(17) ^ (self.name as u64) << 56;
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        1.0 + self.jitter_pct * (2.0 * rng.random::<f64>() - 1.0)
    }

    /// Service time in ms for `media_ms` of media, extra per-item cost included.
    pub fn service_ms_with(&self, media_ms: u64, extra_ms: f64, key: u128) -> u64 {
        let base = self.fixed_ms + self.per_sec_ms * media_ms as f64 / 1000.0 + extra_ms;
        (base * self.noise_factor(key)).round().max(0.0) as u64
    }

    pub fn service_ms(&self, media_ms: u64, key: u128) -> u64 {
        self.service_ms_with(media_ms, 0.0, key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Source,
    Transcript,
    Translation,
    SynthAudio,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Text(Vec<String>),
    Audio(AudioBuffer),
}

/// Message carried on every ATP queue. `segment_id` is the join key.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub segment_id: SegmentId,
    pub kind: OutputKind,
    pub payload: Payload,
    pub source_start: Timestamp,
    pub source_duration_ms: u64,
    pub lang_src: LanguageCode,
    pub lang_dst: LanguageCode,
    pub produced_at: Timestamp,
    pub stage_service_ms: u64,
}

impl StageOutput {
    pub fn source(seg: &Segment, now: Timestamp) -> Self {
        StageOutput {
            segment_id: seg.id,
            kind: OutputKind::Source,
            payload: Payload::Audio(seg.audio.clone()),
            source_start: seg.start(),
            source_duration_ms: seg.duration_ms(),
            lang_src: seg.lang_src.clone(),
            lang_dst: seg.lang_dst.clone(),
            produced_at: now,
            stage_service_ms: 0,
        }
    }

    pub fn text(&self) -> Option<&[String]> {
        match &self.payload {
            Payload::Text(t) => Some(t),
            Payload::Audio(_) => None,
        }
    }

    pub fn audio(&self) -> Option<&AudioBuffer> {
        match &self.payload {
            Payload::Audio(a) => Some(a),
            Payload::Text(_) => None,
        }
    }

    /// Declared size for broker byte accounting.
    pub fn byte_size(&self) -> u64 {
        match &self.payload {
            Payload::Audio(a) => a.byte_size(),
            Payload::Text(t) => t.iter().map(|s| s.len() as u64 + 1).sum(),
        }
    }

    fn derive(&self, kind: OutputKind, payload: Payload, now: Timestamp, service: u64) -> Self {
        StageOutput {
            kind,
            payload,
            produced_at: now,
            stage_service_ms: service,
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.segment_id(&self.segment_id);
        e.u8(match self.kind {
            OutputKind::Source => 0,
            OutputKind::Transcript => 1,
            OutputKind::Translation => 2,
            OutputKind::SynthAudio => 3,
        });
        match &self.payload {
            Payload::Text(tokens) => {
                e.u8(0).u32(tokens.len() as u32);
                for t in tokens {
                    e.str(t);
                }
            }
            Payload::Audio(a) => {
                e.u8(1).audio(a);
            }
        }
        e.u64(self.source_start.millis())
            .u64(self.source_duration_ms)
            .lang(&self.lang_src)
            .lang(&self.lang_dst)
            .u64(self.produced_at.millis())
            .u64(self.stage_service_ms);
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        let segment_id = d.segment_id()?;
        let kind = match d.u8()? {
            0 => OutputKind::Source,
            1 => OutputKind::Transcript,
            2 => OutputKind::Translation,
            3 => OutputKind::SynthAudio,
            k => return Err(Error::Wire(format!("unknown output kind {k}"))),
        };
        let payload = match d.u8()? {
            0 => {
                let n = d.u32()?;
                Payload::Text((0..n).map(|_| d.str()).collect::<Result<_>>()?)
            }
            1 => Payload::Audio(d.audio()?),
            t => return Err(Error::Wire(format!("unknown payload tag {t}"))),
        };
        let out = StageOutput {
            segment_id,
            kind,
            payload,
            source_start: Timestamp::from_millis(d.u64()?),
            source_duration_ms: d.u64()?,
            lang_src: d.lang()?,
            lang_dst: d.lang()?,
            produced_at: Timestamp::from_millis(d.u64()?),
            stage_service_ms: d.u64()?,
        };
        if !d.is_done() {
            return Err(Error::Wire(format!("{} trailing bytes", d.remaining().len())));
        }
        Ok(out)
    }
}

/// A pluggable stage body. `service_ms` is the simulated compute time the
/// worker charges before `process` output becomes visible.
pub trait Stage: Send {
    fn kind(&self) -> StageKind;
    fn service_ms(&self, input: &StageOutput) -> u64;
    fn process(&mut self, input: &StageOutput, now: Timestamp) -> Result<StageOutput>;
}

fn item_key(id: &SegmentId) -> u128 {
    id.uuid.as_u128()
}

fn expect_kind(stage: StageKind, input: &StageOutput, want: OutputKind) -> Result<()> {
    if input.kind == want {
        Ok(())
    } else {
        Err(Error::Stage {
            stage: stage.to_string(),
            reason: format!("expected {want:?} input, got {:?}", input.kind),
        })
    }
}

/// Deterministic transcript: one token per 300 ms of audio (rounded up),
/// each token derived from the segment id and its position.
pub fn mock_stt(input: &StageOutput, profile: &StageProfile, now: Timestamp) -> Result<StageOutput> {
    expect_kind(StageKind::Stt, input, OutputKind::Source)?;
    let n = input.source_duration_ms.div_ceil(MS_PER_TOKEN);
    let tag = &input.segment_id.uuid.simple().to_string()[..6];
    let tokens = (0..n).map(|i| format!("w{i}_{tag}")).collect();
    let service = profile.service_ms(input.source_duration_ms, item_key(&input.segment_id));
    Ok(input.derive(OutputKind::Transcript, Payload::Text(tokens), now, service))
}

/// Token reversal: a visible, order-sensitive transform.
pub fn mock_mt(input: &StageOutput, profile: &StageProfile, now: Timestamp) -> Result<StageOutput> {
    expect_kind(StageKind::Mt, input, OutputKind::Transcript)?;
    let mut tokens = input.text().unwrap_or_default().to_vec();
    tokens.reverse();
    let service = profile.service_ms(input.source_duration_ms, item_key(&input.segment_id));
    Ok(input.derive(OutputKind::Translation, Payload::Text(tokens), now, service))
}

/// Synthesized audio lasting `source duration * ratio`, a tone whose pitch
/// is derived from the segment id.
pub fn mock_tts(
    input: &StageOutput,
    profile: &StageProfile,
    ratio: f64,
    sample_rate: u32,
    now: Timestamp,
) -> Result<StageOutput> {
    expect_kind(StageKind::Tts, input, OutputKind::Translation)?;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("speaking-rate ratio {ratio} must be > 0")));
    }
    let dur_ms = (input.source_duration_ms as f64 * ratio).round() as u64;
    let n = ms_to_samples(dur_ms, sample_rate);
    let freq = 180.0 + (input.segment_id.uuid.as_u128() % 200) as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            (6000.0 * (2.0 * std::f64::consts::PI * freq * t).sin()) as i16
        })
        .collect();
    let audio = AudioBuffer::new(samples, sample_rate, input.source_start)?;
    let service = profile.service_ms(input.source_duration_ms, item_key(&input.segment_id));
    Ok(input.derive(OutputKind::SynthAudio, Payload::Audio(audio), now, service))
}

#[derive(Debug, Clone)]
pub struct MockStage {
    pub profile: StageProfile,
    pub tts_ratio: f64,
    pub sample_rate: u32,
}

impl MockStage {
    pub fn new(profile: StageProfile) -> Self {
        MockStage {
            profile,
            tts_ratio: 1.0,
            sample_rate: crate::media::DEFAULT_SAMPLE_RATE,
        }
    }
}

impl Stage for MockStage {
    fn kind(&self) -> StageKind {
        self.profile.name
    }

    fn service_ms(&self, input: &StageOutput) -> u64 {
        self.profile.service_ms(input.source_duration_ms, item_key(&input.segment_id))
    }

    fn process(&mut self, input: &StageOutput, now: Timestamp) -> Result<StageOutput> {
        match self.profile.name {
            StageKind::Stt => mock_stt(input, &self.profile, now),
            StageKind::Mt => mock_mt(input, &self.profile, now),
            StageKind::Tts => mock_tts(input, &self.profile, self.tts_ratio, self.sample_rate, now),
            other => Err(Error::Stage {
                stage: other.to_string(),
                reason: "no mock body for this stage kind".into(),
            }),
        }
    }
}

/// A stage that always fails (or panics) after charging its service time.
#[derive(Debug, Clone)]
pub struct FailingStage {
    pub profile: StageProfile,
    pub panic: bool,
}

impl Stage for FailingStage {
    fn kind(&self) -> StageKind {
        self.profile.name
    }

    fn service_ms(&self, input: &StageOutput) -> u64 {
        self.profile.service_ms(input.source_duration_ms, item_key(&input.segment_id))
    }

    fn process(&mut self, _input: &StageOutput, _now: Timestamp) -> Result<StageOutput> {
        if self.panic {
            panic!("injected stage panic");
        }
        Err(Error::Stage {
            stage: self.profile.name.to_string(),
            reason: "injected failure".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::IdGenerator;

    fn seg(ms: u64) -> Segment {
        let audio = AudioBuffer::new(vec![100; ms_to_samples(ms, 16_000)], 16_000, Timestamp::from_millis(500)).unwrap();
        Segment {
            id: IdGenerator::new(3).segment_id(audio.start),
            audio,
            boundary_confidence: 0.95,
            forced_split: false,
            lang_src: LanguageCode::new("en"),
            lang_dst: LanguageCode::new("tr"),
        }
    }

    fn profile(kind: StageKind) -> StageProfile {
        StageProfile::new(kind, 200.0, 600.0)
    }

    #[test]
    fn profile_formula() {
        let p = profile(StageKind::Stt);
        assert_eq!(p.service_ms(2000, 1), 1400);
        assert_eq!(p.service_ms(0, 1), 200);
    }

    #[test]
    fn jitter_stays_in_band_and_is_deterministic() {
        let p = profile(StageKind::Mt).with_jitter(0.03, 9);
        for key in 0..500u128 {
            let f = p.noise_factor(key * 7919);
            assert!((0.97..=1.03).contains(&f), "{f}");
            assert_eq!(f, p.noise_factor(key * 7919));
        }
        assert_ne!(p.noise_factor(1), p.noise_factor(2));
    }

    #[test]
    fn stt_token_counts() {
        let p = profile(StageKind::Stt);
        for (ms, n) in [(3000, 10), (1500, 5), (100, 1)] {
            let out = mock_stt(&StageOutput::source(&seg(ms), Timestamp::ZERO), &p, Timestamp::ZERO).unwrap();
            assert_eq!(out.text().unwrap().len(), n);
        }
        let src = StageOutput::source(&seg(3000), Timestamp::ZERO);
        assert_eq!(mock_stt(&src, &p, Timestamp::ZERO).unwrap(), mock_stt(&src, &p, Timestamp::ZERO).unwrap());
    }

    #[test]
    fn mt_reverses_tokens() {
        let mut t = StageOutput::source(&seg(900), Timestamp::ZERO);
        t.kind = OutputKind::Transcript;
        t.payload = Payload::Text(vec!["a".into(), "b".into(), "c".into()]);
        let out = mock_mt(&t, &profile(StageKind::Mt), Timestamp::ZERO).unwrap();
        assert_eq!(out.text().unwrap(), ["c", "b", "a"]);
        assert_eq!(out.segment_id, t.segment_id);
    }

    #[test]
    fn tts_duration_scales_with_ratio() {
        let mut t = StageOutput::source(&seg(4000), Timestamp::ZERO);
        t.kind = OutputKind::Translation;
        t.payload = Payload::Text(vec!["x".into()]);
        let p = profile(StageKind::Tts);
        let a = mock_tts(&t, &p, 1.0, 16_000, Timestamp::ZERO).unwrap();
        assert_eq!(a.audio().unwrap().duration_ms(), 4000);
        let b = mock_tts(&t, &p, 1.25, 16_000, Timestamp::ZERO).unwrap();
        assert_eq!(b.audio().unwrap().duration_ms(), 5000);
        assert_eq!(b.audio().unwrap().start, t.source_start);
    }

    #[test]
    fn wrong_input_kind_rejected() {
        let src = StageOutput::source(&seg(1000), Timestamp::ZERO);
        assert!(mock_mt(&src, &profile(StageKind::Mt), Timestamp::ZERO).is_err());
    }

    #[test]
    fn wire_roundtrip() {
        let src = StageOutput::source(&seg(700), Timestamp::from_millis(9));
        assert_eq!(StageOutput::decode(&src.encode()).unwrap(), src);
        let txt = mock_stt(&src, &profile(StageKind::Stt), Timestamp::from_millis(11)).unwrap();
        assert_eq!(StageOutput::decode(&txt.encode()).unwrap(), txt);
        let mut bytes = txt.encode();
        bytes.push(0);
        assert!(StageOutput::decode(&bytes).is_err());
    }

    #[test]
    fn stage_kind_parse() {
        for k in [StageKind::Stt, StageKind::Mt, StageKind::Tts, StageKind::Lipsync, StageKind::FaceDetect] {
            assert_eq!(k.name().parse::<StageKind>().unwrap(), k);
        }
        assert!("asr".parse::<StageKind>().is_err());
    }
}
