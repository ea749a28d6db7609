//! Media containers shared by every stage: audio buffers, segments and
//! their identifiers.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Tolerance for contiguity checks when concatenating buffers.
const CONTIGUITY_TOLERANCE_MS: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId {
    pub uuid: Uuid,
    pub birth: Timestamp,
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.uuid, self.birth)
    }
}

/// Seeded UUID source so identical runs produce identical ids.
#[derive(Debug, Clone)]
pub struct IdGenerator {
    rng: ChaCha8Rng,
}

impl IdGenerator {
    pub fn new(seed: u64) -> Self {
        IdGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_uuid(&mut self) -> Uuid {
        let mut bytes = [0u8; 16];
        self.rng.fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid()
    }

    pub fn segment_id(&mut self, birth: Timestamp) -> SegmentId {
        SegmentId {
            uuid: self.next_uuid(),
            birth,
        }
    }
}

/// Mono signed 16-bit PCM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioBuffer {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    pub start: Timestamp,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>, sample_rate: u32, start: Timestamp) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
            start,
        })
    }

    pub fn empty(sample_rate: u32, start: Timestamp) -> Self {
        AudioBuffer {
            samples: Vec::new(),
            sample_rate,
            start,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> u64 {
        samples_to_ms(self.samples.len(), self.sample_rate)
    }

    pub fn end(&self) -> Timestamp {
        self.start + self.duration_ms()
    }

    /// Samples `[from, to)` as a new buffer starting at the matching time.
    pub fn slice(&self, from: usize, to: usize) -> AudioBuffer {
        let to = to.min(self.samples.len());
        let from = from.min(to);
        AudioBuffer {
            samples: self.samples[from..to].to_vec(),
            sample_rate: self.sample_rate,
            start: self.start + samples_to_ms(from, self.sample_rate),
        }
    }

    /// Declared payload size in bytes (2 per sample).
    pub fn byte_size(&self) -> u64 {
        self.samples.len() as u64 * 2
    }
}

pub fn samples_to_ms(n: usize, sample_rate: u32) -> u64 {
    ((1000 * n as u64) as f64 / sample_rate as f64).round() as u64
}

pub fn ms_to_samples(ms: u64, sample_rate: u32) -> usize {
    ((ms * sample_rate as u64) as f64 / 1000.0).round() as usize
}

/// `a ++ b`; `b` must start where `a` ends (±1 ms) at the same rate.
pub fn audio_concat(a: &AudioBuffer, b: &AudioBuffer) -> Result<AudioBuffer> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::Audio(format!(
            "sample-rate mismatch: {} Hz vs {} Hz",
            a.sample_rate, b.sample_rate
        )));
    }
    if !b.is_empty() && !a.is_empty() {
        let gap = b.start.since(a.end());
        if gap.abs() > CONTIGUITY_TOLERANCE_MS {
            return Err(Error::Audio(format!(
                "non-contiguous buffers: second starts {gap} ms from the end of the first"
            )));
        }
    }
    if a.is_empty() {
        let mut out = b.clone();
        if b.is_empty() {
            out.start = a.start;
        }
        return Ok(out);
    }
    let mut samples = Vec::with_capacity(a.len() + b.len());
    samples.extend_from_slice(&a.samples);
    samples.extend_from_slice(&b.samples);
    Ok(AudioBuffer {
        samples,
        sample_rate: a.sample_rate,
        start: a.start,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LanguageCode(pub String);

impl LanguageCode {
    pub fn new(code: &str) -> Self {
        LanguageCode(code.to_string())
    }
}

impl Default for LanguageCode {
    fn default() -> Self {
        LanguageCode::new("en")
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Unit of work flowing through the translation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub audio: AudioBuffer,
    pub boundary_confidence: f64,
    pub forced_split: bool,
    pub lang_src: LanguageCode,
    pub lang_dst: LanguageCode,
}

impl Segment {
    pub fn duration_ms(&self) -> u64 {
        self.audio.duration_ms()
    }

    pub fn start(&self) -> Timestamp {
        self.audio.start
    }

    pub fn end(&self) -> Timestamp {
        self.audio.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(ms: u64, start: u64, rate: u32) -> AudioBuffer {
        AudioBuffer::new(
            vec![1; ms_to_samples(ms, rate)],
            rate,
            Timestamp::from_millis(start),
        )
        .unwrap()
    }

    #[test]
    fn concat_lengths_add() {
        let a = buf(1000, 0, 16_000);
        let b = buf(500, 1000, 16_000);
        let c = audio_concat(&a, &b).unwrap();
        assert_eq!(c.len(), 24_000);
        assert_eq!(c.duration_ms(), 1500);
        assert_eq!(c.start, a.start);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let a = buf(1000, 40, 16_000);
        let e = AudioBuffer::empty(16_000, a.end());
        assert_eq!(audio_concat(&a, &e).unwrap(), a);
    }

    #[test]
    fn concat_rejects_rate_mismatch() {
        let a = buf(1000, 0, 16_000);
        let b = buf(500, 1000, 8_000);
        assert!(audio_concat(&a, &b).is_err());
    }

    #[test]
    fn concat_rejects_gap() {
        let a = buf(1000, 0, 16_000);
        assert!(audio_concat(&a, &buf(500, 1001, 16_000)).is_ok());
        assert!(audio_concat(&a, &buf(500, 1002, 16_000)).is_err());
    }

    #[test]
    fn zero_rate_rejected() {
        assert!(AudioBuffer::new(vec![], 0, Timestamp::ZERO).is_err());
    }

    #[test]
    fn ids_are_seeded() {
        let mut a = IdGenerator::new(3);
        let mut b = IdGenerator::new(3);
        let t = Timestamp::from_millis(5);
        assert_eq!(a.segment_id(t), b.segment_id(t));
        assert_ne!(a.next_uuid(), a.next_uuid());
    }

    #[test]
    fn slice_keeps_timing() {
        let a = buf(1000, 100, 16_000);
        let s = a.slice(1600, 3200);
        assert_eq!(s.start.millis(), 200);
        assert_eq!(s.duration_ms(), 100);
    }
}
