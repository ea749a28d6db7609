#![allow(dead_code)]

use std::f64::consts::PI;

use lipstream::media::AudioBuffer;
use lipstream::time::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 16_000;

pub fn ms(n: u64) -> usize {
    (n * SR as u64 / 1000) as usize
}

pub fn tone(n: usize, hz: f64, amp: f64) -> Vec<i16> {
    (0..n)
        .map(|i| (amp * (2.0 * PI * hz * i as f64 / SR as f64).sin()).round() as i16)
        .collect()
}

pub fn buffer(samples: Vec<i16>) -> AudioBuffer {
    AudioBuffer::new(samples, SR, Timestamp::ZERO).unwrap()
}

/// Fixed 1.5 s signal for the mel golden file: a 440 Hz tone, a linear
/// chirp and a little deterministic noise.
pub fn golden_signal() -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(440);
    let n = ms(1500);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let chirp = (2.0 * PI * (200.0 * t + 1200.0 * t * t)).sin();
            let v = 6000.0 * (2.0 * PI * 440.0 * t).sin() + 4000.0 * chirp + rng.random_range(-300.0..300.0);
            v.round() as i16
        })
        .collect();
    buffer(samples)
}

pub const GOLDEN_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/mel_golden.bin");

/// Alternating speech (constant-amplitude tone) and digital silence.
/// Returns the samples and the `[start, end)` sample ranges of silence.
pub struct Stream {
    pub samples: Vec<i16>,
    pub silences: Vec<(usize, usize)>,
}

pub fn random_stream(seed: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut silences = Vec::new();
    let total = rng.random_range(2_000..40_000u64);
    let mut speech = rng.random_bool(0.7);
    while (samples.len() as u64) < ms(total) as u64 {
        let len = if speech {
            if rng.random_bool(0.1) {
                ms(rng.random_range(9_000..15_000))
            } else {
                ms(rng.random_range(10..3_000))
            }
        } else {
            ms(rng.random_range(10..1_500))
        };
        if speech {
            let hz = rng.random_range(120.0..400.0);
            samples.extend(tone(len, hz, rng.random_range(3000.0..12000.0)));
        } else {
            silences.push((samples.len(), samples.len() + len));
            samples.extend(std::iter::repeat_n(0i16, len));
        }
        speech = !speech;
    }
    Stream { samples, silences }
}

/// Chunk sizes covering `n` samples, random in `1..=max`.
pub fn random_chunks(n: usize, max: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut left = n;
    while left > 0 {
        let c = rng.random_range(1..=max).min(left);
        out.push(c);
        left -= c;
    }
    out
}
