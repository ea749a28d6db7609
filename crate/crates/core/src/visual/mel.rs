//! Log-mel spectrogram: periodic Hann window, 1024-point FFT, hop 256,
//! 80 Slaney-style triangular filters from 0 Hz to Nyquist, natural log
//! with a 1e-10 floor. No center padding, so a buffer of N samples gives
//! `1 + (N - 1024) / 256` frames.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::media::AudioBuffer;
use crate::time::Timestamp;

pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    /// Row-major `n_frames x N_MELS`.
    pub data: Vec<f32>,
    pub n_frames: usize,
    pub sample_rate: u32,
    pub start: Timestamp,
}

impl MelSpec {
    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * N_MELS..(i + 1) * N_MELS]
    }

    /// Media time covered, first window start to last window end.
    pub fn span_ms(&self) -> u64 {
        if self.n_frames == 0 {
            return 0;
        }
        let samples = (self.n_frames - 1) * HOP + N_FFT;
        crate::media::samples_to_ms(samples, self.sample_rate)
    }

    pub fn end(&self) -> Timestamp {
        self.start + self.span_ms()
    }
}

pub fn mel_frame_count(n_samples: usize) -> Option<usize> {
    (n_samples >= N_FFT).then(|| 1 + (n_samples - N_FFT) / HOP)
}

pub fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if f < MIN_LOG_HZ {
        f / F_SP
    } else {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if m < min_log_mel {
        m * F_SP
    } else {
        MIN_LOG_HZ * (logstep * (m - min_log_mel)).exp()
    }
}

/// The `N_MELS + 2` band edges in Hz.
pub fn mel_edges(sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Center frequency of each filter.
pub fn mel_centers(sample_rate: u32) -> Vec<f64> {
    mel_edges(sample_rate)[1..=N_MELS].to_vec()
}

/// `N_MELS x (N_FFT/2 + 1)` area-normalized triangular weights.
pub fn mel_filterbank(sample_rate: u32) -> Vec<Vec<f64>> {
    let edges = mel_edges(sample_rate);
    let n_bins = N_FFT / 2 + 1;
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate as f64 / N_FFT as f64)
        .collect();
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            bin_hz
                .iter()
                .map(|&f| {
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable analyzer holding the FFT plan, window and filterbank.
pub struct MelAnalyzer {
    sample_rate: u32,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Sparse filters: (first bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelAnalyzer {
    pub fn new(sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Dsp("sample rate must be positive".into()));
        }
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let filters = mel_filterbank(sample_rate)
            .into_iter()
            .map(|w| {
                let first = w.iter().position(|&x| x > 0.0).unwrap_or(0);
                let last = w.iter().rposition(|&x| x > 0.0).unwrap_or(0);
                (first, w[first..=last.max(first)].to_vec())
            })
            .collect();
        Ok(MelAnalyzer {
            sample_rate,
            fft,
            window: hann_periodic(N_FFT),
            filters,
        })
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<MelSpec> {
        if audio.sample_rate != self.sample_rate {
            return Err(Error::Dsp(format!(
                "analyzer built for {} Hz, audio is {} Hz",
                self.sample_rate, audio.sample_rate
            )));
        }
        let n_frames = mel_frame_count(audio.len()).ok_or_else(|| {
            Error::Dsp(format!(
                "audio of {} samples is shorter than one {N_FFT}-point frame",
                audio.len()
            ))
        })?;
        let mut data = Vec::with_capacity(n_frames * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mag = vec![0.0f64; N_FFT / 2 + 1];
        for f in 0..n_frames {
            let frame = &audio.samples[f * HOP..f * HOP + N_FFT];
            for (i, (s, w)) in frame.iter().zip(&self.window).enumerate() {
                buf[i] = Complex::new(*s as f64 / 32768.0 * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, m) in mag.iter_mut().enumerate() {
                *m = buf[k].norm();
            }
            for (first, w) in &self.filters {
                let e: f64 = w.iter().zip(&mag[*first..]).map(|(a, b)| a * b).sum();
                data.push(e.max(LOG_FLOOR).ln() as f32);
            }
        }
        Ok(MelSpec {
            data,
            n_frames,
            sample_rate: audio.sample_rate,
            start: audio.start,
        })
    }
}

pub fn mel_spectrogram(audio: &AudioBuffer) -> Result<MelSpec> {
    MelAnalyzer::new(audio.sample_rate)?.compute(audio)
}

/// Golden-file layout: `u32-LE rows, u32-LE cols`, then row-major f32-LE.
pub fn write_golden<W: Write>(w: &mut W, mel: &MelSpec) -> Result<()> {
    w.write_all(&(mel.n_frames as u32).to_le_bytes())?;
    w.write_all(&(N_MELS as u32).to_le_bytes())?;
    for v in &mel.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_golden<R: Read>(r: &mut R) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Dsp("golden file shorter than its header".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Dsp(format!(
            "golden file declares {rows}x{cols} but carries {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

pub fn write_golden_file(path: &Path, mel: &MelSpec) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_golden(&mut f, mel)?;
    f.flush()?;
    Ok(())
}

pub fn read_golden_file(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    read_golden(&mut std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> AudioBuffer {
        let s = (0..n)
            .map(|i| (32767.0 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as i16)
            .collect();
        AudioBuffer::new(s, 16_000, Timestamp::ZERO).unwrap()
    }

    #[test]
    fn one_second_gives_59_frames() {
        let mel = mel_spectrogram(&tone(300.0, 16_000)).unwrap();
        assert_eq!(mel.n_frames, 59);
        assert_eq!(mel.data.len(), 59 * 80);
    }

    #[test]
    fn silence_is_floor() {
        let a = AudioBuffer::new(vec![0; 4096], 16_000, Timestamp::ZERO).unwrap();
        let mel = mel_spectrogram(&a).unwrap();
        let floor = (LOG_FLOOR).ln() as f32;
        assert!(mel.data.iter().all(|v| *v == floor));
    }

    #[test]
    fn short_audio_rejected() {
        let a = AudioBuffer::new(vec![0; 1023], 16_000, Timestamp::ZERO).unwrap();
        assert!(mel_spectrogram(&a).is_err());
    }

    #[test]
    fn mel_scale_roundtrip() {
        for f in [0.0, 440.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn filters_have_unit_area_in_hz() {
        // area-normalized triangles integrate to 1 over frequency
        let sr = 16_000;
        let fb = mel_filterbank(sr);
        let df = sr as f64 / N_FFT as f64;
        for w in fb.iter().skip(10) {
            let area: f64 = w.iter().sum::<f64>() * df;
            assert!((area - 1.0).abs() < 0.05, "{area}");
        }
    }

    #[test]
    fn golden_roundtrip() {
        let mel = mel_spectrogram(&tone(440.0, 4096)).unwrap();
        let mut bytes = Vec::new();
        write_golden(&mut bytes, &mel).unwrap();
        let (r, c, d) = read_golden(&mut &bytes[..]).unwrap();
        assert_eq!((r, c), (mel.n_frames, N_MELS));
        assert_eq!(d, mel.data);
        assert!(read_golden(&mut &bytes[..bytes.len() - 1]).is_err());
    }
}
