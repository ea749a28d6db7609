//! Deterministic stand-ins for the face detector and the lip-sync engine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{StageKind, StageProfile};
use crate::time::Timestamp;

use super::frames::{FaceBox, FrameRecord, FRAME_HEIGHT, FRAME_WIDTH};
use super::kalman::KalmanTrack;
use super::mel::MelSpec;

/// Detector noise in px (standard deviation per coordinate).
pub const DETECT_NOISE_PX: f64 = 4.0;

/// Raw detection for frame `j`: a slowly swaying head plus seeded noise.
pub fn mock_face_detect(frame_index: u64, seed: u64) -> FaceBox {
    let t = frame_index as f64 / 30.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ frame_index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = Normal::new(0.0, DETECT_NOISE_PX).unwrap();
    FaceBox {
        cx: FRAME_WIDTH as f64 / 2.0 + 12.0 * (0.7 * t).sin() + n.sample(&mut rng),
        cy: FRAME_HEIGHT as f64 / 2.0 + 6.0 * (0.4 * t).sin() + n.sample(&mut rng),
        w: 160.0 + n.sample(&mut rng) * 0.5,
        h: 200.0 + n.sample(&mut rng) * 0.5,
    }
}

/// Face detection followed by Kalman smoothing.
#[derive(Debug, Clone)]
pub struct FaceDetector {
    pub profile: StageProfile,
    seed: u64,
    track: KalmanTrack,
    last_ts: Option<Timestamp>,
}

impl FaceDetector {
    pub fn new(per_frame_ms: f64, seed: u64) -> Self {
        FaceDetector {
            profile: StageProfile::new(StageKind::FaceDetect, per_frame_ms, 0.0),
            seed,
            track: KalmanTrack::default(),
            last_ts: None,
        }
    }

    pub fn service_ms(&self, frame_index: u64) -> u64 {
        self.profile.service_ms(0, frame_index as u128)
    }

    pub fn detect(&mut self, mut rec: FrameRecord) -> Result<FrameRecord> {
        let raw = mock_face_detect(rec.frame_index, self.seed);
        let dt = match self.last_ts {
            Some(prev) => rec.ts.since(prev).max(1) as u64,
            None => 1,
        };
        self.last_ts = Some(rec.ts);
        rec.face_box = Some(self.track.step(Some(&raw), dt)?);
        Ok(rec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipsyncEngine {
    pub name: &'static str,
    pub per_frame_ms: f64,
}

pub const WAV2LIP_FP32: LipsyncEngine = LipsyncEngine {
    name: "wav2lip_fp32",
    per_frame_ms: 4.50,
};

pub const WAV2LIP_TRT_FP16: LipsyncEngine = LipsyncEngine {
    name: "wav2lip_trt_fp16",
    per_frame_ms: 0.96,
};

impl LipsyncEngine {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "wav2lip_fp32" => Ok(WAV2LIP_FP32),
            "wav2lip_trt_fp16" => Ok(WAV2LIP_TRT_FP16),
            other => Err(Error::Config(format!("unknown lipsync engine `{other}`"))),
        }
    }

    /// Unrounded engine time for `frames` frames.
    pub fn cost_ms(&self, frames: usize) -> f64 {
        self.per_frame_ms * frames as f64
    }

    /// How many times faster `self` is than `other`.
    pub fn speedup_over(&self, other: &LipsyncEngine) -> f64 {
        other.per_frame_ms / self.per_frame_ms
    }
}

/// Whole lip-sync service time: stage profile plus per-frame engine cost.
pub fn lipsync_service_ms(
    profile: &StageProfile,
    engine: &LipsyncEngine,
    media_ms: u64,
    frames: usize,
    key: u128,
) -> u64 {
    profile.service_ms_with(media_ms, engine.cost_ms(frames), key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipsyncOutput {
    pub frames: Vec<FrameRecord>,
    pub synced: bool,
    pub service_ms: u64,
}

/// Pass-through lip sync: checks the frames sit within `window_ms` of the
/// mel span and charges the profile.
pub fn mock_lipsync(
    frames: &[FrameRecord],
    mel: &MelSpec,
    profile: &StageProfile,
    engine: &LipsyncEngine,
    window_ms: u64,
) -> Result<LipsyncOutput> {
    if frames.is_empty() {
        return Err(Error::Lipsync("no frames to synchronize".into()));
    }
    let lo = mel.start.saturating_offset(-(window_ms as i64));
    let hi = mel.end() + window_ms;
    if let Some(bad) = frames.iter().find(|f| f.ts < lo || f.ts > hi) {
        return Err(Error::Lipsync(format!(
            "frame {} at {} outside mel span [{lo}, {hi}]",
            bad.frame_index, bad.ts
        )));
    }
    Ok(LipsyncOutput {
        frames: frames.to_vec(),
        synced: true,
        service_ms: lipsync_service_ms(profile, engine, mel.span_ms(), frames.len(), frames[0].frame_index as u128),
    })
}
