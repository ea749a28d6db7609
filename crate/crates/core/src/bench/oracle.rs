//! Discrete-event oracle. Works from the speech pattern and stage profile
//! arithmetic alone: FIFO single-server stages, a sequential orchestrator
//! gated on the visual branch, and a FIFO lip-sync server.

use serde::Serialize;

use super::{Mode, Scenario};
use crate::error::{Error, Result};
use crate::pipeline::StageProfile;
use crate::visual::ring::RING_CAPACITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OracleSegment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub release_ms: u64,
}

impl OracleSegment {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// Segments the semantic segmenter should produce on the synthetic clip:
/// a cut in the middle (frame-aligned) of every pause that is long enough
/// and followed by any speech before the clip ends; each resolved cut costs
/// one scorer consult, and the final segment carries the clip tail.
pub fn oracle_segments(scn: &Scenario, clip_ms: u64) -> Vec<OracleSegment> {
    let p = scn.pattern;
    let vad = &scn.segmenter.vad;
    let frame = vad.frame_ms;
    let period = p.period_ms();
    if clip_ms <= p.lead_ms {
        return Vec::new();
    }
    let mut cuts = Vec::new();
    let mut k = 0;
    loop {
        let pause_start = k * period + p.lead_ms + p.speech_ms;
        let resume = (k + 1) * period + p.lead_ms;
        // a trailing partial frame of speech still resolves the pause
        if resume >= clip_ms {
            break;
        }
        let pause = resume - pause_start;
        let seg_start = cuts.last().copied().unwrap_or(0);
        let cut = pause_start + (pause / frame / 2) * frame;
        if pause >= vad.silence_ms && cut - seg_start >= vad.min_segment_ms {
            cuts.push(cut);
        }
        k += 1;
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in cuts.iter().enumerate() {
        out.push(OracleSegment {
            start_ms: start,
            end_ms: *c,
            release_ms: scn.segmenter.scorer_latency_ms * (i as u64 + 1),
        });
        start = *c;
    }
    out.push(OracleSegment {
        start_ms: start,
        end_ms: clip_ms,
        release_ms: scn.segmenter.scorer_latency_ms * cuts.len() as u64,
    });
    out
}

fn stage_ms(p: &StageProfile, media_ms: u64, extra: f64) -> u64 {
    (p.fixed_ms + p.per_sec_ms * media_ms as f64 / 1000.0 + extra).round() as u64
}

fn frame_times(scn: &Scenario, clip_ms: u64) -> Vec<u64> {
    (0..)
        .map(|j: u64| j * 1000 / scn.fps as u64)
        .take_while(|t| *t < clip_ms)
        .collect()
}

fn window(scn: &Scenario, seg: &OracleSegment) -> (u64, u64) {
    let synth_ms = (seg.duration_ms() as f64 * scn.tts_ratio).round() as u64;
    (
        seg.start_ms.saturating_sub(scn.sync.window_ms),
        seg.start_ms + synth_ms + scn.sync.window_ms,
    )
}

/// Predicted baseline latency: setup plus the serial per-segment sums.
pub fn oracle_baseline(scn: &Scenario, clip_ms: u64) -> u64 {
    let ts = frame_times(scn, clip_ms);
    let mut t = scn.baseline_setup_ms;
    for seg in oracle_segments(scn, clip_ms) {
        let d = seg.duration_ms();
        t += stage_ms(&scn.stt, d, 0.0) + stage_ms(&scn.mt, d, 0.0) + stage_ms(&scn.tts, d, 0.0);
        let (lo, hi) = window(scn, &seg);
        let n = ts.iter().filter(|t| **t >= lo && **t <= hi).count();
        t += (scn.face_detect_ms * n as f64).round() as u64;
        if n < scn.sync.min_frames {
            continue;
        }
        t += scn.sync.delta_sync_ms();
        t += stage_ms(&scn.lipsync, d, scn.baseline_engine.per_frame_ms * n as f64);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRun {
    pub latency_ms: u64,
    /// Emission time per segment; `None` for a sync failure.
    pub emissions: Vec<Option<u64>>,
}

/// Predicted pipeline timings.
pub fn oracle_pipeline(scn: &Scenario, clip_ms: u64) -> OracleRun {
    let ts = frame_times(scn, clip_ms);
    let per_frame = scn.face_detect_ms.round() as u64;
    // detection of frame j completes at per_frame * (j + 1)
    let done = |j: usize| per_frame * (j as u64 + 1);
    let detected_by = |t: u64| -> Option<usize> {
        if ts.is_empty() {
            return None;
        }
        let n = if per_frame == 0 { ts.len() } else { ((t / per_frame) as usize).min(ts.len()) };
        n.checked_sub(1)
    };
    let mut free = [0u64; 3];
    let (mut orch_free, mut lip_free, mut last) = (0u64, 0u64, 0u64);
    let mut emissions = Vec::new();
    for seg in oracle_segments(scn, clip_ms) {
        let d = seg.duration_ms();
        let mut t = seg.release_ms;
        for (k, p) in [&scn.stt, &scn.mt, &scn.tts].into_iter().enumerate() {
            t = t.max(free[k]) + stage_ms(p, d, 0.0);
            free[k] = t;
        }
        let (lo, hi) = window(scn, &seg);
        let vis = match ts.iter().rposition(|t| *t <= hi) {
            Some(j) => done(j),
            None => 0,
        };
        let mut try_at = t.max(orch_free).max(vis);
        let mut attempt = 0;
        let outcome = loop {
            let present = match detected_by(try_at) {
                Some(jmax) => {
                    let oldest = (jmax + 1).saturating_sub(RING_CAPACITY);
                    (oldest..=jmax).filter(|j| ts[*j] >= lo && ts[*j] <= hi).count()
                }
                None => 0,
            };
            if present >= scn.sync.min_frames {
                break Some((try_at, present));
            }
            if attempt >= scn.sync.retry_attempts {
                break None;
            }
            attempt += 1;
            try_at += scn.sync.retry_delay_ms(attempt);
        };
        match outcome {
            Some((ready, n)) => {
                let dispatch = ready + scn.sync.delta_sync_ms();
                orch_free = dispatch;
                let l = dispatch.max(lip_free) + stage_ms(&scn.lipsync, d, scn.pipeline_engine.per_frame_ms * n as f64);
                lip_free = l;
                last = last.max(l);
                emissions.push(Some(l));
            }
            None => {
                orch_free = try_at;
                last = last.max(try_at);
                emissions.push(None);
            }
        }
    }
    OracleRun { latency_ms: last, emissions }
}

/// Predicted latency for a jitter-free scenario.
pub fn oracle_simulate(scn: &Scenario, clip_ms: u64, mode: Mode) -> Result<u64> {
    if !scn.is_jitter_free() {
        return Err(Error::Bench("the oracle needs a jitter-free scenario".into()));
    }
    Ok(match mode {
        Mode::Baseline => oracle_baseline(scn, clip_ms),
        Mode::Pipeline => oracle_pipeline(scn, clip_ms).latency_ms,
    })
}
