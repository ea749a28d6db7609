//! Orchestration and synchronization: joins translated audio with buffered
//! frames by timestamp, aligns them by cross-correlation, dispatches to
//! lip sync and watches for drift.

mod session;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{AudioBuffer, SegmentId};
use crate::time::Timestamp;
use crate::visual::frames::{FrameGeometry, FrameRecord};
use crate::visual::motion::mouth_motion_series;
use crate::visual::ring::FrameRing;

pub use session::{
    LipsyncHandler, LipsyncJob, Orchestrator, SessionLog, SinkHandler, SyncedSegment, VisualProgress,
};

/// RMS window of the audio energy envelope.
pub const ENVELOPE_WINDOW_MS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    Raw,
    Ewma,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncConfig {
    pub window_ms: u64,
    pub drift_limit_ms: u64,
    pub drift_mode: DriftMode,
    pub ewma_alpha: f64,
    pub frame_buffer_bytes: u64,
    pub audio_buffer_bytes: u64,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
    pub retry_factor: f64,
    pub min_frames: usize,
    pub geometry: FrameGeometry,
    pub fps: u32,
    /// Virtual processing charges per segment.
    pub gather_ms: u64,
    pub align_ms: u64,
    pub mel_ms: u64,
    pub emit_ms: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            window_ms: 50,
            drift_limit_ms: 100,
            drift_mode: DriftMode::Ewma,
            ewma_alpha: 0.2,
            frame_buffer_bytes: 512 << 20,
            audio_buffer_bytes: 128 << 20,
            retry_attempts: 3,
            retry_base_ms: 100,
            retry_factor: 2.0,
            min_frames: 2,
            geometry: FrameGeometry::default(),
            fps: 30,
            gather_ms: 2,
            align_ms: 4,
            mel_ms: 3,
            emit_ms: 2,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_ms == 0 {
            return Err(Error::Config("sync.window_ms must be > 0".into()));
        }
        if self.drift_limit_ms <= self.window_ms {
            return Err(Error::Config("sync.drift_limit_ms must exceed sync.window_ms".into()));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(Error::Config("drift.alpha must be in (0, 1]".into()));
        }
        if self.retry_factor < 1.0 || self.fps == 0 || self.min_frames == 0 {
            return Err(Error::Config("bad retry/fps/min_frames settings".into()));
        }
        Ok(())
    }

    /// Delay before retry `attempt` (1-based), measured from the previous try.
    pub fn retry_delay_ms(&self, attempt: u32) -> u64 {
        (self.retry_base_ms as f64 * self.retry_factor.powi(attempt.saturating_sub(1) as i32)).round() as u64
    }

    /// Orchestrator time added per segment: gather and align run while the
    /// mel features are computed, then the pair is emitted.
    pub fn delta_sync_ms(&self) -> u64 {
        (self.gather_ms + self.align_ms).max(self.mel_ms) + self.emit_ms
    }

    pub fn frames_capacity(&self) -> u64 {
        self.frame_buffer_bytes / self.geometry.frame_bytes().max(1)
    }
}

/// The join window `[start - w, end + w]` for an audio span.
pub fn sync_window(start: Timestamp, end: Timestamp, window_ms: u64) -> (Timestamp, Timestamp) {
    (start.saturating_offset(-(window_ms as i64)), end + window_ms)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GatherOutcome {
    Ready(Vec<FrameRecord>),
    Insufficient { found: usize },
}

/// Frames inside the audio span widened by the sync window.
pub fn gather(audio: &AudioBuffer, ring: &FrameRing, cfg: &SyncConfig) -> GatherOutcome {
    let (lo, hi) = sync_window(audio.start, audio.end(), cfg.window_ms);
    let frames = ring.window(lo, hi);
    if frames.len() >= cfg.min_frames {
        GatherOutcome::Ready(frames)
    } else {
        GatherOutcome::Insufficient { found: frames.len() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub segment_id: SegmentId,
    pub synth_audio: AudioBuffer,
    pub frames: Vec<FrameRecord>,
    pub offset_ms: i64,
    pub confidence: f64,
    pub low_confidence: bool,
    pub aligned_at: Timestamp,
}

/// RMS energy over `[t, t + win)` for every whole ms `t` of the buffer
/// where the window fits. Index `i` is time `audio.start + i`.
pub fn energy_envelope(audio: &AudioBuffer, win_ms: u64) -> Vec<f64> {
    let sr = audio.sample_rate as u64;
    let idx = |ms: u64| (ms * sr / 1000) as usize;
    let dur = audio.duration_ms();
    if dur < win_ms || audio.is_empty() {
        return Vec::new();
    }
    let mut prefix = Vec::with_capacity(audio.len() + 1);
    prefix.push(0.0f64);
    for s in &audio.samples {
        let x = *s as f64;
        prefix.push(prefix.last().unwrap() + x * x);
    }
    (0..=dur - win_ms)
        .map(|t| {
            let (a, b) = (idx(t), idx(t + win_ms).min(audio.len()));
            if b <= a {
                0.0
            } else {
                ((prefix[b] - prefix[a]) / (b - a) as f64).max(0.0).sqrt()
            }
        })
        .collect()
}

/// Normalized cross-correlation of mouth motion against the envelope
/// shifted by `lag`: pairs `(m_j, env(ts_j - lag))`.
fn ncc_at(env: &[f64], env_start: Timestamp, motion: &[(Timestamp, f64)], lag: i64) -> Option<f64> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (ts, v) in motion {
        let t = ts.millis() as i64 - lag - env_start.millis() as i64;
        if t >= 0 && (t as usize) < env.len() {
            a.push(*v);
            b.push(env[t as usize]);
        }
    }
    if a.len() < 3 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let denom = (saa * sbb).sqrt();
    if denom <= 1e-12 * n {
        return None;
    }
    Some(sab / denom)
}

/// Lags in tie-break priority: 0, -1, +1, -2, +2, ...
pub fn lag_order(window_ms: u64) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=window_ms as i64).flat_map(|k| [-k, k]))
}

/// Estimate the audio/visual offset and re-timestamp the frames by it.
pub fn align(
    segment_id: SegmentId,
    audio: &AudioBuffer,
    frames: &[FrameRecord],
    cfg: &SyncConfig,
    now: Timestamp,
) -> Result<AlignedPair> {
    if audio.duration_ms() < 100 {
        return Err(Error::Dsp(format!(
            "alignment needs at least 100 ms of audio, got {} ms",
            audio.duration_ms()
        )));
    }
    let motion = mouth_motion_series(frames)?;
    let env = energy_envelope(audio, ENVELOPE_WINDOW_MS);
    let mut best: Option<(i64, f64)> = None;
    for lag in lag_order(cfg.window_ms) {
        if let Some(c) = ncc_at(&env, audio.start, &motion, lag) {
            if best.is_none_or(|(_, b)| c > b + 1e-12) {
                best = Some((lag, c));
            }
        }
    }
    let (offset_ms, confidence, low_confidence) = match best {
        Some((lag, c)) => (lag, c, c < 0.5),
        None => (0, 0.0, true),
    };
    let frames = frames
        .iter()
        .map(|f| FrameRecord {
            ts: f.ts.saturating_offset(-offset_ms),
            ..f.clone()
        })
        .collect();
    Ok(AlignedPair {
        segment_id,
        synth_audio: audio.clone(),
        frames,
        offset_ms,
        confidence,
        low_confidence,
        aligned_at: now,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResyncEvent {
    pub pair_index: u64,
    pub drift_ms: f64,
    pub anchor_offset_ms: i64,
}

/// Tracks accumulated audio/visual offset; fires a resync when the
/// estimate leaves `±drift_limit_ms`.
#[derive(Debug, Clone)]
pub struct DriftMonitor {
    mode: DriftMode,
    alpha: f64,
    limit: f64,
    ewma: f64,
    pairs: u64,
    anchor_offset_ms: i64,
}

impl DriftMonitor {
    pub fn new(cfg: &SyncConfig) -> Self {
        DriftMonitor {
            mode: cfg.drift_mode,
            alpha: cfg.ewma_alpha,
            limit: cfg.drift_limit_ms as f64,
            ewma: 0.0,
            pairs: 0,
            anchor_offset_ms: 0,
        }
    }

    pub fn estimate(&self) -> f64 {
        self.ewma
    }

    /// Offset future segments are measured against.
    pub fn anchor_offset_ms(&self) -> i64 {
        self.anchor_offset_ms
    }

    pub fn observe(&mut self, offset_ms: i64) -> Option<ResyncEvent> {
        self.pairs += 1;
        let x = offset_ms as f64;
        let drift = match self.mode {
            DriftMode::Ewma => {
                self.ewma = self.alpha * x + (1.0 - self.alpha) * self.ewma;
                self.ewma
            }
            DriftMode::Raw => x,
        };
        if drift.abs() > self.limit {
            self.ewma = 0.0;
            self.anchor_offset_ms += offset_ms;
            Some(ResyncEvent {
                pair_index: self.pairs,
                drift_ms: drift,
                anchor_offset_ms: self.anchor_offset_ms,
            })
        } else {
            None
        }
    }
}

pub fn drift_monitor(offsets: &[i64], cfg: &SyncConfig) -> Vec<ResyncEvent> {
    let mut m = DriftMonitor::new(cfg);
    offsets.iter().filter_map(|o| m.observe(*o)).collect()
}

/// Releases items in segment-birth order once every earlier registered
/// segment has completed or been dropped.
#[derive(Debug, Clone)]
pub struct ReorderBuffer<T> {
    outstanding: BTreeSet<SegmentId>,
    done: BTreeMap<SegmentId, Option<T>>,
}

impl<T> Default for ReorderBuffer<T> {
    fn default() -> Self {
        ReorderBuffer {
            outstanding: BTreeSet::new(),
            done: BTreeMap::new(),
        }
    }
}

fn birth_key(id: &SegmentId) -> (Timestamp, uuid::Uuid) {
    (id.birth, id.uuid)
}

impl<T> ReorderBuffer<T> {
    pub fn register(&mut self, id: SegmentId) {
        self.outstanding.insert(id);
    }

    pub fn pending(&self) -> usize {
        self.outstanding.len()
    }

    fn release(&mut self) -> Vec<T> {
        let mut out = Vec::new();
        while let Some(first) = self.outstanding.iter().min_by_key(|id| birth_key(id)).copied() {
            match self.done.remove(&first) {
                Some(item) => {
                    self.outstanding.remove(&first);
                    out.extend(item);
                }
                None => break,
            }
        }
        out
    }

    pub fn complete(&mut self, id: SegmentId, item: T) -> Vec<T> {
        if self.outstanding.contains(&id) {
            self.done.insert(id, Some(item));
            self.release()
        } else {
            vec![item]
        }
    }

    pub fn drop_segment(&mut self, id: SegmentId) -> Vec<T> {
        if self.outstanding.contains(&id) {
            self.done.insert(id, None);
        }
        self.release()
    }
}

/// Byte accounting for synthesized audio awaiting dispatch; the oldest
/// entries are evicted when the cap would be exceeded.
#[derive(Debug, Clone)]
pub struct PendingAudio {
    cap: u64,
    entries: VecDeque<(SegmentId, u64)>,
    used: u64,
    high_water: u64,
}

impl PendingAudio {
    pub fn new(cap: u64) -> Self {
        PendingAudio {
            cap,
            entries: VecDeque::new(),
            used: 0,
            high_water: 0,
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn high_water(&self) -> u64 {
        self.high_water
    }

    /// Admit `bytes` for `id`; returns the segments evicted to make room.
    pub fn admit(&mut self, id: SegmentId, bytes: u64) -> Vec<SegmentId> {
        let mut evicted = Vec::new();
        while self.used + bytes > self.cap {
            match self.entries.pop_front() {
                Some((old, b)) => {
                    self.used -= b;
                    evicted.push(old);
                }
                None => break,
            }
        }
        if bytes > self.cap {
            evicted.push(id);
            return evicted;
        }
        self.entries.push_back((id, bytes));
        self.used += bytes;
        self.high_water = self.high_water.max(self.used);
        evicted
    }

    pub fn contains(&self, id: &SegmentId) -> bool {
        self.entries.iter().any(|(e, _)| e == id)
    }

    pub fn release(&mut self, id: &SegmentId) {
        if let Some(pos) = self.entries.iter().position(|(e, _)| e == id) {
            let (_, b) = self.entries.remove(pos).unwrap();
            self.used -= b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Aligned,
    Resync,
    SyncFailure,
    DeadLetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts_ms: u64,
    pub kind: EventKind,
    pub segment: String,
    pub offset_ms: Option<i64>,
    pub latency_ms: Option<i64>,
}

impl Event {
    pub fn new(ts: Timestamp, kind: EventKind, segment: &SegmentId) -> Self {
        Event {
            ts_ms: ts.millis(),
            kind,
            segment: segment.uuid.to_string(),
            offset_ms: None,
            latency_ms: None,
        }
    }
}

pub fn write_events_ndjson<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
