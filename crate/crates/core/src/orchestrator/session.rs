use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{align, gather, sync_window, DriftMonitor, Event, EventKind, GatherOutcome, PendingAudio, ReorderBuffer, SyncConfig};
use crate::broker::{Broker, ConsumerId, DeliveryToken, Envelope, TryPublish};
use crate::error::{Error, Result};
use crate::media::{AudioBuffer, SegmentId};
use crate::pipeline::{DepthTracker, Outgoing, StageOutput, StageProfile, WorkHandler, AUDIO_OUTPUT_QUEUE, LIPSYNC_QUEUE};
use crate::time::Timestamp;
use crate::visual::mel::{mel_spectrogram, MelSpec, N_FFT, N_MELS};
use crate::visual::ring::FrameRing;
use crate::visual::stubs::{lipsync_service_ms, mock_lipsync, LipsyncEngine};
use crate::visual::FrameRecord;
use crate::wire::{Decoder, Encoder};

#[derive(Debug, Default)]
struct Progress {
    next_ts: Option<Timestamp>,
    finished: bool,
}

/// How far the visual branch has got: the timestamp of the next frame not
/// yet in the ring, or finished.
#[derive(Debug, Clone, Default)]
pub struct VisualProgress(Arc<Mutex<Progress>>);

impl VisualProgress {
    pub fn new() -> Self {
        Self::default()
    }

    /// A stream with no visual source at all.
    pub fn absent() -> Self {
        let v = Self::default();
        v.finish();
        v
    }

    pub fn set_next(&self, ts: Timestamp) {
        self.0.lock().unwrap().next_ts = Some(ts);
    }

    pub fn finish(&self) {
        self.0.lock().unwrap().finished = true;
    }

    pub fn is_finished(&self) -> bool {
        self.0.lock().unwrap().finished
    }

    /// Every frame with `ts <= hi` is already in the ring (or never will be).
    pub fn covers(&self, hi: Timestamp) -> bool {
        let p = self.0.lock().unwrap();
        p.finished || p.next_ts.is_some_and(|t| t > hi)
    }
}

fn encode_frames(e: &mut Encoder, frames: &[(u64, Timestamp)]) {
    e.u32(frames.len() as u32);
    for (j, ts) in frames {
        e.u64(*j).u64(ts.millis());
    }
}

fn decode_frames(d: &mut Decoder) -> Result<Vec<(u64, Timestamp)>> {
    let n = d.u32()? as usize;
    (0..n).map(|_| Ok((d.u64()?, Timestamp::from_millis(d.u64()?)))).collect()
}

/// Aligned audio/frame pair plus mel features, bound for lip sync.
#[derive(Debug, Clone, PartialEq)]
pub struct LipsyncJob {
    pub segment_id: SegmentId,
    pub synth_audio: AudioBuffer,
    pub frames: Vec<(u64, Timestamp)>,
    pub offset_ms: i64,
    pub low_confidence: bool,
    pub mel: Option<MelSpec>,
    pub source_duration_ms: u64,
    pub aligned_at: Timestamp,
}

impl LipsyncJob {
    pub fn byte_size(&self) -> u64 {
        self.synth_audio.byte_size() + self.frames.len() as u64 * 16 + self.mel.as_ref().map_or(0, |m| m.data.len() as u64 * 4)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.segment_id(&self.segment_id).audio(&self.synth_audio);
        encode_frames(&mut e, &self.frames);
        e.i64(self.offset_ms)
            .u8(self.low_confidence as u8)
            .u64(self.source_duration_ms)
            .u64(self.aligned_at.millis());
        match &self.mel {
            Some(m) => {
                let raw: Vec<u8> = m.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                e.u8(1).u32(m.n_frames as u32).u32(m.sample_rate).u64(m.start.millis()).bytes(&raw);
            }
            None => {
                e.u8(0);
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        let segment_id = d.segment_id()?;
        let synth_audio = d.audio()?;
        let frames = decode_frames(&mut d)?;
        let offset_ms = d.i64()?;
        let low_confidence = d.u8()? != 0;
        let source_duration_ms = d.u64()?;
        let aligned_at = Timestamp::from_millis(d.u64()?);
        let mel = match d.u8()? {
            0 => None,
            _ => {
                let n_frames = d.u32()? as usize;
                let sample_rate = d.u32()?;
                let start = Timestamp::from_millis(d.u64()?);
                let raw = d.bytes()?;
                if raw.len() != n_frames * N_MELS * 4 {
                    return Err(Error::Wire(format!("mel payload of {} bytes for {n_frames} frames", raw.len())));
                }
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                Some(MelSpec { data, n_frames, sample_rate, start })
            }
        };
        if !d.is_done() {
            return Err(Error::Wire("trailing bytes after lipsync job".into()));
        }
        Ok(LipsyncJob {
            segment_id,
            synth_audio,
            frames,
            offset_ms,
            low_confidence,
            mel,
            source_duration_ms,
            aligned_at,
        })
    }
}

/// Lip-synced output for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedSegment {
    pub segment_id: SegmentId,
    pub frames: Vec<(u64, Timestamp)>,
    pub offset_ms: i64,
    pub aligned_at: Timestamp,
    pub synced_at: Timestamp,
    pub lipsync_ms: u64,
}

impl SyncedSegment {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.segment_id(&self.segment_id);
        encode_frames(&mut e, &self.frames);
        e.i64(self.offset_ms)
            .u64(self.aligned_at.millis())
            .u64(self.synced_at.millis())
            .u64(self.lipsync_ms);
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        let out = SyncedSegment {
            segment_id: d.segment_id()?,
            frames: decode_frames(&mut d)?,
            offset_ms: d.i64()?,
            aligned_at: Timestamp::from_millis(d.u64()?),
            synced_at: Timestamp::from_millis(d.u64()?),
            lipsync_ms: d.u64()?,
        };
        if !d.is_done() {
            return Err(Error::Wire("trailing bytes after synced segment".into()));
        }
        Ok(out)
    }
}

/// Lip-sync stage: charges the profile plus the engine's per-frame cost.
pub struct LipsyncHandler {
    pub profile: StageProfile,
    pub engine: LipsyncEngine,
    /// Slack allowed between frames and the mel span.
    pub window_ms: u64,
}

impl LipsyncHandler {
    pub fn new(profile: StageProfile, engine: LipsyncEngine, sync: &SyncConfig) -> Self {
        // re-timing moves frames by up to the window, and the mel span
        // stops short of the audio end by less than one FFT
        let fft_ms = (N_FFT as u64 * 1000).div_ceil(16_000);
        LipsyncHandler {
            profile,
            engine,
            window_ms: 2 * sync.window_ms + fft_ms,
        }
    }

    fn cost(&self, job: &LipsyncJob) -> u64 {
        lipsync_service_ms(
            &self.profile,
            &self.engine,
            job.source_duration_ms,
            job.frames.len(),
            job.segment_id.uuid.as_u128(),
        )
    }
}

impl WorkHandler for LipsyncHandler {
    fn label(&self) -> String {
        format!("lipsync[{}]", self.engine.name)
    }

    fn service_ms(&mut self, payload: &[u8]) -> Result<u64> {
        Ok(self.cost(&LipsyncJob::decode(payload)?))
    }

    fn handle(&mut self, payload: &[u8], now: Timestamp) -> Result<Option<Outgoing>> {
        let job = LipsyncJob::decode(payload)?;
        if let Some(mel) = &job.mel {
            let frames: Vec<FrameRecord> = job.frames.iter().map(|(j, ts)| FrameRecord::new(*j, *ts)).collect();
            mock_lipsync(&frames, mel, &self.profile, &self.engine, self.window_ms)?;
        }
        let out = SyncedSegment {
            segment_id: job.segment_id,
            frames: job.frames.clone(),
            offset_ms: job.offset_ms,
            aligned_at: job.aligned_at,
            synced_at: now,
            lipsync_ms: self.cost(&job),
        };
        let bytes = out.encode();
        Ok(Some(Outgoing {
            segment_id: out.segment_id,
            size: bytes.len() as u64,
            bytes,
        }))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Completion {
    pub segment: SegmentId,
    pub released_at: Timestamp,
    pub emitted_at: Timestamp,
    pub offset_ms: i64,
    pub frames: usize,
    pub latency_ms: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SyncRecord {
    pub segment: SegmentId,
    pub delivered_at: Timestamp,
    pub ready_at: Timestamp,
    pub dispatched_at: Timestamp,
    pub attempts: u32,
    pub frames: usize,
    pub offset_ms: i64,
}

#[derive(Default)]
struct LogInner {
    released: std::collections::HashMap<SegmentId, Timestamp>,
    reorder: ReorderBuffer<(SyncedSegment, Timestamp)>,
    depth: DepthTracker,
    events: Vec<Event>,
    completions: Vec<Completion>,
    syncs: Vec<SyncRecord>,
    failures: Vec<SegmentId>,
}

impl LogInner {
    fn emit(&mut self, ready: Vec<(SyncedSegment, Timestamp)>, now: Timestamp) {
        for (s, _) in ready {
            let released_at = self.released.get(&s.segment_id).copied().unwrap_or(s.segment_id.birth);
            let latency_ms = now.since(released_at);
            self.depth.left(now);
            let mut ev = Event::new(now, EventKind::Aligned, &s.segment_id);
            ev.offset_ms = Some(s.offset_ms);
            ev.latency_ms = Some(latency_ms);
            self.events.push(ev);
            self.completions.push(Completion {
                segment: s.segment_id,
                released_at,
                emitted_at: now,
                offset_ms: s.offset_ms,
                frames: s.frames.len(),
                latency_ms,
            });
        }
    }
}

/// Shared record of a session: depth, events, emissions in birth order.
#[derive(Clone, Default)]
pub struct SessionLog(Arc<Mutex<LogInner>>);

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// A segment entered the pipeline (published to `audio_queue`).
    pub fn register(&self, id: SegmentId, at: Timestamp) {
        let mut g = self.0.lock().unwrap();
        g.released.insert(id, at);
        g.reorder.register(id);
        g.depth.entered(at);
    }

    pub fn complete(&self, seg: SyncedSegment, now: Timestamp) {
        let mut g = self.0.lock().unwrap();
        let id = seg.segment_id;
        let ready = g.reorder.complete(id, (seg, now));
        g.emit(ready, now);
    }

    /// The segment left the pipeline without output.
    pub fn fail(&self, id: SegmentId, kind: EventKind, now: Timestamp) {
        let mut g = self.0.lock().unwrap();
        g.events.push(Event::new(now, kind, &id));
        g.failures.push(id);
        g.depth.left(now);
        let ready = g.reorder.drop_segment(id);
        g.emit(ready, now);
    }

    pub fn event(&self, ev: Event) {
        self.0.lock().unwrap().events.push(ev);
    }

    fn sync(&self, rec: SyncRecord) {
        self.0.lock().unwrap().syncs.push(rec);
    }

    pub fn events(&self) -> Vec<Event> {
        self.0.lock().unwrap().events.clone()
    }

    pub fn completions(&self) -> Vec<Completion> {
        self.0.lock().unwrap().completions.clone()
    }

    pub fn syncs(&self) -> Vec<SyncRecord> {
        self.0.lock().unwrap().syncs.clone()
    }

    pub fn failures(&self) -> Vec<SegmentId> {
        self.0.lock().unwrap().failures.clone()
    }

    pub fn depth(&self) -> DepthTracker {
        self.0.lock().unwrap().depth.clone()
    }

    pub fn outstanding(&self) -> usize {
        self.0.lock().unwrap().reorder.pending()
    }
}

/// Terminal consumer of `synced_queue`.
pub struct SinkHandler(pub SessionLog);

impl WorkHandler for SinkHandler {
    fn label(&self) -> String {
        "sink".into()
    }

    fn service_ms(&mut self, payload: &[u8]) -> Result<u64> {
        SyncedSegment::decode(payload)?;
        Ok(0)
    }

    fn handle(&mut self, payload: &[u8], now: Timestamp) -> Result<Option<Outgoing>> {
        self.0.complete(SyncedSegment::decode(payload)?, now);
        Ok(None)
    }
}

struct Pending {
    token: DeliveryToken,
    output: StageOutput,
    delivered_at: Timestamp,
    attempts: u32,
    next_try: Timestamp,
}

struct OrchState {
    waiting: VecDeque<Pending>,
    busy: bool,
    held: Option<(DeliveryToken, Envelope)>,
    drift: DriftMonitor,
    audio: PendingAudio,
}

/// Single consumer of `audio_output_queue`. Segments are handled in
/// delivery order: wait until the visual branch covers the sync window,
/// gather (retrying with backoff when too few frames), align and compute
/// mel features, then publish to `lipsync_queue` and ack.
#[derive(Clone)]
pub struct Orchestrator {
    broker: Broker,
    cfg: Arc<SyncConfig>,
    ring: Arc<FrameRing>,
    visual: VisualProgress,
    log: SessionLog,
    consumer: ConsumerId,
    state: Arc<Mutex<OrchState>>,
}

impl Orchestrator {
    pub fn new(broker: &Broker, cfg: SyncConfig, ring: Arc<FrameRing>, visual: VisualProgress, log: SessionLog) -> Result<Self> {
        cfg.validate()?;
        let frame_bytes = ring.capacity() as u64 * cfg.geometry.frame_bytes();
        if frame_bytes > cfg.frame_buffer_bytes {
            return Err(Error::Config(format!(
                "frame ring needs {frame_bytes} bytes, cap is {}",
                cfg.frame_buffer_bytes
            )));
        }
        if !broker.is_declared(LIPSYNC_QUEUE) {
            return Err(Error::UndeclaredQueue(LIPSYNC_QUEUE.into()));
        }
        let consumer = broker.register_consumer(AUDIO_OUTPUT_QUEUE)?;
        Ok(Orchestrator {
            broker: broker.clone(),
            state: Arc::new(Mutex::new(OrchState {
                waiting: VecDeque::new(),
                busy: false,
                held: None,
                drift: DriftMonitor::new(&cfg),
                audio: PendingAudio::new(cfg.audio_buffer_bytes),
            })),
            cfg: Arc::new(cfg),
            ring,
            visual,
            log,
            consumer,
        })
    }

    pub fn audio_high_water(&self) -> u64 {
        self.state.lock().unwrap().audio.high_water()
    }

    pub fn is_idle(&self) -> bool {
        let st = self.state.lock().unwrap();
        !st.busy && st.waiting.is_empty() && st.held.is_none()
    }

    fn intake(&self, st: &mut OrchState, now: Timestamp) -> Result<bool> {
        let mut got = false;
        while let Some(d) = self.broker.try_consume(AUDIO_OUTPUT_QUEUE, self.consumer)? {
            got = true;
            let output = match StageOutput::decode(&d.envelope.payload) {
                Ok(o) if o.audio().is_some() => o,
                Ok(_) | Err(_) => {
                    log::error!("orchestrator: unusable message for {} dead-lettered", d.envelope.segment_id);
                    self.broker.dead_letter(d.token)?;
                    self.log.fail(d.envelope.segment_id, EventKind::DeadLetter, now);
                    continue;
                }
            };
            let bytes = output.audio().map_or(0, |a| a.byte_size());
            for evicted in st.audio.admit(output.segment_id, bytes) {
                let token = if evicted == output.segment_id {
                    Some(d.token)
                } else {
                    st.waiting
                        .iter()
                        .position(|p| p.output.segment_id == evicted)
                        .and_then(|i| st.waiting.remove(i))
                        .map(|p| p.token)
                };
                if let Some(token) = token {
                    log::warn!("audio buffer cap reached: {evicted} dead-lettered");
                    self.broker.dead_letter(token)?;
                    self.log.fail(evicted, EventKind::DeadLetter, now);
                }
            }
            if st.audio.contains(&output.segment_id) {
                st.waiting.push_back(Pending {
                    token: d.token,
                    output,
                    delivered_at: now,
                    attempts: 0,
                    next_try: now,
                });
            }
        }
        Ok(got)
    }

    /// Make whatever progress is possible at the current clock time.
    /// Returns whether anything changed.
    pub fn kick(&self) -> Result<bool> {
        let now = self.broker.clock().now();
        let mut st = self.state.lock().unwrap();
        let mut progressed = false;
        if let Some((token, env)) = st.held.take() {
            match self.broker.try_publish(LIPSYNC_QUEUE, env)? {
                TryPublish::Published(_) => {
                    self.broker.ack(token)?;
                    st.busy = false;
                    progressed = true;
                }
                TryPublish::WouldBlock(env) => {
                    st.held = Some((token, env));
                    return Ok(false);
                }
            }
        }
        progressed |= self.intake(&mut st, now)?;
        while !st.busy {
            let Some(head) = st.waiting.front() else { break };
            let audio = head.output.audio().expect("checked at intake");
            let (_, hi) = sync_window(audio.start, audio.end(), self.cfg.window_ms);
            if !self.visual.covers(hi) || now < head.next_try {
                break;
            }
            match gather(audio, &self.ring, &self.cfg) {
                GatherOutcome::Ready(frames) => {
                    let p = st.waiting.pop_front().unwrap();
                    self.start_sync(&mut st, p, frames, now);
                    progressed = true;
                }
                GatherOutcome::Insufficient { found } => {
                    let head = st.waiting.front_mut().unwrap();
                    if head.attempts < self.cfg.retry_attempts {
                        head.attempts += 1;
                        head.next_try = now + self.cfg.retry_delay_ms(head.attempts);
                        log::debug!(
                            "{}: {found} frames in window, retry {} at {}",
                            head.output.segment_id, head.attempts, head.next_try
                        );
                        self.broker.clock().schedule_at(head.next_try, Box::new(|_| {}));
                        progressed = true;
                        break;
                    }
                    let p = st.waiting.pop_front().unwrap();
                    log::warn!("{}: sync failure after {} retries", p.output.segment_id, p.attempts);
                    st.audio.release(&p.output.segment_id);
                    self.broker.dead_letter(p.token)?;
                    self.log.fail(p.output.segment_id, EventKind::SyncFailure, now);
                    progressed = true;
                }
            }
        }
        Ok(progressed)
    }

    fn start_sync(&self, st: &mut OrchState, p: Pending, frames: Vec<FrameRecord>, now: Timestamp) {
        st.busy = true;
        let this = self.clone();
        self.broker.clock().schedule_after(
            self.cfg.delta_sync_ms(),
            Box::new(move |at| {
                if let Err(e) = this.finish_sync(p, frames, now, at) {
                    log::error!("orchestrator: {e}");
                }
            }),
        );
    }

    fn finish_sync(&self, p: Pending, frames: Vec<FrameRecord>, ready_at: Timestamp, now: Timestamp) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        let id = p.output.segment_id;
        let audio = p.output.audio().expect("checked at intake");
        let (offset_ms, low_confidence, frames) = match align(id, audio, &frames, &self.cfg, now) {
            Ok(pair) => (pair.offset_ms, pair.low_confidence, pair.frames),
            Err(e) => {
                log::debug!("{id}: alignment skipped: {e}");
                (0, true, frames)
            }
        };
        if let Some(r) = st.drift.observe(offset_ms) {
            log::info!("{id}: resync, drift {:.1} ms", r.drift_ms);
            let mut ev = Event::new(now, EventKind::Resync, &id);
            ev.offset_ms = Some(r.anchor_offset_ms);
            self.log.event(ev);
        }
        let job = LipsyncJob {
            segment_id: id,
            synth_audio: audio.clone(),
            frames: frames.iter().map(|f| (f.frame_index, f.ts)).collect(),
            offset_ms,
            low_confidence,
            mel: mel_spectrogram(audio).ok(),
            source_duration_ms: p.output.source_duration_ms,
            aligned_at: now,
        };
        self.log.sync(SyncRecord {
            segment: id,
            delivered_at: p.delivered_at,
            ready_at,
            dispatched_at: now,
            attempts: p.attempts,
            frames: job.frames.len(),
            offset_ms,
        });
        st.audio.release(&id);
        let env = Envelope::with_size(id, job.encode(), job.byte_size());
        match self.broker.try_publish(LIPSYNC_QUEUE, env)? {
            TryPublish::Published(_) => {
                self.broker.ack(p.token)?;
                st.busy = false;
            }
            TryPublish::WouldBlock(env) => st.held = Some((p.token, env)),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::QueueConfig;
    use crate::media::{IdGenerator, LanguageCode, Segment};
    use crate::pipeline::{OutputKind, Payload, StageKind};
    use crate::time::MediaClock;

    fn setup() -> (Broker, SessionLog) {
        let b = Broker::new(MediaClock::new_virtual());
        for q in [AUDIO_OUTPUT_QUEUE, LIPSYNC_QUEUE] {
            let mut c = QueueConfig::new(q);
            c.prefetch = 8;
            b.declare(c).unwrap();
        }
        (b, SessionLog::new())
    }

    fn synth(id: SegmentId, start: u64, ms: u64) -> StageOutput {
        let seg = Segment {
            id,
            audio: AudioBuffer::new(vec![0; (ms * 16) as usize], 16_000, Timestamp::from_millis(start)).unwrap(),
            boundary_confidence: 1.0,
            forced_split: false,
            lang_src: LanguageCode::new("en"),
            lang_dst: LanguageCode::new("tr"),
        };
        let mut o = StageOutput::source(&seg, Timestamp::ZERO);
        o.kind = OutputKind::SynthAudio;
        o.payload = Payload::Audio(seg.audio.clone());
        o
    }

    fn drive(b: &Broker, o: &Orchestrator) {
        loop {
            while o.kick().unwrap() {}
            match b.clock().next_due() {
                Some(t) => {
                    b.clock().advance_to(t).unwrap();
                }
                None => break,
            }
        }
    }

    #[test]
    fn empty_ring_retries_then_fails() {
        let (b, log) = setup();
        let id = IdGenerator::new(1).segment_id(Timestamp::ZERO);
        log.register(id, Timestamp::ZERO);
        let o = Orchestrator::new(&b, SyncConfig::default(), Arc::new(FrameRing::default()), VisualProgress::absent(), log.clone()).unwrap();
        let out = synth(id, 0, 1000);
        b.publish(AUDIO_OUTPUT_QUEUE, Envelope::new(id, out.encode())).unwrap();
        drive(&b, &o);
        let ev = log.events();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::SyncFailure);
        assert_eq!(ev[0].ts_ms, 100 + 200 + 400);
        assert_eq!(b.queue_stats(&crate::broker::dlq_name(AUDIO_OUTPUT_QUEUE)).unwrap().depth, 1);
        assert_eq!(log.depth().current(), 0);
    }

    #[test]
    fn waits_for_visual_then_dispatches() {
        let (b, log) = setup();
        let ring = Arc::new(FrameRing::default());
        let vis = VisualProgress::new();
        vis.set_next(Timestamp::ZERO);
        let id = IdGenerator::new(2).segment_id(Timestamp::ZERO);
        log.register(id, Timestamp::ZERO);
        let o = Orchestrator::new(&b, SyncConfig::default(), ring.clone(), vis.clone(), log.clone()).unwrap();
        b.publish(AUDIO_OUTPUT_QUEUE, Envelope::new(id, synth(id, 0, 1000).encode())).unwrap();
        // frames arrive at 10 ms per frame
        for j in 0..40u64 {
            let (ring, vis) = (ring.clone(), vis.clone());
            b.clock().schedule_at(
                Timestamp::from_millis(10 * (j + 1)),
                Box::new(move |_| {
                    let mut f = FrameRecord::new(j, crate::visual::frame_ts(j, 30));
                    f.face_box = Some(crate::visual::FaceBox { cx: 1.0, cy: 1.0, w: 5.0, h: 5.0 });
                    ring.insert(f).unwrap();
                    vis.set_next(crate::visual::frame_ts(j + 1, 30));
                }),
            );
        }
        drive(&b, &o);
        let s = log.syncs();
        assert_eq!(s.len(), 1);
        // frame 31 (ts 1033) is the last inside [-50, 1050]
        assert_eq!(s[0].ready_at, Timestamp::from_millis(320));
        assert_eq!(s[0].dispatched_at, Timestamp::from_millis(328));
        assert_eq!(s[0].frames, 32);
        let jobs = b.peek_ready(LIPSYNC_QUEUE).unwrap();
        let job = LipsyncJob::decode(&jobs[0].payload).unwrap();
        assert_eq!(job.frames.len(), 32);
        assert!(job.mel.is_some());
    }

    #[test]
    fn job_and_synced_round_trip() {
        let id = IdGenerator::new(3).segment_id(Timestamp::from_millis(7));
        let audio = AudioBuffer::new((0..4000).map(|i| (i % 300) as i16).collect(), 16_000, Timestamp::from_millis(7)).unwrap();
        let job = LipsyncJob {
            segment_id: id,
            mel: Some(mel_spectrogram(&audio).unwrap()),
            synth_audio: audio,
            frames: vec![(1, Timestamp::from_millis(33)), (2, Timestamp::from_millis(66))],
            offset_ms: -12,
            low_confidence: false,
            source_duration_ms: 250,
            aligned_at: Timestamp::from_millis(99),
        };
        assert_eq!(LipsyncJob::decode(&job.encode()).unwrap(), job);
        let s = SyncedSegment {
            segment_id: id,
            frames: job.frames.clone(),
            offset_ms: 3,
            aligned_at: Timestamp::from_millis(1),
            synced_at: Timestamp::from_millis(2),
            lipsync_ms: 9,
        };
        assert_eq!(SyncedSegment::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn lipsync_handler_charges_engine() {
        let mut h = LipsyncHandler::new(StageProfile::new(StageKind::Lipsync, 10.0, 0.0), crate::visual::WAV2LIP_TRT_FP16, &SyncConfig::default());
        let id = IdGenerator::new(4).segment_id(Timestamp::ZERO);
        let job = LipsyncJob {
            segment_id: id,
            synth_audio: AudioBuffer::empty(16_000, Timestamp::ZERO),
            frames: (0..60).map(|j| (j, crate::visual::frame_ts(j, 30))).collect(),
            offset_ms: 0,
            low_confidence: true,
            mel: None,
            source_duration_ms: 2000,
            aligned_at: Timestamp::ZERO,
        };
        assert_eq!(h.service_ms(&job.encode()).unwrap(), (10.0f64 + 0.96 * 60.0).round() as u64);
        assert!(h.handle(&job.encode(), Timestamp::from_millis(68)).unwrap().is_some());
    }

    #[test]
    fn sink_emits_in_birth_order() {
        let log = SessionLog::new();
        let mut g = IdGenerator::new(5);
        let (a, b) = (g.segment_id(Timestamp::ZERO), g.segment_id(Timestamp::from_millis(2000)));
        log.register(a, Timestamp::ZERO);
        log.register(b, Timestamp::from_millis(15));
        let mk = |id| SyncedSegment {
            segment_id: id,
            frames: vec![],
            offset_ms: 0,
            aligned_at: Timestamp::ZERO,
            synced_at: Timestamp::ZERO,
            lipsync_ms: 0,
        };
        let mut sink = SinkHandler(log.clone());
        sink.handle(&mk(b).encode(), Timestamp::from_millis(500)).unwrap();
        assert!(log.completions().is_empty());
        sink.handle(&mk(a).encode(), Timestamp::from_millis(600)).unwrap();
        let c = log.completions();
        assert_eq!(c.iter().map(|c| c.segment).collect::<Vec<_>>(), [a, b]);
        assert_eq!(c[1].latency_ms, 585);
        assert_eq!(log.depth().current(), 0);
    }
}
