use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{synthetic_hints, ClipInput, Mode, Scenario};
use crate::broker::{Broker, Envelope, QueueConfig, TryPublish};
use crate::error::{Error, Result};
use crate::media::{AudioBuffer, Segment};
use crate::orchestrator::{
    align, sync_window, Event, EventKind, LipsyncHandler, Orchestrator, SessionLog, SinkHandler, VisualProgress,
};
use crate::pipeline::{
    MockStage, Stage, StageHandler, StageOutput, StageWorker, AUDIO_OUTPUT_QUEUE, AUDIO_QUEUE, LIPSYNC_QUEUE,
    SYNCED_QUEUE, TEXT_QUEUE, TRANSLATION_QUEUE,
};
use crate::segmenter::{segment_all, SegmentEvent, Segmenter, SegmenterConfig, SegmenterStats};
use crate::time::{MediaClock, Timestamp};
use crate::visual::mel::mel_spectrogram;
use crate::visual::ring::FrameRing;
use crate::visual::stubs::{lipsync_service_ms, FaceDetector};
use crate::visual::FrameRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockChoice {
    Virtual,
    /// Wall clock; gives up after the timeout.
    Real { timeout_ms: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentTiming {
    pub segment: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub released_ms: u64,
    pub emitted_ms: Option<u64>,
    pub latency_ms: Option<i64>,
    pub frames: usize,
    pub offset_ms: Option<i64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub mode: Mode,
    pub clip_ms: u64,
    pub latency_ms: u64,
    pub segments: Vec<SegmentTiming>,
    pub sync_failures: usize,
    #[serde(skip)]
    pub events: Vec<Event>,
    pub depth_avg: Option<f64>,
    pub depth_peak: Option<i64>,
    pub peak_memory_bytes: u64,
    pub queue_peak_bytes: u64,
    pub delta_sync_ms: Vec<u64>,
    pub inter_output_ms: Vec<u64>,
    pub segmenter: SegmenterStats,
}

fn stage(scn: &Scenario, kind: crate::pipeline::StageKind) -> MockStage {
    let profile = match kind {
        crate::pipeline::StageKind::Stt => scn.stt.clone(),
        crate::pipeline::StageKind::Mt => scn.mt.clone(),
        _ => scn.tts.clone(),
    };
    MockStage {
        profile,
        tts_ratio: scn.tts_ratio,
        sample_rate: scn.sample_rate,
    }
}

/// Segment a recording the way the runs do: no live transcript is available,
/// so every candidate pause is offered to the scorer as sentence-final.
pub fn segment_clip(cfg: SegmenterConfig, clip: &AudioBuffer, seed: u64) -> Result<(Vec<SegmentEvent>, SegmenterStats)> {
    let seg = Segmenter::from_config(cfg, clip.sample_rate, seed)?.with_hints(synthetic_hints());
    Ok(segment_all(seg, clip))
}

/// Sequential execution: each segment runs segmentation, ASR, MT, TTS,
/// inline face detection, alignment and lip sync before the next starts.
pub fn run_baseline(scn: &Scenario, clip_ms: u64, seed: u64) -> Result<RunOutcome> {
    run_baseline_on(scn, &ClipInput::synthetic(scn, clip_ms), seed)
}

pub fn run_baseline_on(scn: &Scenario, input: &ClipInput, seed: u64) -> Result<RunOutcome> {
    scn.validate()?;
    let mut scn = scn.reseeded(seed);
    scn.sample_rate = input.audio.sample_rate;
    let clock = MediaClock::new_virtual();
    let (clip, frames, clip_ms) = (&input.audio, &input.frames, input.duration_ms());
    let seg_cfg = SegmenterConfig {
        lang_src: scn.segmenter.lang_src.clone(),
        lang_dst: scn.segmenter.lang_dst.clone(),
        ..SegmenterConfig::baseline()
    };
    let (events, seg_stats) = segment_clip(seg_cfg, clip, seed)?;
    let mut stages = [
        stage(&scn, crate::pipeline::StageKind::Stt),
        stage(&scn, crate::pipeline::StageKind::Mt),
        stage(&scn, crate::pipeline::StageKind::Tts),
    ];
    let mut detector = FaceDetector::new(scn.face_detect_ms, seed);
    let frame_bytes = scn.sync.geometry.frame_bytes();
    clock.advance(scn.baseline_setup_ms)?;

    let mut out = RunOutcome {
        mode: Mode::Baseline,
        clip_ms,
        latency_ms: 0,
        segments: Vec::new(),
        sync_failures: 0,
        events: Vec::new(),
        depth_avg: None,
        depth_peak: None,
        peak_memory_bytes: 0,
        queue_peak_bytes: 0,
        delta_sync_ms: Vec::new(),
        inter_output_ms: Vec::new(),
        segmenter: seg_stats,
    };
    let mut last_emit: Option<u64> = None;
    for ev in &events {
        let seg = &ev.segment;
        let released = clock.now();
        let mut item = StageOutput::source(seg, released);
        for st in stages.iter_mut() {
            clock.advance(st.service_ms(&item))?;
            item = st.process(&item, clock.now())?;
        }
        let synth = item.audio().cloned().ok_or_else(|| Error::Bench("tts produced no audio".into()))?;
        let (lo, hi) = sync_window(synth.start, synth.end(), scn.sync.window_ms);
        let window: Vec<FrameRecord> = frames.iter().filter(|f| f.ts >= lo && f.ts <= hi).cloned().collect();
        clock.advance((scn.face_detect_ms * window.len() as f64).round() as u64)?;
        let detected = window.into_iter().map(|f| detector.detect(f)).collect::<Result<Vec<_>>>()?;
        out.peak_memory_bytes = out
            .peak_memory_bytes
            .max(detected.len() as u64 * frame_bytes + seg.audio.byte_size() + synth.byte_size());
        let mut timing = SegmentTiming {
            segment: seg.id.uuid.to_string(),
            start_ms: seg.start().millis(),
            end_ms: seg.end().millis(),
            released_ms: released.millis(),
            emitted_ms: None,
            latency_ms: None,
            frames: detected.len(),
            offset_ms: None,
        };
        if detected.len() < scn.sync.min_frames {
            out.sync_failures += 1;
            out.events.push(Event::new(clock.now(), EventKind::SyncFailure, &seg.id));
            out.segments.push(timing);
            continue;
        }
        clock.advance(scn.sync.delta_sync_ms())?;
        out.delta_sync_ms.push(scn.sync.delta_sync_ms());
        let offset = align(seg.id, &synth, &detected, &scn.sync, clock.now()).map_or(0, |p| p.offset_ms);
        let _mel = mel_spectrogram(&synth).ok();
        clock.advance(lipsync_service_ms(
            &scn.lipsync,
            &scn.baseline_engine,
            item.source_duration_ms,
            detected.len(),
            seg.id.uuid.as_u128(),
        ))?;
        let now = clock.now().millis();
        if let Some(prev) = last_emit {
            out.inter_output_ms.push(now - prev);
        }
        last_emit = Some(now);
        let mut e = Event::new(clock.now(), EventKind::Aligned, &seg.id);
        e.offset_ms = Some(offset);
        e.latency_ms = Some(now as i64 - released.millis() as i64);
        out.events.push(e);
        timing.emitted_ms = Some(now);
        timing.latency_ms = Some(now as i64 - released.millis() as i64);
        timing.offset_ms = Some(offset);
        out.segments.push(timing);
    }
    out.latency_ms = clock.now().millis();
    Ok(out)
}

/// Segments waiting for their release time (scorer latency) before being
/// published to `audio_queue`.
#[derive(Clone)]
struct Source {
    broker: Broker,
    log: SessionLog,
    queue: Arc<Mutex<VecDeque<(Timestamp, Segment)>>>,
}

impl Source {
    fn kick(&self) -> Result<bool> {
        let now = self.broker.clock().now();
        let mut q = self.queue.lock().unwrap();
        let mut progressed = false;
        while let Some((at, seg)) = q.front() {
            if *at > now {
                break;
            }
            let out = StageOutput::source(seg, now);
            let env = Envelope::with_size(seg.id, out.encode(), out.byte_size());
            match self.broker.try_publish(AUDIO_QUEUE, env)? {
                TryPublish::Published(_) => {
                    self.log.register(seg.id, now);
                    q.pop_front();
                    progressed = true;
                }
                TryPublish::WouldBlock(_) => break,
            }
        }
        Ok(progressed)
    }

    fn is_empty(&self) -> bool {
        self.queue.lock().unwrap().is_empty()
    }
}

struct VisualFeed {
    clock: MediaClock,
    frames: Vec<FrameRecord>,
    detector: Mutex<FaceDetector>,
    ring: Arc<FrameRing>,
    progress: VisualProgress,
}

/// Detect frame `j` after its service time, then chain to `j + 1`.
fn detect_from(feed: Arc<VisualFeed>, j: usize) {
    if j >= feed.frames.len() {
        feed.progress.finish();
        return;
    }
    let svc = feed.detector.lock().unwrap().service_ms(j as u64);
    let f = feed.clone();
    feed.clock.schedule_after(
        svc,
        Box::new(move |_| {
            let rec = f.detector.lock().unwrap().detect(f.frames[j].clone());
            match rec.and_then(|r| f.ring.insert(r)) {
                Ok(_) => {}
                Err(e) => log::error!("face detection on frame {j}: {e}"),
            }
            match f.frames.get(j + 1) {
                Some(next) => f.progress.set_next(next.ts),
                None => f.progress.finish(),
            }
            detect_from(f.clone(), j + 1);
        }),
    );
}

type Kick = Box<dyn Fn() -> Result<bool>>;

/// Full system: segmenter -> broker -> STT/MT/TTS workers, the visual
/// branch in parallel, orchestrator, lip sync and an ordered sink.
pub fn run_pipeline(scn: &Scenario, clip_ms: u64, seed: u64, clock_choice: ClockChoice) -> Result<RunOutcome> {
    run_pipeline_on(scn, &ClipInput::synthetic(scn, clip_ms), seed, clock_choice)
}

pub fn run_pipeline_on(scn: &Scenario, input: &ClipInput, seed: u64, clock_choice: ClockChoice) -> Result<RunOutcome> {
    scn.validate()?;
    let mut scn = scn.reseeded(seed);
    scn.sample_rate = input.audio.sample_rate;
    let clip_ms = input.duration_ms();
    let clock = match clock_choice {
        ClockChoice::Virtual => MediaClock::new_virtual(),
        ClockChoice::Real { .. } => MediaClock::new_real(),
    };
    let broker = Broker::new(clock.clone());
    let queues = [AUDIO_QUEUE, TEXT_QUEUE, TRANSLATION_QUEUE, AUDIO_OUTPUT_QUEUE, LIPSYNC_QUEUE, SYNCED_QUEUE];
    for q in queues {
        let mut c = QueueConfig::new(q);
        c.prefetch = scn.prefetch;
        broker.declare(c)?;
    }
    let (events, seg_stats) = segment_clip(scn.segmenter.clone(), &input.audio, seed)?;
    let log = SessionLog::new();
    let source = Source {
        broker: broker.clone(),
        log: log.clone(),
        queue: Arc::new(Mutex::new(
            events
                .iter()
                .map(|e| (Timestamp::from_millis(e.scorer_elapsed_ms), e.segment.clone()))
                .collect(),
        )),
    };
    let start = clock.now();
    for e in &events {
        clock.schedule_at(start + e.scorer_elapsed_ms, Box::new(|_| {}));
    }

    let ring = Arc::new(FrameRing::default());
    let progress = VisualProgress::new();
    let frames = input.frames.clone();
    match frames.first() {
        Some(f) => progress.set_next(f.ts),
        None => progress.finish(),
    }
    let feed = Arc::new(VisualFeed {
        clock: clock.clone(),
        frames,
        detector: Mutex::new(FaceDetector::new(scn.face_detect_ms, seed)),
        ring: ring.clone(),
        progress: progress.clone(),
    });
    detect_from(feed, 0);

    let mut workers = Vec::new();
    for (kind, i, o) in [
        (crate::pipeline::StageKind::Stt, AUDIO_QUEUE, TEXT_QUEUE),
        (crate::pipeline::StageKind::Mt, TEXT_QUEUE, TRANSLATION_QUEUE),
        (crate::pipeline::StageKind::Tts, TRANSLATION_QUEUE, AUDIO_OUTPUT_QUEUE),
    ] {
        workers.push(StageWorker::new(&broker, Box::new(StageHandler(Box::new(stage(&scn, kind)))), i, Some(o))?);
    }
    let orch = Orchestrator::new(&broker, scn.sync.clone(), ring.clone(), progress, log.clone())?;
    let lipsync = LipsyncHandler::new(scn.lipsync.clone(), scn.pipeline_engine, &scn.sync);
    workers.push(StageWorker::new(&broker, Box::new(lipsync), LIPSYNC_QUEUE, Some(SYNCED_QUEUE))?);
    workers.push(StageWorker::new(&broker, Box::new(SinkHandler(log.clone())), SYNCED_QUEUE, None)?);

    let mut kicks: Vec<Kick> = Vec::new();
    let s = source.clone();
    kicks.push(Box::new(move || s.kick()));
    for w in workers.iter().take(3).cloned() {
        kicks.push(Box::new(move || w.kick()));
    }
    let o = orch.clone();
    kicks.push(Box::new(move || o.kick()));
    for w in workers.iter().skip(3).cloned() {
        kicks.push(Box::new(move || w.kick()));
    }
    let kick_all = || -> Result<()> {
        loop {
            let mut any = false;
            for k in &kicks {
                any |= k()?;
            }
            if !any {
                return Ok(());
            }
        }
    };

    match clock_choice {
        ClockChoice::Virtual => loop {
            kick_all()?;
            match clock.next_due() {
                Some(t) => {
                    clock.advance_to(t)?;
                }
                None => break,
            }
        },
        ClockChoice::Real { timeout_ms } => {
            let deadline = Instant::now() + Duration::from_millis(timeout_ms);
            loop {
                kick_all()?;
                if source.is_empty() && log.outstanding() == 0 {
                    break;
                }
                if Instant::now() > deadline {
                    return Err(Error::Bench(format!("real-clock run exceeded {timeout_ms} ms")));
                }
                std::thread::sleep(Duration::from_millis(1));
            }
        }
    }
    broker.shutdown();
    if log.outstanding() != 0 || !source.is_empty() {
        return Err(Error::Bench(format!(
            "pipeline stalled with {} segments outstanding",
            log.outstanding()
        )));
    }

    let completions = log.completions();
    let ev = log.events();
    let end = completions
        .iter()
        .map(|c| c.emitted_at)
        .chain(ev.iter().map(|e| Timestamp::from_millis(e.ts_ms)))
        .max()
        .unwrap_or(start);
    let syncs = log.syncs();
    let depth = log.depth();
    let mut queue_peak = 0;
    for q in queues {
        queue_peak += broker.queue_stats(q)?.bytes_high_water;
    }
    let peak_memory = queue_peak + ring.high_water() as u64 * scn.sync.geometry.frame_bytes() + orch.audio_high_water();
    let segments = events
        .iter()
        .map(|e| {
            let c = completions.iter().find(|c| c.segment == e.segment.id);
            let s = syncs.iter().find(|s| s.segment == e.segment.id);
            SegmentTiming {
                segment: e.segment.id.uuid.to_string(),
                start_ms: e.segment.start().millis(),
                end_ms: e.segment.end().millis(),
                released_ms: start.millis() + e.scorer_elapsed_ms,
                emitted_ms: c.map(|c| c.emitted_at.millis()),
                latency_ms: c.map(|c| c.latency_ms),
                frames: s.map_or(0, |s| s.frames),
                offset_ms: c.map(|c| c.offset_ms),
            }
        })
        .collect();
    Ok(RunOutcome {
        mode: Mode::Pipeline,
        clip_ms,
        latency_ms: end.since(start).max(0) as u64,
        segments,
        sync_failures: ev.iter().filter(|e| e.kind == EventKind::SyncFailure).count(),
        events: ev,
        depth_avg: Some(depth.time_average(100, end)),
        depth_peak: Some(depth.peak()),
        peak_memory_bytes: peak_memory,
        queue_peak_bytes: queue_peak,
        delta_sync_ms: syncs.iter().map(|s| s.dispatched_at.since(s.ready_at) as u64).collect(),
        inter_output_ms: completions
            .windows(2)
            .map(|w| w[1].emitted_at.since(w[0].emitted_at) as u64)
            .collect(),
        segmenter: seg_stats,
    })
}
