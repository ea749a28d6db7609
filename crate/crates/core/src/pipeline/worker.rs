use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{Stage, StageOutput};
use crate::broker::{Broker, ConsumerId, DeliveryToken, Envelope, TryPublish};
use crate::error::{Error, Result};
use crate::media::SegmentId;
use crate::time::{Latch, MediaClock, Timestamp};

/// Message produced by a handler, ready to publish downstream.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub segment_id: SegmentId,
    pub bytes: Vec<u8>,
    pub size: u64,
}

/// Byte-level body of a queue worker.
pub trait WorkHandler: Send {
    fn label(&self) -> String;
    /// Simulated compute time for this message.
    fn service_ms(&mut self, payload: &[u8]) -> Result<u64>;
    fn handle(&mut self, payload: &[u8], now: Timestamp) -> Result<Option<Outgoing>>;
}

/// Adapts a [`Stage`] to the byte-level worker interface.
pub struct StageHandler(pub Box<dyn Stage>);

impl WorkHandler for StageHandler {
    fn label(&self) -> String {
        self.0.kind().to_string()
    }

    fn service_ms(&mut self, payload: &[u8]) -> Result<u64> {
        Ok(self.0.service_ms(&StageOutput::decode(payload)?))
    }

    fn handle(&mut self, payload: &[u8], now: Timestamp) -> Result<Option<Outgoing>> {
        let input = StageOutput::decode(payload)?;
        let out = self.0.process(&input, now)?;
        Ok(Some(Outgoing {
            segment_id: out.segment_id,
            size: out.byte_size(),
            bytes: out.encode(),
        }))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorkerSummary {
    pub processed: u64,
    pub failed: u64,
    pub busy_ms: u64,
    pub internal_errors: u64,
}

fn run_handler(
    handler: &mut dyn WorkHandler,
    payload: &[u8],
    now: Timestamp,
) -> Result<Option<Outgoing>> {
    match catch_unwind(AssertUnwindSafe(|| handler.handle(payload, now))) {
        Ok(r) => r,
        Err(panic) => {
            let reason = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(Error::Stage {
                stage: handler.label(),
                reason,
            })
        }
    }
}

struct WorkerState {
    handler: Box<dyn WorkHandler>,
    busy: bool,
    held: Option<(DeliveryToken, Envelope)>,
    summary: WorkerSummary,
}

/// Event-driven worker for virtual-clock runs: `kick` starts the next
/// delivery when idle, and a clock timer completes it after the service
/// time. Completion publishes downstream and then acks; failures nack.
#[derive(Clone)]
pub struct StageWorker {
    state: Arc<Mutex<WorkerState>>,
    broker: Broker,
    in_q: Arc<str>,
    out_q: Option<Arc<str>>,
    consumer: ConsumerId,
}

impl StageWorker {
    pub fn new(
        broker: &Broker,
        handler: Box<dyn WorkHandler>,
        in_q: &str,
        out_q: Option<&str>,
    ) -> Result<Self> {
        let consumer = broker.register_consumer(in_q)?;
        if let Some(q) = out_q {
            if !broker.is_declared(q) {
                return Err(Error::UndeclaredQueue(q.into()));
            }
        }
        Ok(StageWorker {
            state: Arc::new(Mutex::new(WorkerState {
                handler,
                busy: false,
                held: None,
                summary: WorkerSummary::default(),
            })),
            broker: broker.clone(),
            in_q: in_q.into(),
            out_q: out_q.map(Into::into),
            consumer,
        })
    }

    pub fn consumer(&self) -> ConsumerId {
        self.consumer
    }

    pub fn is_busy(&self) -> bool {
        self.state.lock().unwrap().busy
    }

    pub fn summary(&self) -> WorkerSummary {
        self.state.lock().unwrap().summary
    }

    /// Start the next delivery if idle. Returns whether work started.
    pub fn kick(&self) -> Result<bool> {
        let mut st = self.state.lock().unwrap();
        if let Some((token, env)) = st.held.take() {
            let q = self.out_q.as_deref().expect("held output without an out queue");
            match self.broker.try_publish(q, env)? {
                TryPublish::Published(_) => {
                    self.broker.ack(token)?;
                    st.busy = false;
                }
                TryPublish::WouldBlock(env) => {
                    st.held = Some((token, env));
                    return Ok(false);
                }
            }
        }
        if st.busy {
            return Ok(false);
        }
        let Some(delivery) = self.broker.try_consume(&self.in_q, self.consumer)? else {
            return Ok(false);
        };
        let service = match st.handler.service_ms(&delivery.envelope.payload) {
            Ok(s) => s,
            Err(e) => {
                log::error!("{}: undecodable message dead-lettered: {e}", st.handler.label());
                st.summary.failed += 1;
                self.broker.dead_letter(delivery.token)?;
                return Ok(false);
            }
        };
        st.busy = true;
        st.summary.busy_ms += service;
        drop(st);
        let this = self.clone();
        self.broker.clock().schedule_after(
            service,
            Box::new(move |now| {
                if let Err(e) = this.complete(delivery.token, &delivery.envelope, now) {
                    log::error!("worker on {}: {e}", this.in_q);
                    this.state.lock().unwrap().summary.internal_errors += 1;
                }
            }),
        );
        Ok(true)
    }

    fn complete(&self, token: DeliveryToken, env: &Envelope, now: Timestamp) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        let result = run_handler(st.handler.as_mut(), &env.payload, now);
        match result {
            Ok(out) => {
                st.summary.processed += 1;
                match (out, self.out_q.as_deref()) {
                    (Some(out), Some(q)) => {
                        let env = Envelope::with_size(out.segment_id, out.bytes, out.size);
                        match self.broker.try_publish(q, env)? {
                            TryPublish::Published(_) => self.broker.ack(token)?,
                            TryPublish::WouldBlock(env) => {
                                st.held = Some((token, env));
                                return Ok(());
                            }
                        }
                    }
                    _ => self.broker.ack(token)?,
                }
            }
            Err(e) => {
                log::warn!("{} failed on {}: {e}", st.handler.label(), env.segment_id);
                st.summary.failed += 1;
                self.broker.nack(token)?;
            }
        }
        st.busy = false;
        Ok(())
    }
}

/// Block the calling thread for `ms` of clock time. On a virtual clock the
/// wait ends when a driver advances past the deadline.
pub fn clock_wait(clock: &MediaClock, ms: u64) -> Result<()> {
    if !clock.is_virtual() {
        return clock.sleep(ms);
    }
    if ms == 0 {
        return Ok(());
    }
    let latch = Latch::default();
    let l = latch.clone();
    clock.schedule_after(ms, Box::new(move |_| l.release()));
    latch.wait();
    Ok(())
}

/// Thread-based service loop: consume, charge service time, process,
/// publish, then ack; failures (including panics) nack. Returns when the
/// broker shuts down.
pub fn run_stage_worker(
    broker: &Broker,
    mut handler: Box<dyn WorkHandler>,
    in_q: &str,
    out_q: Option<&str>,
) -> Result<WorkerSummary> {
    let consumer = broker.register_consumer(in_q)?;
    let mut summary = WorkerSummary::default();
    loop {
        let delivery = match broker.consume(in_q, consumer) {
            Ok(d) => d,
            Err(Error::Shutdown) => return Ok(summary),
            Err(e) => return Err(e),
        };
        let service = match handler.service_ms(&delivery.envelope.payload) {
            Ok(s) => s,
            Err(e) => {
                log::error!("{}: undecodable message dead-lettered: {e}", handler.label());
                summary.failed += 1;
                broker.dead_letter(delivery.token)?;
                continue;
            }
        };
        clock_wait(broker.clock(), service)?;
        summary.busy_ms += service;
        let now = broker.clock().now();
        match run_handler(handler.as_mut(), &delivery.envelope.payload, now) {
            Ok(out) => {
                summary.processed += 1;
                if let (Some(out), Some(q)) = (out, out_q) {
                    match broker.publish(q, Envelope::with_size(out.segment_id, out.bytes, out.size)) {
                        Ok(_) => {}
                        Err(Error::Shutdown) => return Ok(summary),
                        Err(e) => return Err(e),
                    }
                }
                broker.ack(delivery.token)?;
            }
            Err(e) => {
                log::warn!("{} failed: {e}", handler.label());
                summary.failed += 1;
                broker.nack(delivery.token)?;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::QueueConfig;
    use crate::media::{AudioBuffer, IdGenerator, LanguageCode, Segment};
    use crate::pipeline::{FailingStage, MockStage, OutputKind, StageKind, StageProfile, AUDIO_QUEUE, TEXT_QUEUE};

    fn segment(ms: u64, seed: u64) -> Segment {
        let audio = AudioBuffer::new(vec![7; (ms * 16) as usize], 16_000, Timestamp::ZERO).unwrap();
        Segment {
            id: IdGenerator::new(seed).segment_id(Timestamp::ZERO),
            audio,
            boundary_confidence: 1.0,
            forced_split: false,
            lang_src: LanguageCode::new("en"),
            lang_dst: LanguageCode::new("tr"),
        }
    }

    fn setup(max_attempts: u32) -> Broker {
        let b = Broker::new(MediaClock::new_virtual());
        for q in [AUDIO_QUEUE, TEXT_QUEUE] {
            let mut cfg = QueueConfig::new(q);
            cfg.max_attempts = max_attempts;
            b.declare(cfg).unwrap();
        }
        b
    }

    fn publish(b: &Broker, seg: &Segment) {
        let out = StageOutput::source(seg, b.clock().now());
        b.publish(AUDIO_QUEUE, Envelope::with_size(seg.id, out.encode(), out.byte_size())).unwrap();
    }

    fn drive(b: &Broker, workers: &[StageWorker]) {
        loop {
            for w in workers {
                w.kick().unwrap();
            }
            match b.clock().next_due() {
                Some(t) => {
                    b.clock().advance_to(t).unwrap();
                }
                None => break,
            }
        }
    }

    #[test]
    fn mock_stt_publishes_after_profile_time() {
        let b = setup(3);
        let stt = MockStage::new(StageProfile::new(StageKind::Stt, 200.0, 600.0));
        let w = StageWorker::new(&b, Box::new(StageHandler(Box::new(stt))), AUDIO_QUEUE, Some(TEXT_QUEUE)).unwrap();
        let sink = b.register_consumer(TEXT_QUEUE).unwrap();
        publish(&b, &segment(2000, 1));
        w.kick().unwrap();
        b.clock().advance(1399).unwrap();
        assert!(b.try_consume(TEXT_QUEUE, sink).unwrap().is_none());
        b.clock().advance(1).unwrap();
        let d = b.try_consume(TEXT_QUEUE, sink).unwrap().unwrap();
        let out = StageOutput::decode(&d.envelope.payload).unwrap();
        assert_eq!(out.kind, OutputKind::Transcript);
        assert_eq!(out.produced_at, Timestamp::from_millis(1400));
        assert_eq!(b.queue_stats(AUDIO_QUEUE).unwrap().depth, 0);
    }

    #[test]
    fn failing_stage_dead_letters_and_moves_on() {
        let b = setup(3);
        let bad = FailingStage {
            profile: StageProfile::new(StageKind::Stt, 10.0, 0.0),
            panic: false,
        };
        let w = StageWorker::new(&b, Box::new(StageHandler(Box::new(bad))), AUDIO_QUEUE, Some(TEXT_QUEUE)).unwrap();
        publish(&b, &segment(500, 1));
        publish(&b, &segment(500, 2));
        drive(&b, &[w.clone()]);
        let s = b.queue_stats(AUDIO_QUEUE).unwrap();
        assert_eq!(s.dead_lettered, 2);
        assert_eq!(s.depth, 0);
        assert_eq!(b.queue_stats("audio_queue.dlq").unwrap().depth, 2);
        assert_eq!(w.summary().failed, 6);
    }

    #[test]
    fn panicking_stage_is_nacked() {
        let b = setup(1);
        let bad = FailingStage {
            profile: StageProfile::new(StageKind::Stt, 10.0, 0.0),
            panic: true,
        };
        let w = StageWorker::new(&b, Box::new(StageHandler(Box::new(bad))), AUDIO_QUEUE, Some(TEXT_QUEUE)).unwrap();
        publish(&b, &segment(500, 1));
        drive(&b, &[w.clone()]);
        assert_eq!(b.queue_stats(AUDIO_QUEUE).unwrap().dead_lettered, 1);
    }

    #[test]
    fn idle_worker_schedules_nothing() {
        let b = setup(3);
        let stt = MockStage::new(StageProfile::new(StageKind::Stt, 1.0, 1.0));
        let w = StageWorker::new(&b, Box::new(StageHandler(Box::new(stt))), AUDIO_QUEUE, Some(TEXT_QUEUE)).unwrap();
        assert!(!w.kick().unwrap());
        assert_eq!(b.clock().pending_timers(), 0);
        assert_eq!(b.clock().now(), Timestamp::ZERO);
    }

    #[test]
    fn threaded_worker_on_virtual_clock() {
        let b = setup(3);
        let stt = MockStage::new(StageProfile::new(StageKind::Stt, 100.0, 0.0));
        let bw = b.clone();
        let h = std::thread::spawn(move || {
            run_stage_worker(&bw, Box::new(StageHandler(Box::new(stt))), AUDIO_QUEUE, Some(TEXT_QUEUE))
        });
        let sink = b.register_consumer(TEXT_QUEUE).unwrap();
        publish(&b, &segment(300, 1));
        while b.clock().pending_timers() == 0 {
            std::thread::yield_now();
        }
        b.clock().advance(100).unwrap();
        let d = b.consume(TEXT_QUEUE, sink).unwrap();
        assert_eq!(StageOutput::decode(&d.envelope.payload).unwrap().produced_at.millis(), 100);
        b.shutdown();
        let summary = h.join().unwrap().unwrap();
        assert_eq!(summary.processed, 1);
    }
}
