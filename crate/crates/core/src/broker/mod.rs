//! In-process message broker.
//!
//! Named queues with a byte budget, push-style round-robin delivery bounded
//! by per-consumer prefetch, manual acknowledgements, exponential-backoff
//! redelivery on nack and a `<name>.dlq` dead-letter queue. Every timing
//! decision goes through the [`MediaClock`], so virtual-clock runs replay
//! exactly.
//!
//! Budget accounting: a message's declared size is charged from publish
//! until it is acked or dead-lettered, including while it waits out a
//! backoff delay. Publishers block (never drop) while the budget is full.

pub mod journal;

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::media::SegmentId;
use crate::time::{MediaClock, Timestamp};
use journal::{FileJournal, JournalRecord, JournalSink, RecordKind};

pub const DEFAULT_BYTE_BUDGET: u64 = 256 * 1024 * 1024;
pub const DEFAULT_PREFETCH: usize = 2;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_BACKOFF_BASE_MS: u64 = 100;
pub const DEFAULT_BACKOFF_FACTOR: f64 = 2.0;

pub type ConsumerId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DeliveryToken(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishReceipt {
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub key: String,
    pub payload: Arc<[u8]>,
    pub declared_size: u64,
    pub segment_id: SegmentId,
    pub published_at: Timestamp,
    pub delivery_count: u32,
}

impl Envelope {
    /// Envelope whose declared size is the payload length.
    pub fn new(segment_id: SegmentId, payload: Vec<u8>) -> Self {
        let size = payload.len() as u64;
        Self::with_size(segment_id, payload, size)
    }

    /// Envelope charging `declared_size` bytes regardless of payload length.
    pub fn with_size(segment_id: SegmentId, payload: Vec<u8>, declared_size: u64) -> Self {
        Envelope {
            key: String::new(),
            payload: payload.into(),
            declared_size,
            segment_id,
            published_at: Timestamp::ZERO,
            delivery_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueConfig {
    pub name: String,
    pub byte_budget: u64,
    pub prefetch: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
}

impl QueueConfig {
    pub fn new(name: &str) -> Self {
        QueueConfig {
            name: name.to_string(),
            byte_budget: DEFAULT_BYTE_BUDGET,
            prefetch: DEFAULT_PREFETCH,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            backoff_base_ms: DEFAULT_BACKOFF_BASE_MS,
            backoff_factor: DEFAULT_BACKOFF_FACTOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prefetch < 1 {
            return Err(Error::Config(format!("{}: prefetch must be >= 1", self.name)));
        }
        if self.max_attempts < 1 {
            return Err(Error::Config(format!("{}: max_attempts must be >= 1", self.name)));
        }
        if self.byte_budget == 0 {
            return Err(Error::Config(format!("{}: byte_budget must be > 0", self.name)));
        }
        if !(self.backoff_factor > 1.0) {
            return Err(Error::Config(format!("{}: backoff_factor must be > 1", self.name)));
        }
        Ok(())
    }

    /// Redelivery delay after a nack of the `delivery_count`-th delivery.
    pub fn backoff_ms(&self, delivery_count: u32) -> u64 {
        let exp = delivery_count.saturating_sub(1) as i32;
        (self.backoff_base_ms as f64 * self.backoff_factor.powi(exp)).round() as u64
    }

    pub fn dlq_name(&self) -> String {
        dlq_name(&self.name)
    }
}

pub fn dlq_name(queue: &str) -> String {
    format!("{queue}.dlq")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    /// Unsettled messages: queued, waiting out a backoff, or in flight.
    pub depth: usize,
    pub bytes_used: u64,
    pub in_flight: usize,
    pub dead_lettered: u64,
    pub bytes_high_water: u64,
    pub published: u64,
    pub acked: u64,
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub token: DeliveryToken,
    pub envelope: Envelope,
}

pub enum TryPublish {
    Published(PublishReceipt),
    WouldBlock(Envelope),
}

#[derive(Debug)]
struct Consumer {
    id: ConsumerId,
    buffer: VecDeque<Delivery>,
    unacked: usize,
}

struct Queue {
    cfg: QueueConfig,
    ready: VecDeque<Envelope>,
    delayed: HashMap<u64, Envelope>,
    consumers: Vec<Consumer>,
    rr: usize,
    in_flight: usize,
    stats: QueueStats,
    journal: Option<Box<dyn JournalSink>>,
    /// Dead-letter queues accept without budget checks.
    unbounded: bool,
}

impl Queue {
    fn new(cfg: QueueConfig, journal: Option<Box<dyn JournalSink>>, unbounded: bool) -> Self {
        Queue {
            cfg,
            ready: VecDeque::new(),
            delayed: HashMap::new(),
            consumers: Vec::new(),
            rr: 0,
            in_flight: 0,
            stats: QueueStats::default(),
            journal,
            unbounded,
        }
    }

    fn journal(&mut self, kind: RecordKind, env: &Envelope, ts: Timestamp) -> Result<()> {
        if let Some(j) = self.journal.as_mut() {
            j.append(&JournalRecord {
                kind,
                id: env.segment_id.uuid,
                ts,
                payload: if kind == RecordKind::Publish {
                    env.payload.to_vec()
                } else {
                    Vec::new()
                },
            })?;
        }
        Ok(())
    }

    fn charge(&mut self, size: u64) {
        self.stats.bytes_used += size;
        self.stats.bytes_high_water = self.stats.bytes_high_water.max(self.stats.bytes_used);
    }

    fn fits(&self, size: u64) -> bool {
        self.unbounded || self.stats.bytes_used + size <= self.cfg.byte_budget
    }

    fn snapshot(&self) -> QueueStats {
        QueueStats {
            depth: self.ready.len() + self.delayed.len() + self.in_flight,
            in_flight: self.in_flight,
            ..self.stats
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TokenInfo {
    consumer: ConsumerId,
}

#[derive(Default)]
struct State {
    queues: HashMap<String, Queue>,
    tokens: HashMap<DeliveryToken, (String, TokenInfo, Envelope)>,
    next_token: u64,
    next_consumer: ConsumerId,
    next_delay_id: u64,
    next_publish: u64,
    shutdown: bool,
}

struct Inner {
    clock: MediaClock,
    state: Mutex<State>,
    changed: Condvar,
}

#[derive(Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker").finish_non_exhaustive()
    }
}

impl Broker {
    pub fn new(clock: MediaClock) -> Self {
        Broker {
            inner: Arc::new(Inner {
                clock,
                state: Mutex::new(State::default()),
                changed: Condvar::new(),
            }),
        }
    }

    pub fn clock(&self) -> &MediaClock {
        &self.inner.clock
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.state.lock().unwrap()
    }

    /// Declare a queue (and its dead-letter queue). Re-declaring is a no-op.
    pub fn declare(&self, cfg: QueueConfig) -> Result<()> {
        self.declare_inner(cfg, None, Vec::new())
    }

    /// Declare a queue journaled to `sink`.
    pub fn declare_journaled(&self, cfg: QueueConfig, sink: Box<dyn JournalSink>) -> Result<()> {
        self.declare_inner(cfg, Some(sink), Vec::new())
    }

    /// Declare a durable queue backed by a journal file. Messages the file
    /// records as published but never settled are re-enqueued in order.
    pub fn declare_durable(&self, cfg: QueueConfig, path: &Path) -> Result<usize> {
        let recovered = if path.exists() && std::fs::metadata(path)?.len() > 0 {
            journal::unsettled(&journal::decode_journal(&std::fs::read(path)?)?)
        } else {
            Vec::new()
        };
        let n = recovered.len();
        let sink = FileJournal::open(path)?;
        let envs = recovered
            .into_iter()
            .map(|r| {
                let mut env = Envelope::new(
                    SegmentId {
                        uuid: r.id,
                        birth: r.ts,
                    },
                    r.payload,
                );
                env.key = cfg.name.clone();
                env.published_at = r.ts;
                env
            })
            .collect();
        self.declare_inner(cfg, Some(Box::new(sink)), envs)?;
        Ok(n)
    }

    fn declare_inner(
        &self,
        cfg: QueueConfig,
        journal: Option<Box<dyn JournalSink>>,
        recovered: Vec<Envelope>,
    ) -> Result<()> {
        cfg.validate()?;
        let mut st = self.lock();
        if st.queues.contains_key(&cfg.name) {
            return Ok(());
        }
        let dlq_cfg = QueueConfig::new(&cfg.dlq_name());
        st.queues
            .entry(dlq_cfg.name.clone())
            .or_insert_with(|| Queue::new(dlq_cfg, None, true));
        let mut q = Queue::new(cfg, journal, false);
        for env in recovered {
            q.charge(env.declared_size);
            q.stats.published += 1;
            q.ready.push_back(env);
        }
        st.queues.insert(q.cfg.name.clone(), q);
        Ok(())
    }

    pub fn is_declared(&self, queue: &str) -> bool {
        self.lock().queues.contains_key(queue)
    }

    pub fn queue_config(&self, queue: &str) -> Result<QueueConfig> {
        let st = self.lock();
        st.queues
            .get(queue)
            .map(|q| q.cfg.clone())
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))
    }

    pub fn register_consumer(&self, queue: &str) -> Result<ConsumerId> {
        let mut st = self.lock();
        let id = st.next_consumer;
        let q = st
            .queues
            .get_mut(queue)
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))?;
        q.consumers.push(Consumer {
            id,
            buffer: VecDeque::new(),
            unacked: 0,
        });
        st.next_consumer += 1;
        Self::dispatch(&mut st, queue);
        drop(st);
        self.inner.changed.notify_all();
        Ok(id)
    }

    /// Remove a consumer; its unacknowledged deliveries return to the queue head.
    pub fn cancel_consumer(&self, queue: &str, consumer: ConsumerId) -> Result<()> {
        let mut st = self.lock();
        let st = &mut *st;
        let q = st
            .queues
            .get_mut(queue)
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))?;
        let Some(pos) = q.consumers.iter().position(|c| c.id == consumer) else {
            return Err(Error::UnknownConsumer {
                queue: queue.into(),
                consumer,
            });
        };
        q.consumers.remove(pos);
        if q.rr > pos {
            q.rr -= 1;
        }
        let mut returned: Vec<(DeliveryToken, Envelope)> = st
            .tokens
            .iter()
            .filter(|(_, (qn, info, _))| qn == queue && info.consumer == consumer)
            .map(|(t, (_, _, env))| (*t, env.clone()))
            .collect();
        returned.sort_by_key(|(t, _)| *t);
        for (t, _) in &returned {
            st.tokens.remove(t);
        }
        let q = st.queues.get_mut(queue).unwrap();
        q.in_flight -= returned.len();
        for (_, env) in returned.into_iter().rev() {
            q.ready.push_front(env);
        }
        Self::dispatch(st, queue);
        self.inner.changed.notify_all();
        Ok(())
    }

    /// Hand ready messages to consumers round-robin while they have credit.
    fn dispatch(st: &mut State, queue: &str) {
        let State {
            queues,
            tokens,
            next_token,
            ..
        } = st;
        let Some(q) = queues.get_mut(queue) else {
            return;
        };
        let n = q.consumers.len();
        if n == 0 {
            return;
        }
        while !q.ready.is_empty() {
            let prefetch = q.cfg.prefetch;
            let Some(k) = (0..n)
                .map(|i| (q.rr + i) % n)
                .find(|&i| q.consumers[i].unacked < prefetch)
            else {
                break;
            };
            let mut env = q.ready.pop_front().unwrap();
            env.delivery_count += 1;
            let token = DeliveryToken(*next_token);
            *next_token += 1;
            let c = &mut q.consumers[k];
            c.unacked += 1;
            c.buffer.push_back(Delivery {
                token,
                envelope: env.clone(),
            });
            tokens.insert(token, (queue.to_string(), TokenInfo { consumer: c.id }, env));
            q.in_flight += 1;
            q.rr = (k + 1) % n;
        }
    }

    fn publish_locked(
        st: &mut State,
        now: Timestamp,
        queue: &str,
        mut env: Envelope,
    ) -> Result<PublishReceipt> {
        let seq = st.next_publish;
        st.next_publish += 1;
        let q = st.queues.get_mut(queue).unwrap();
        env.key = queue.to_string();
        env.published_at = now;
        env.delivery_count = 0;
        q.journal(RecordKind::Publish, &env, now)?;
        q.charge(env.declared_size);
        q.stats.published += 1;
        q.ready.push_back(env);
        Self::dispatch(st, queue);
        Ok(PublishReceipt { seq })
    }

    fn check_publishable(st: &State, queue: &str, env: &Envelope) -> Result<()> {
        let q = st
            .queues
            .get(queue)
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))?;
        if !q.unbounded && env.declared_size > q.cfg.byte_budget {
            return Err(Error::MessageTooLarge {
                queue: queue.into(),
                size: env.declared_size,
                budget: q.cfg.byte_budget,
            });
        }
        Ok(())
    }

    /// Enqueue, blocking while the queue's byte budget cannot take the message.
    pub fn publish(&self, queue: &str, env: Envelope) -> Result<PublishReceipt> {
        let mut st = self.lock();
        Self::check_publishable(&st, queue, &env)?;
        loop {
            if st.shutdown {
                return Err(Error::Shutdown);
            }
            if st.queues[queue].fits(env.declared_size) {
                break;
            }
            st = self.inner.changed.wait(st).unwrap();
        }
        let now = self.inner.clock.now();
        let r = Self::publish_locked(&mut st, now, queue, env)?;
        drop(st);
        self.inner.changed.notify_all();
        Ok(r)
    }

    /// Non-blocking publish; hands the envelope back when the budget is full.
    pub fn try_publish(&self, queue: &str, env: Envelope) -> Result<TryPublish> {
        let mut st = self.lock();
        Self::check_publishable(&st, queue, &env)?;
        if st.shutdown {
            return Err(Error::Shutdown);
        }
        if !st.queues[queue].fits(env.declared_size) {
            return Ok(TryPublish::WouldBlock(env));
        }
        let now = self.inner.clock.now();
        let r = Self::publish_locked(&mut st, now, queue, env)?;
        drop(st);
        self.inner.changed.notify_all();
        Ok(TryPublish::Published(r))
    }

    fn take_delivery(st: &mut State, queue: &str, consumer: ConsumerId) -> Result<Option<Delivery>> {
        let q = st
            .queues
            .get_mut(queue)
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))?;
        let c = q
            .consumers
            .iter_mut()
            .find(|c| c.id == consumer)
            .ok_or_else(|| Error::UnknownConsumer {
                queue: queue.into(),
                consumer,
            })?;
        Ok(c.buffer.pop_front())
    }

    /// Next delivery for `consumer`, blocking while none is assigned to it.
    pub fn consume(&self, queue: &str, consumer: ConsumerId) -> Result<Delivery> {
        let mut st = self.lock();
        loop {
            if let Some(d) = Self::take_delivery(&mut st, queue, consumer)? {
                return Ok(d);
            }
            if st.shutdown {
                return Err(Error::Shutdown);
            }
            st = self.inner.changed.wait(st).unwrap();
        }
    }

    pub fn try_consume(&self, queue: &str, consumer: ConsumerId) -> Result<Option<Delivery>> {
        let mut st = self.lock();
        Self::take_delivery(&mut st, queue, consumer)
    }

    fn settle_token(st: &mut State, token: DeliveryToken) -> Result<(String, Envelope)> {
        let (queue, info, env) = st.tokens.remove(&token).ok_or(Error::UnknownToken(token.0))?;
        let q = st.queues.get_mut(&queue).unwrap();
        q.in_flight -= 1;
        if let Some(c) = q.consumers.iter_mut().find(|c| c.id == info.consumer) {
            c.unacked -= 1;
            // an undelivered buffered copy cannot be settled; drop it if present
            c.buffer.retain(|d| d.token != token);
        }
        Ok((queue, env))
    }

    pub fn ack(&self, token: DeliveryToken) -> Result<()> {
        let mut st = self.lock();
        let (queue, env) = Self::settle_token(&mut st, token)?;
        let now = self.inner.clock.now();
        let q = st.queues.get_mut(&queue).unwrap();
        q.stats.bytes_used -= env.declared_size;
        q.stats.acked += 1;
        q.journal(RecordKind::Ack, &env, now)?;
        Self::dispatch(&mut st, &queue);
        drop(st);
        self.inner.changed.notify_all();
        Ok(())
    }

    /// Negative acknowledgement: redeliver after backoff, or dead-letter once
    /// the message has been delivered `max_attempts` times.
    pub fn nack(&self, token: DeliveryToken) -> Result<()> {
        let mut st = self.lock();
        let (queue, env) = Self::settle_token(&mut st, token)?;
        let now = self.inner.clock.now();
        let cfg = st.queues[&queue].cfg.clone();
        if env.delivery_count >= cfg.max_attempts {
            Self::dead_letter_locked(&mut st, &queue, env, now)?;
            Self::dispatch(&mut st, &queue);
        } else {
            let delay = cfg.backoff_ms(env.delivery_count);
            let id = st.next_delay_id;
            st.next_delay_id += 1;
            st.queues.get_mut(&queue).unwrap().delayed.insert(id, env);
            let weak: Weak<Inner> = Arc::downgrade(&self.inner);
            let qname = queue.clone();
            self.inner.clock.schedule_at(
                now + delay,
                Box::new(move |_| {
                    if let Some(inner) = weak.upgrade() {
                        Broker { inner }.requeue(&qname, id);
                    }
                }),
            );
        }
        drop(st);
        self.inner.changed.notify_all();
        Ok(())
    }

    /// Move an in-flight delivery straight to the dead-letter queue.
    pub fn dead_letter(&self, token: DeliveryToken) -> Result<()> {
        let mut st = self.lock();
        let (queue, env) = Self::settle_token(&mut st, token)?;
        let now = self.inner.clock.now();
        Self::dead_letter_locked(&mut st, &queue, env, now)?;
        Self::dispatch(&mut st, &queue);
        drop(st);
        self.inner.changed.notify_all();
        Ok(())
    }

    fn dead_letter_locked(st: &mut State, queue: &str, env: Envelope, now: Timestamp) -> Result<()> {
        let q = st.queues.get_mut(queue).unwrap();
        q.stats.bytes_used -= env.declared_size;
        q.stats.dead_lettered += 1;
        q.journal(RecordKind::DeadLetter, &env, now)?;
        let dlq = dlq_name(queue);
        let dq = st.queues.get_mut(&dlq).unwrap();
        dq.charge(env.declared_size);
        dq.stats.published += 1;
        dq.ready.push_back(env);
        Self::dispatch(st, &dlq);
        Ok(())
    }

    fn requeue(&self, queue: &str, delay_id: u64) {
        let mut st = self.lock();
        let Some(q) = st.queues.get_mut(queue) else {
            return;
        };
        if let Some(env) = q.delayed.remove(&delay_id) {
            q.ready.push_front(env);
            Self::dispatch(&mut st, queue);
        }
        drop(st);
        self.inner.changed.notify_all();
    }

    pub fn queue_stats(&self, queue: &str) -> Result<QueueStats> {
        let st = self.lock();
        st.queues
            .get(queue)
            .map(Queue::snapshot)
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))
    }

    /// Messages currently waiting in a queue (undelivered, not delayed).
    pub fn peek_ready(&self, queue: &str) -> Result<Vec<Envelope>> {
        let st = self.lock();
        st.queues
            .get(queue)
            .map(|q| q.ready.iter().cloned().collect())
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))
    }

    /// Unacknowledged deliveries currently held by `consumer`.
    pub fn unacked(&self, queue: &str, consumer: ConsumerId) -> Result<usize> {
        let st = self.lock();
        let q = st
            .queues
            .get(queue)
            .ok_or_else(|| Error::UndeclaredQueue(queue.into()))?;
        q.consumers
            .iter()
            .find(|c| c.id == consumer)
            .map(|c| c.unacked)
            .ok_or_else(|| Error::UnknownConsumer {
                queue: queue.into(),
                consumer,
            })
    }

    /// Wake every blocked publisher/consumer with `Error::Shutdown`.
    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.inner.changed.notify_all();
    }

    pub fn is_shutdown(&self) -> bool {
        self.lock().shutdown
    }
}
