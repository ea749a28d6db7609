//! Stream timestamps and the media clock.
//!
//! All timing in the system flows through [`MediaClock`]. In virtual mode
//! time only moves on explicit [`MediaClock::advance`] calls and timers fire
//! in `(due, registration order)` order, which makes whole-pipeline runs
//! replayable bit-for-bit.

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Milliseconds since the per-run stream epoch.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    /// Signed difference `self - earlier` in milliseconds.
    pub fn since(self, earlier: Timestamp) -> i64 {
        self.0 as i64 - earlier.0 as i64
    }

    /// Shift by a signed amount; `None` if the result would precede the epoch.
    pub fn checked_offset(self, delta_ms: i64) -> Option<Timestamp> {
        let v = self.0 as i64 + delta_ms;
        (v >= 0).then_some(Timestamp(v as u64))
    }

    /// Shift by a signed amount, clamping at the epoch.
    pub fn saturating_offset(self, delta_ms: i64) -> Timestamp {
        Timestamp((self.0 as i64 + delta_ms).max(0) as u64)
    }
}

impl Add<u64> for Timestamp {
    type Output = Timestamp;
    fn add(self, ms: u64) -> Timestamp {
        Timestamp(self.0 + ms)
    }
}

impl Sub for Timestamp {
    type Output = i64;
    fn sub(self, rhs: Timestamp) -> i64 {
        self.since(rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Real,
    Virtual,
}

pub type TimerCallback = Box<dyn FnOnce(Timestamp) + Send>;

struct Timer {
    due: Timestamp,
    seq: u64,
    callback: TimerCallback,
}

impl PartialEq for Timer {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}
impl Eq for Timer {}
impl PartialOrd for Timer {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timer {
    // min-heap on (due, seq)
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (other.due, other.seq).cmp(&(self.due, self.seq))
    }
}

#[derive(Default)]
struct VirtualState {
    now: Timestamp,
    next_seq: u64,
    timers: BinaryHeap<Timer>,
}

struct RealState {
    epoch: Instant,
    last: Mutex<Timestamp>,
}

enum Inner {
    Real(RealState),
    Virtual(Mutex<VirtualState>),
}

/// Shared clock service. Cheap to clone; clones observe the same time.
#[derive(Clone)]
pub struct MediaClock {
    inner: Arc<Inner>,
}

impl fmt::Debug for MediaClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MediaClock")
            .field("mode", &self.mode())
            .field("now", &self.now())
            .finish()
    }
}

impl MediaClock {
    pub fn new_virtual() -> Self {
        MediaClock {
            inner: Arc::new(Inner::Virtual(Mutex::new(VirtualState::default()))),
        }
    }

    pub fn new_real() -> Self {
        MediaClock {
            inner: Arc::new(Inner::Real(RealState {
                epoch: Instant::now(),
                last: Mutex::new(Timestamp::ZERO),
            })),
        }
    }

    pub fn mode(&self) -> ClockMode {
        match &*self.inner {
            Inner::Real(_) => ClockMode::Real,
            Inner::Virtual(_) => ClockMode::Virtual,
        }
    }

    pub fn is_virtual(&self) -> bool {
        self.mode() == ClockMode::Virtual
    }

    pub fn now(&self) -> Timestamp {
        match &*self.inner {
            Inner::Real(r) => {
                let ms = r.epoch.elapsed().as_millis() as u64;
                let mut last = r.last.lock().unwrap();
                // monotone even if the platform clock misbehaves
                if ms > last.0 {
                    *last = Timestamp(ms);
                }
                *last
            }
            Inner::Virtual(v) => v.lock().unwrap().now,
        }
    }

    /// Register `callback` to run once the clock reaches `due`.
    ///
    /// Virtual mode: the callback runs inside a later `advance` call (or
    /// never, if time never reaches `due`). Real mode: a helper thread
    /// sleeps until `due` and runs it.
    pub fn schedule_at(&self, due: Timestamp, callback: TimerCallback) {
        match &*self.inner {
            Inner::Virtual(v) => {
                let mut st = v.lock().unwrap();
                let seq = st.next_seq;
                st.next_seq += 1;
                st.timers.push(Timer { due, seq, callback });
            }
            Inner::Real(_) => {
                let clock = self.clone();
                std::thread::spawn(move || {
                    let now = clock.now();
                    if due > now {
                        std::thread::sleep(Duration::from_millis(due.since(now) as u64));
                    }
                    callback(clock.now());
                });
            }
        }
    }

    pub fn schedule_after(&self, delay_ms: u64, callback: TimerCallback) {
        let due = self.now() + delay_ms;
        self.schedule_at(due, callback);
    }

    /// Due time of the earliest pending virtual timer.
    pub fn next_due(&self) -> Option<Timestamp> {
        match &*self.inner {
            Inner::Virtual(v) => v.lock().unwrap().timers.peek().map(|t| t.due),
            Inner::Real(_) => None,
        }
    }

    pub fn pending_timers(&self) -> usize {
        match &*self.inner {
            Inner::Virtual(v) => v.lock().unwrap().timers.len(),
            Inner::Real(_) => 0,
        }
    }

    /// Move virtual time forward by exactly `delta_ms`, firing every timer
    /// due at or before the new time in `(due, registration)` order.
    /// Timers registered by callbacks fire in the same call when due.
    pub fn advance(&self, delta_ms: u64) -> Result<Timestamp> {
        let Inner::Virtual(v) = &*self.inner else {
            return Err(Error::Clock("advance called on a real-mode clock".into()));
        };
        let target = v.lock().unwrap().now + delta_ms;
        loop {
            let fired = {
                let mut st = v.lock().unwrap();
                match st.timers.peek() {
                    Some(t) if t.due <= target => {
                        let t = st.timers.pop().unwrap();
                        if t.due > st.now {
                            st.now = t.due;
                        }
                        Some((st.now, t.callback))
                    }
                    _ => {
                        st.now = target;
                        None
                    }
                }
            };
            match fired {
                // callbacks run without the clock lock held
                Some((at, cb)) => cb(at),
                None => return Ok(target),
            }
        }
    }

    /// Advance to an absolute virtual time (no-op if already past it).
    pub fn advance_to(&self, target: Timestamp) -> Result<Timestamp> {
        let now = self.now();
        self.advance(target.millis().saturating_sub(now.millis()))
    }

    /// Real mode: block the calling thread for `ms` wall milliseconds.
    /// Virtual mode: a usage error; virtual time is driven externally.
    pub fn sleep(&self, ms: u64) -> Result<()> {
        match &*self.inner {
            Inner::Real(_) => {
                std::thread::sleep(Duration::from_millis(ms));
                Ok(())
            }
            Inner::Virtual(_) => Err(Error::Clock(
                "sleep on a virtual clock; advance it from the driver instead".into(),
            )),
        }
    }
}

/// One-shot latch a timer callback can release; used by real-mode waiters.
#[derive(Clone, Default)]
pub struct Latch {
    inner: Arc<(Mutex<bool>, Condvar)>,
}

impl Latch {
    pub fn release(&self) {
        let (m, cv) = &*self.inner;
        *m.lock().unwrap() = true;
        cv.notify_all();
    }

    pub fn wait(&self) {
        let (m, cv) = &*self.inner;
        let mut done = m.lock().unwrap();
        while !*done {
            done = cv.wait(done).unwrap();
        }
    }

    pub fn is_released(&self) -> bool {
        *self.inner.0.lock().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BinaryHeap;
    use std::cmp::Reverse;

    #[test]
    fn advance_is_additive() {
        let clock = MediaClock::new_virtual();
        assert_eq!(clock.advance(50).unwrap(), Timestamp::from_millis(50));
        assert_eq!(clock.now(), Timestamp::from_millis(50));
    }

    #[test]
    fn zero_advance_keeps_time() {
        let clock = MediaClock::new_virtual();
        clock.advance(100).unwrap();
        assert_eq!(clock.advance(0).unwrap(), Timestamp::from_millis(100));
        assert_eq!(clock.now(), clock.now());
    }

    #[test]
    fn real_clock_rejects_advance() {
        let clock = MediaClock::new_real();
        assert!(clock.advance(10).is_err());
        let a = clock.now();
        let b = clock.now();
        assert!(b >= a);
    }

    #[test]
    fn timers_fire_in_due_order() {
        let clock = MediaClock::new_virtual();
        let log = Arc::new(Mutex::new(Vec::new()));
        for due in [70u64, 30] {
            let log = log.clone();
            clock.schedule_at(
                Timestamp::from_millis(due),
                Box::new(move |at| log.lock().unwrap().push((due, at.millis()))),
            );
        }
        clock.advance(100).unwrap();
        assert_eq!(*log.lock().unwrap(), vec![(30, 30), (70, 70)]);
        assert_eq!(clock.now().millis(), 100);
    }

    #[test]
    fn timer_not_due_stays_pending() {
        let clock = MediaClock::new_virtual();
        clock.schedule_at(Timestamp::from_millis(200), Box::new(|_| panic!("early")));
        clock.advance(199).unwrap();
        assert_eq!(clock.pending_timers(), 1);
        assert_eq!(clock.next_due(), Some(Timestamp::from_millis(200)));
    }

    #[test]
    fn callbacks_may_schedule_more_timers() {
        let clock = MediaClock::new_virtual();
        let log = Arc::new(Mutex::new(Vec::new()));
        let (c2, l2) = (clock.clone(), log.clone());
        clock.schedule_at(
            Timestamp::from_millis(10),
            Box::new(move |at| {
                l2.lock().unwrap().push(at.millis());
                let l3 = l2.clone();
                c2.schedule_after(5, Box::new(move |at| l3.lock().unwrap().push(at.millis())));
            }),
        );
        clock.advance(20).unwrap();
        assert_eq!(*log.lock().unwrap(), vec![10, 15]);
    }

    /// Random timer sets replayed against a plain sorted-heap oracle.
    #[test]
    fn firing_order_matches_heap_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let clock = MediaClock::new_virtual();
            let log = Arc::new(Mutex::new(Vec::new()));
            let mut oracle = BinaryHeap::new();
            for id in 0..40u64 {
                let due: u64 = rng.random_range(0..60);
                oracle.push(Reverse((due, id)));
                let log = log.clone();
                clock.schedule_at(
                    Timestamp::from_millis(due),
                    Box::new(move |_| log.lock().unwrap().push(id)),
                );
            }
            clock.advance(100).unwrap();
            let mut expected = Vec::new();
            while let Some(Reverse((_, id))) = oracle.pop() {
                expected.push(id);
            }
            assert_eq!(*log.lock().unwrap(), expected);
        }
    }

    #[test]
    fn timestamp_arithmetic() {
        let a = Timestamp::from_millis(1000);
        let b = Timestamp::from_millis(1250);
        assert_eq!(b - a, 250);
        assert_eq!(a - b, -250);
        assert_eq!(a.checked_offset(-1001), None);
        assert_eq!(a.saturating_offset(-5000), Timestamp::ZERO);
        assert_eq!((a + 1) + 2, a + 3);
    }
}
