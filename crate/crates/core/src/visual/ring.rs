use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::time::Timestamp;

use super::frames::FrameRecord;

pub const RING_CAPACITY: usize = 300;

struct RingInner {
    slots: Vec<Option<FrameRecord>>,
    /// Index of the oldest record.
    head: usize,
    len: usize,
    last_ts: Option<Timestamp>,
    high_water: usize,
}

/// Fixed-capacity circular frame store; single writer, many readers.
pub struct FrameRing {
    capacity: usize,
    inner: RwLock<RingInner>,
}

impl std::fmt::Debug for FrameRing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameRing")
            .field("capacity", &self.capacity)
            .field("len", &self.len())
            .finish()
    }
}

impl Default for FrameRing {
    fn default() -> Self {
        FrameRing::new(RING_CAPACITY)
    }
}

impl FrameRing {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        FrameRing {
            capacity,
            inner: RwLock::new(RingInner {
                slots: vec![None; capacity],
                head: 0,
                len: 0,
                last_ts: None,
                high_water: 0,
            }),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn high_water(&self) -> usize {
        self.inner.read().unwrap().high_water
    }

    pub fn last_ts(&self) -> Option<Timestamp> {
        self.inner.read().unwrap().last_ts
    }

    pub fn oldest_ts(&self) -> Option<Timestamp> {
        let g = self.inner.read().unwrap();
        (g.len > 0).then(|| g.slots[g.head].as_ref().unwrap().ts)
    }

    /// O(1) insert; returns the evicted record when the ring was full.
    pub fn insert(&self, rec: FrameRecord) -> Result<Option<FrameRecord>> {
        let mut g = self.inner.write().unwrap();
        if let Some(last) = g.last_ts {
            if rec.ts <= last {
                return Err(Error::OutOfOrderFrame { ts: rec.ts, last });
            }
        }
        g.last_ts = Some(rec.ts);
        let cap = self.capacity;
        if g.len == cap {
            let head = g.head;
            let evicted = g.slots[head].replace(rec);
            g.head = (head + 1) % cap;
            Ok(evicted)
        } else {
            let idx = (g.head + g.len) % cap;
            g.slots[idx] = Some(rec);
            g.len += 1;
            g.high_water = g.high_water.max(g.len);
            Ok(None)
        }
    }

    /// Records with `lo <= ts <= hi`, oldest first.
    pub fn window(&self, lo: Timestamp, hi: Timestamp) -> Vec<FrameRecord> {
        let g = self.inner.read().unwrap();
        (0..g.len)
            .map(|i| g.slots[(g.head + i) % self.capacity].as_ref().unwrap())
            .skip_while(|r| r.ts < lo)
            .take_while(|r| r.ts <= hi)
            .cloned()
            .collect()
    }

    pub fn count_in(&self, lo: Timestamp, hi: Timestamp) -> usize {
        let g = self.inner.read().unwrap();
        (0..g.len)
            .map(|i| g.slots[(g.head + i) % self.capacity].as_ref().unwrap().ts)
            .filter(|t| *t >= lo && *t <= hi)
            .count()
    }
}

pub fn ring_insert(ring: &FrameRing, rec: FrameRecord) -> Result<Option<FrameRecord>> {
    ring.insert(rec)
}

pub fn ring_window(ring: &FrameRing, lo: Timestamp, hi: Timestamp) -> Vec<FrameRecord> {
    ring.window(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visual::frames::frame_ts;

    fn rec(j: u64) -> FrameRecord {
        FrameRecord::new(j, frame_ts(j, 30))
    }

    #[test]
    fn three_hundred_and_one_evicts_first() {
        let ring = FrameRing::default();
        for j in 0..300 {
            assert!(ring.insert(rec(j)).unwrap().is_none());
        }
        let ev = ring.insert(rec(300)).unwrap().unwrap();
        assert_eq!(ev.frame_index, 0);
        assert_eq!(ring.len(), 300);
        let all = ring.window(Timestamp::ZERO, Timestamp::from_millis(u64::MAX / 2));
        assert_eq!(all.first().unwrap().frame_index, 1);
        assert_eq!(all.last().unwrap().frame_index, 300);
    }

    #[test]
    fn point_window() {
        let ring = FrameRing::default();
        for j in 0..10 {
            ring.insert(rec(j)).unwrap();
        }
        let t = frame_ts(4, 30);
        let w = ring.window(t, t);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].frame_index, 4);
    }

    #[test]
    fn hundred_ms_span_has_three_or_four_frames() {
        let ring = FrameRing::default();
        for j in 0..300 {
            ring.insert(rec(j)).unwrap();
        }
        for lo in (0..9_800).step_by(7) {
            let lo_t = Timestamp::from_millis(lo);
            let n = ring.window(lo_t, lo_t + 100).len();
            // independent count over the 33/34 ms cadence
            let expected = (0..300u64).filter(|j| (lo..=lo + 100).contains(&(j * 1000 / 30))).count();
            assert_eq!(n, expected);
            assert!(n == 3 || n == 4, "{n} at {lo}");
        }
    }

    #[test]
    fn out_of_order_rejected() {
        let ring = FrameRing::default();
        ring.insert(rec(5)).unwrap();
        assert!(matches!(ring.insert(rec(5)), Err(Error::OutOfOrderFrame { .. })));
        assert!(ring.insert(rec(4)).is_err());
    }
}
