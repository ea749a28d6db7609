use crate::time::Timestamp;

/// Segments published to `audio_queue` but not yet emitted, as a step
/// function of time.
#[derive(Debug, Clone, Default)]
pub struct DepthTracker {
    changes: Vec<(Timestamp, i64)>,
    current: i64,
}

impl DepthTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entered(&mut self, at: Timestamp) {
        self.current += 1;
        self.changes.push((at, 1));
    }

    pub fn left(&mut self, at: Timestamp) {
        self.current -= 1;
        self.changes.push((at, -1));
    }

    /// Current depth (`pipeline_depth`).
    pub fn current(&self) -> i64 {
        self.current
    }

    /// Depth as of `t`, counting every change at or before `t`.
    pub fn at(&self, t: Timestamp) -> i64 {
        self.changes.iter().filter(|(ts, _)| *ts <= t).map(|(_, d)| d).sum()
    }

    /// Samples at 0, period, 2·period, ... while `t < until`.
    pub fn samples(&self, period_ms: u64, until: Timestamp) -> Vec<(Timestamp, i64)> {
        let mut sorted = self.changes.clone();
        sorted.sort_by_key(|(t, _)| *t);
        let mut out = Vec::new();
        let (mut i, mut depth) = (0, 0i64);
        let mut t = Timestamp::ZERO;
        while t < until {
            while i < sorted.len() && sorted[i].0 <= t {
                depth += sorted[i].1;
                i += 1;
            }
            out.push((t, depth));
            t = t + period_ms.max(1);
        }
        out
    }

    /// Mean of the periodic samples over `[0, until)`.
    pub fn time_average(&self, period_ms: u64, until: Timestamp) -> f64 {
        let s = self.samples(period_ms, until);
        if s.is_empty() {
            return 0.0;
        }
        s.iter().map(|(_, d)| *d as f64).sum::<f64>() / s.len() as f64
    }

    pub fn peak(&self) -> i64 {
        let mut sorted = self.changes.clone();
        sorted.sort_by_key(|(t, d)| (*t, -*d));
        let mut depth = 0;
        let mut peak = 0;
        for (_, d) in sorted {
            depth += d;
            peak = peak.max(depth);
        }
        peak
    }
}
