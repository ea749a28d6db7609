//! Face-box tracker: constant velocity on the center, static size.
//! State `[cx, cy, w, h, vcx, vcy]`, velocities in px/s.

use nalgebra::{Cholesky, SMatrix, SVector};

use crate::error::{Error, Result};

use super::frames::FaceBox;

type M6 = SMatrix<f64, 6, 6>;
type M4 = SMatrix<f64, 4, 4>;
type M46 = SMatrix<f64, 4, 6>;
type V6 = SVector<f64, 6>;
type V4 = SVector<f64, 4>;

pub const DEFAULT_Q: f64 = 1e-2;
pub const DEFAULT_R: f64 = 25.0;
const DIFFUSE: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct KalmanTrack {
    pub state: V6,
    pub covariance: M6,
    pub q: f64,
    pub r: f64,
    initialized: bool,
}

impl Default for KalmanTrack {
    fn default() -> Self {
        KalmanTrack::new(DEFAULT_Q, DEFAULT_R)
    }
}

fn observation() -> M46 {
    let mut h = M46::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

impl KalmanTrack {
    pub fn new(q: f64, r: f64) -> Self {
        KalmanTrack {
            state: V6::zeros(),
            covariance: M6::identity() * DIFFUSE,
            q,
            r,
            initialized: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn estimate(&self) -> FaceBox {
        FaceBox {
            cx: self.state[0],
            cy: self.state[1],
            w: self.state[2],
            h: self.state[3],
        }
    }

    fn predict(&mut self, dt_s: f64) {
        let mut f = M6::identity();
        f[(0, 4)] = dt_s;
        f[(1, 5)] = dt_s;
        self.state = f * self.state;
        self.covariance = f * self.covariance * f.transpose() + M6::identity() * self.q;
    }

    fn update(&mut self, z: &FaceBox) {
        let h = observation();
        let r = M4::identity() * self.r;
        let zv = V4::new(z.cx, z.cy, z.w, z.h);
        let innov = zv - h * self.state;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.try_inverse().expect("innovation covariance is SPD");
        let k = self.covariance * h.transpose() * s_inv;
        self.state += k * innov;
        // Joseph form keeps the covariance symmetric and PD
        let ikh = M6::identity() - k * h;
        self.covariance = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
    }

    /// Predict by `dt_ms`, update with the measurement if present (coast
    /// otherwise), and return the posterior box.
    pub fn step(&mut self, measurement: Option<&FaceBox>, dt_ms: u64) -> Result<FaceBox> {
        if dt_ms == 0 {
            return Err(Error::Kalman("dt must be positive".into()));
        }
        if let Some(z) = measurement {
            if !z.is_finite() {
                return Err(Error::Kalman(format!("non-finite measurement {z:?}")));
            }
        }
        if self.initialized {
            self.predict(dt_ms as f64 / 1000.0);
        }
        match measurement {
            Some(z) if !self.initialized => {
                // initialize on the first measurement; velocity stays diffuse
                self.state = V6::new(z.cx, z.cy, z.w, z.h, 0.0, 0.0);
                self.covariance = M6::from_diagonal(&V6::new(self.r, self.r, self.r, self.r, DIFFUSE, DIFFUSE));
                self.initialized = true;
            }
            Some(z) => self.update(z),
            None => {}
        }
        if Cholesky::new(self.covariance).is_none() {
            return Err(Error::Kalman("covariance lost positive definiteness".into()));
        }
        Ok(self.estimate())
    }

    pub fn covariance_is_spd(&self) -> bool {
        let sym = (self.covariance - self.covariance.transpose()).abs().max() < 1e-6 * self.covariance.abs().max().max(1.0);
        sym && Cholesky::new(self.covariance).is_some()
    }
}

pub fn kalman_step(track: &mut KalmanTrack, measurement: Option<&FaceBox>, dt_ms: u64) -> Result<FaceBox> {
    track.step(measurement, dt_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn b(cx: f64, cy: f64) -> FaceBox {
        FaceBox { cx, cy, w: 120.0, h: 150.0 }
    }

    #[test]
    fn noiseless_constant_box_converges() {
        let mut t = KalmanTrack::default();
        let target = b(320.0, 200.0);
        let mut est = target;
        for _ in 0..100 {
            est = t.step(Some(&target), 33).unwrap();
        }
        for (a, e) in [(est.cx, 320.0), (est.cy, 200.0), (est.w, 120.0), (est.h, 150.0)] {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn first_measurement_dominates_diffuse_prior() {
        let mut t = KalmanTrack::default();
        let est = t.step(Some(&b(100.0, 50.0)), 33).unwrap();
        assert!((est.cx - 100.0).abs() < 0.01 && (est.cy - 50.0).abs() < 0.01);
    }

    #[test]
    fn coasting_follows_velocity() {
        let mut t = KalmanTrack::default();
        for i in 0..60 {
            t.step(Some(&b(100.0 + i as f64 * 3.3, 50.0)), 33).unwrap();
        }
        let before = t.estimate().cx;
        let after = t.step(None, 33).unwrap().cx;
        assert!((after - before - 3.3).abs() < 0.5, "{}", after - before);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut t = KalmanTrack::default();
        assert!(t.step(Some(&b(f64::NAN, 0.0)), 33).is_err());
        assert!(t.step(Some(&b(1.0, 0.0)), 0).is_err());
    }

    #[test]
    fn jitter_reduced_by_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let mut t = KalmanTrack::default();
        let (mut raw, mut filt) = (Vec::new(), Vec::new());
        for i in 0..300 {
            let truth = (200.0 + 0.8 * i as f64, 150.0 - 0.3 * i as f64);
            let z = b(truth.0 + noise.sample(&mut rng), truth.1 + noise.sample(&mut rng));
            let est = t.step(Some(&z), 33).unwrap();
            raw.push((z.cx - truth.0, z.cy - truth.1));
            filt.push((est.cx - truth.0, est.cy - truth.1));
        }
        let var = |v: &[(f64, f64)]| {
            let n = v.len() as f64;
            let (mx, my) = v.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
            v.iter().map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2)).sum::<f64>() / n
        };
        let (vr, vf) = (var(&raw), var(&filt));
        assert!(vf <= 0.5 * vr, "filtered {vf} raw {vr}");
    }
}
