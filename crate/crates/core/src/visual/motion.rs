use crate::error::{Error, Result};
use crate::time::Timestamp;

use super::frames::FrameRecord;

/// Per-frame mouth activity for frames that carry a face box.
///
/// With pixel data, the value is the mean absolute difference of the
/// mouth-region pixels against the previous face frame (0 for the first).
/// Without pixels, the synthetic `mouth_motion` field passes through.
pub fn mouth_motion_series(frames: &[FrameRecord]) -> Result<Vec<(Timestamp, f64)>> {
    let faces: Vec<&FrameRecord> = frames.iter().filter(|f| f.face_box.is_some()).collect();
    if faces.len() < 2 {
        return Err(Error::NoFaces);
    }
    let mut out = Vec::with_capacity(faces.len());
    let mut prev: Option<&[u8]> = None;
    for f in faces {
        let v = match (&f.mouth_pixels, prev) {
            (Some(px), Some(p)) if p.len() == px.len() && !px.is_empty() => {
                px.iter().zip(p).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>() / px.len() as f64
            }
            (Some(_), _) => 0.0,
            (None, _) => f.mouth_motion,
        };
        prev = f.mouth_pixels.as_deref();
        out.push((f.ts, v));
    }
    Ok(out)
}

/// Zero-order-hold resampling onto `lo, lo+step, ... <= hi`. Points before
/// the first sample take the first value.
pub fn zoh_resample(series: &[(Timestamp, f64)], lo: Timestamp, hi: Timestamp, step_ms: u64) -> Vec<f64> {
    let mut out = Vec::new();
    if series.is_empty() || hi < lo {
        return out;
    }
    let step = step_ms.max(1);
    let mut i = 0;
    let mut t = lo;
    while t <= hi {
        while i + 1 < series.len() && series[i + 1].0 <= t {
            i += 1;
        }
        out.push(series[i].1);
        t = t + step;
    }
    out
}

/// Mouth-motion signal on a 1 ms grid spanning the frames, the last value
/// held for one frame period.
pub fn mouth_motion_signal(frames: &[FrameRecord], fps: f64) -> Result<Vec<(Timestamp, f64)>> {
    if !(fps > 0.0) {
        return Err(Error::Config(format!("fps {fps} must be positive")));
    }
    let series = mouth_motion_series(frames)?;
    let lo = series[0].0;
    let hold = (1000.0 / fps).round() as u64;
    let hi = series.last().unwrap().0 + hold.saturating_sub(1);
    Ok(zoh_resample(&series, lo, hi, 1)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (lo + i as u64, v))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visual::frames::{frame_ts, FaceBox};

    fn face(j: u64) -> FrameRecord {
        let mut f = FrameRecord::new(j, frame_ts(j, 30));
        f.face_box = Some(FaceBox { cx: 1.0, cy: 1.0, w: 10.0, h: 10.0 });
        f
    }

    #[test]
    fn identical_frames_are_still() {
        let frames: Vec<_> = (0..5)
            .map(|j| FrameRecord { mouth_pixels: Some(vec![90; 64]), ..face(j) })
            .collect();
        assert!(mouth_motion_series(&frames).unwrap().iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn alternating_black_white_is_maximal() {
        let frames: Vec<_> = (0..6)
            .map(|j| FrameRecord { mouth_pixels: Some(vec![if j % 2 == 0 { 0 } else { 255 }; 64]), ..face(j) })
            .collect();
        let s = mouth_motion_series(&frames).unwrap();
        assert!(s[1..].iter().all(|(_, v)| *v == 255.0));
    }

    #[test]
    fn synthetic_field_passes_through_with_zoh() {
        let frames: Vec<_> = (0..4).map(|j| FrameRecord { mouth_motion: j as f64, ..face(j) }).collect();
        let sig = mouth_motion_signal(&frames, 30.0).unwrap();
        assert_eq!(sig[0], (Timestamp::ZERO, 0.0));
        assert_eq!(sig[32].1, 0.0);
        assert_eq!(sig[33].1, 1.0);
        assert_eq!(sig[65].1, 1.0);
        assert_eq!(sig[66].1, 2.0);
        assert_eq!(sig.last().unwrap().1, 3.0);
    }

    #[test]
    fn needs_two_faces() {
        let frames = vec![face(0), FrameRecord::new(1, frame_ts(1, 30))];
        assert!(matches!(mouth_motion_series(&frames), Err(Error::NoFaces)));
    }
}
