use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const DEFAULT_FPS: u32 = 30;
pub const FRAME_WIDTH: u32 = 640;
pub const FRAME_HEIGHT: u32 = 448;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceBox {
    pub fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub ts: Timestamp,
    pub frame_index: u64,
    pub face_box: Option<FaceBox>,
    pub mouth_motion: f64,
    pub landmarks: Option<[(f64, f64); 5]>,
    /// Grayscale pixels of the mouth region (lower third of the face box)
    /// when real pixel data is available.
    pub mouth_pixels: Option<Vec<u8>>,
}

impl FrameRecord {
    pub fn new(frame_index: u64, ts: Timestamp) -> Self {
        FrameRecord {
            ts,
            frame_index,
            face_box: None,
            mouth_motion: 0.0,
            landmarks: None,
            mouth_pixels: None,
        }
    }
}

/// Frame geometry used for buffer byte accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        FrameGeometry {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            channels: 3,
        }
    }
}

impl FrameGeometry {
    pub fn frame_bytes(&self) -> u64 {
        self.width as u64 * self.height as u64 * self.channels as u64
    }
}

/// Timestamp of frame `j` at `fps`: `floor(j * 1000 / fps)` ms.
pub fn frame_ts(j: u64, fps: u32) -> Timestamp {
    Timestamp::from_millis(j * 1000 / fps as u64)
}

/// Frame timestamps for `[0, duration_ms)`.
pub fn frame_timeline(duration_ms: u64, fps: u32) -> Vec<Timestamp> {
    (0..)
        .map(|j| frame_ts(j, fps))
        .take_while(|t| t.millis() < duration_ms)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    frame_index: u64,
    ts_ms: u64,
    cx: Option<f64>,
    cy: Option<f64>,
    w: Option<f64>,
    h: Option<f64>,
    mouth_motion: f64,
}

/// CSV with header `frame_index,ts_ms,cx,cy,w,h,mouth_motion`; an absent
/// face leaves the four box fields empty.
pub fn write_frames_csv<W: Write>(w: W, frames: &[FrameRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for f in frames {
        let b = f.face_box;
        out.serialize(CsvRow {
            frame_index: f.frame_index,
            ts_ms: f.ts.millis(),
            cx: b.map(|b| b.cx),
            cy: b.map(|b| b.cy),
            w: b.map(|b| b.w),
            h: b.map(|b| b.h),
            mouth_motion: f.mouth_motion,
        })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_frames_csv<R: Read>(r: R) -> Result<Vec<FrameRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("frame CSV record {}: {e}", i + 1)))?;
        let face_box = match (row.cx, row.cy, row.w, row.h) {
            (Some(cx), Some(cy), Some(w), Some(h)) => Some(FaceBox { cx, cy, w, h }),
            (None, None, None, None) => None,
            _ => {
                return Err(Error::Config(format!(
                    "frame CSV record {}: partial face box",
                    i + 1
                )))
            }
        };
        out.push(FrameRecord {
            face_box,
            mouth_motion: row.mouth_motion,
            ..FrameRecord::new(row.frame_index, Timestamp::from_millis(row.ts_ms))
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cadence_is_33_or_34() {
        let tl = frame_timeline(10_000, 30);
        assert_eq!(tl.len(), 300);
        for w in tl.windows(2) {
            let d = w[1].since(w[0]);
            assert!(d == 33 || d == 34, "{d}");
        }
    }

    #[test]
    fn geometry_matches_buffer_table() {
        // 512 MiB holds about 600 frames
        let n = (512u64 << 20) / FrameGeometry::default().frame_bytes();
        assert!((580..=640).contains(&n), "{n}");
    }

    #[test]
    fn csv_roundtrip_with_missing_face() {
        let mut a = FrameRecord::new(0, Timestamp::ZERO);
        a.face_box = Some(FaceBox { cx: 1.5, cy: 2.0, w: 30.0, h: 40.0 });
        a.mouth_motion = 0.25;
        let b = FrameRecord::new(1, Timestamp::from_millis(33));
        let mut bytes = Vec::new();
        write_frames_csv(&mut bytes, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("frame_index,ts_ms,cx,cy,w,h,mouth_motion\n"), "{text}");
        assert_eq!(read_frames_csv(&bytes[..]).unwrap(), vec![a, b]);
    }

    #[test]
    fn partial_box_rejected() {
        let text = "frame_index,ts_ms,cx,cy,w,h,mouth_motion\n0,0,1,,3,4,0\n";
        assert!(read_frames_csv(text.as_bytes()).is_err());
    }
}
