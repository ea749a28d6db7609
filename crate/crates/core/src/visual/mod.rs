//! Real-time visual pipeline: mel features, the frame ring, face tracking
//! and the lip-sync stage stub.

pub mod frames;
pub mod kalman;
pub mod mel;
pub mod motion;
pub mod ring;
pub mod stubs;

pub use frames::{frame_timeline, frame_ts, FaceBox, FrameGeometry, FrameRecord};
pub use kalman::{kalman_step, KalmanTrack};
pub use mel::{mel_spectrogram, MelAnalyzer, MelSpec};
pub use motion::{mouth_motion_signal, zoh_resample};
pub use ring::{ring_insert, ring_window, FrameRing, RING_CAPACITY};
pub use stubs::{mock_face_detect, mock_lipsync, FaceDetector, LipsyncEngine, WAV2LIP_FP32, WAV2LIP_TRT_FP16};
