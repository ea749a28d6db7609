use thiserror::Error;

use crate::time::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("clock: {0}")]
    Clock(String),

    #[error("audio: {0}")]
    Audio(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error("queue `{0}` is not declared")]
    UndeclaredQueue(String),

    #[error("queue `{queue}`: message of {size} bytes exceeds the whole byte budget ({budget})")]
    MessageTooLarge { queue: String, size: u64, budget: u64 },

    #[error("queue `{queue}`: consumer {consumer} is not registered")]
    UnknownConsumer { queue: String, consumer: u64 },

    #[error("delivery token {0} is not in flight")]
    UnknownToken(u64),

    #[error("broker is shut down")]
    Shutdown,

    #[error("wire: {0}")]
    Wire(String),

    #[error("journal: {0}")]
    Journal(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dsp: {0}")]
    Dsp(String),

    #[error("frame ring: out-of-order insert (ts {ts} after {last})")]
    OutOfOrderFrame { ts: Timestamp, last: Timestamp },

    #[error("kalman: {0}")]
    Kalman(String),

    #[error("no face boxes in the frame set")]
    NoFaces,

    #[error("lipsync: {0}")]
    Lipsync(String),

    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String },

    #[error("bench: {0}")]
    Bench(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
