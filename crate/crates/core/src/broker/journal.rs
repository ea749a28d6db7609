//! Append-only per-queue journal.
//!
//! Layout: magic `LSQ1`, then records of
//! `u32-LE len | u8 kind | 16-byte uuid | u64-LE ts_ms | payload (publish only)`
//! where `len` counts every byte after the length field.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use uuid::Uuid;

use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const MAGIC: &[u8; 4] = b"LSQ1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    Publish = 0,
    Ack = 1,
    DeadLetter = 2,
}

impl RecordKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(RecordKind::Publish),
            1 => Ok(RecordKind::Ack),
            2 => Ok(RecordKind::DeadLetter),
            other => Err(Error::Journal(format!("unknown record kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalRecord {
    pub kind: RecordKind,
    pub id: Uuid,
    pub ts: Timestamp,
    pub payload: Vec<u8>,
}

pub fn encode_record(rec: &JournalRecord) -> Vec<u8> {
    let payload: &[u8] = if rec.kind == RecordKind::Publish {
        &rec.payload
    } else {
        &[]
    };
    let len = 1 + 16 + 8 + payload.len();
    let mut out = Vec::with_capacity(4 + len);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.push(rec.kind as u8);
    out.extend_from_slice(rec.id.as_bytes());
    out.extend_from_slice(&rec.ts.millis().to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Parse a whole journal image (magic included).
pub fn decode_journal(bytes: &[u8]) -> Result<Vec<JournalRecord>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Journal("missing LSQ1 magic".into()));
    }
    let mut out = Vec::new();
    let mut off = 4;
    while off < bytes.len() {
        if off + 4 > bytes.len() {
            return Err(Error::Journal(format!("truncated length at byte offset {off}")));
        }
        let len = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let body = off + 4;
        if len < 25 || body + len > bytes.len() {
            return Err(Error::Journal(format!("truncated record at byte offset {off}")));
        }
        let kind = RecordKind::from_u8(bytes[body])?;
        let id = Uuid::from_bytes(bytes[body + 1..body + 17].try_into().unwrap());
        let ts = u64::from_le_bytes(bytes[body + 17..body + 25].try_into().unwrap());
        out.push(JournalRecord {
            kind,
            id,
            ts: Timestamp::from_millis(ts),
            payload: bytes[body + 25..body + len].to_vec(),
        });
        off = body + len;
    }
    Ok(out)
}

/// Publish records not matched by a later ack or dead-letter, in journal order.
/// A settle record for a uuid settles the oldest open publish with that uuid.
pub fn unsettled(records: &[JournalRecord]) -> Vec<JournalRecord> {
    let mut open: Vec<Option<&JournalRecord>> = Vec::new();
    for rec in records {
        match rec.kind {
            RecordKind::Publish => open.push(Some(rec)),
            RecordKind::Ack | RecordKind::DeadLetter => {
                if let Some(slot) = open
                    .iter_mut()
                    .find(|s| s.is_some_and(|r| r.id == rec.id))
                {
                    *slot = None;
                }
            }
        }
    }
    open.into_iter().flatten().cloned().collect()
}

pub trait JournalSink: Send {
    fn append(&mut self, rec: &JournalRecord) -> Result<()>;
}

/// Benchmark sink: accepts and discards.
#[derive(Debug, Default)]
pub struct NullJournal;

impl JournalSink for NullJournal {
    fn append(&mut self, _rec: &JournalRecord) -> Result<()> {
        Ok(())
    }
}

pub struct FileJournal {
    out: BufWriter<File>,
}

impl FileJournal {
    /// Open for append, writing the magic if the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        let mut head = Vec::new();
        (&mut f).take(4).read_to_end(&mut head)?;
        if head.is_empty() {
            f.write_all(MAGIC)?;
        } else if head.as_slice() != MAGIC {
            return Err(Error::Journal(format!(
                "{} is not a journal (bad magic)",
                path.display()
            )));
        }
        Ok(FileJournal {
            out: BufWriter::new(f),
        })
    }
}

impl JournalSink for FileJournal {
    fn append(&mut self, rec: &JournalRecord) -> Result<()> {
        self.out.write_all(&encode_record(rec))?;
        self.out.flush()?;
        Ok(())
    }
}
