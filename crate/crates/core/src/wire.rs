//! Length-prefixed little-endian binary records.
//!
//! Broker payloads and external stage adapters both speak this format: a
//! frame is `u32-LE length` followed by that many payload bytes, and payload
//! fields are fixed-width LE integers or length-prefixed byte strings.

use std::io::{Read, Write};

use uuid::Uuid;

use crate::error::{Error, Result};
use crate::media::{AudioBuffer, LanguageCode, SegmentId};
use crate::time::Timestamp;

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn uuid(&mut self, v: &Uuid) -> &mut Self {
        self.buf.extend_from_slice(v.as_bytes());
        self
    }

    pub fn segment_id(&mut self, id: &SegmentId) -> &mut Self {
        self.uuid(&id.uuid).u64(id.birth.millis())
    }

    pub fn audio(&mut self, a: &AudioBuffer) -> &mut Self {
        self.u32(a.sample_rate).u64(a.start.millis());
        self.u32(a.samples.len() as u32);
        for s in &a.samples {
            self.buf.extend_from_slice(&s.to_le_bytes());
        }
        self
    }

    pub fn lang(&mut self, l: &LanguageCode) -> &mut Self {
        self.str(&l.0)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Wire(format!(
                "need {n} bytes at offset {}, record has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| Error::Wire(e.to_string()))
    }

    pub fn uuid(&mut self) -> Result<Uuid> {
        Ok(Uuid::from_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn segment_id(&mut self) -> Result<SegmentId> {
        let uuid = self.uuid()?;
        let birth = Timestamp::from_millis(self.u64()?);
        Ok(SegmentId { uuid, birth })
    }

    pub fn audio(&mut self) -> Result<AudioBuffer> {
        let rate = self.u32()?;
        let start = Timestamp::from_millis(self.u64()?);
        let n = self.u32()? as usize;
        let raw = self.take(n * 2)?;
        let samples = raw
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        AudioBuffer::new(samples, rate, start)
    }

    pub fn lang(&mut self) -> Result<LanguageCode> {
        Ok(LanguageCode(self.str()?))
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn remaining(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

/// Write one `u32-LE length + payload` frame.
pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Read one frame; `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut payload)
        .map_err(|e| Error::Wire(format!("truncated frame: {e}")))?;
    Ok(Some(payload))
}
