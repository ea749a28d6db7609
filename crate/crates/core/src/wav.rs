//! Minimal RIFF/WAVE reader and writer for mono 16-bit PCM.
//!
//! Anything else (float, multi-channel, compressed) is rejected with a
//! diagnostic that names the offending chunk and byte offset.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::media::AudioBuffer;
use crate::time::Timestamp;

const PCM_FORMAT: u16 = 1;

fn u16_at(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 {
        return Err(Error::Wav(format!(
            "truncated RIFF header: {} bytes, need 12 (at byte offset {})",
            bytes.len(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::Wav("missing `RIFF` tag at byte offset 0".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("missing `WAVE` form type at byte offset 8".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut off = 12;
    while off < bytes.len() {
        if off + 8 > bytes.len() {
            return Err(Error::Wav(format!(
                "truncated chunk header at byte offset {off}"
            )));
        }
        let id = &bytes[off..off + 4];
        let id_str = String::from_utf8_lossy(id).into_owned();
        let size = u32_at(bytes, off + 4) as usize;
        let body = off + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(Error::Wav(format!(
                        "truncated `fmt ` chunk at byte offset {off}"
                    )));
                }
                let format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if format != PCM_FORMAT {
                    return Err(Error::Wav(format!(
                        "`fmt ` chunk at byte offset {off}: format tag {format} is not PCM (1)"
                    )));
                }
                if channels != 1 {
                    return Err(Error::Wav(format!(
                        "`fmt ` chunk at byte offset {off}: {channels} channels, only mono is supported"
                    )));
                }
                if bits != 16 {
                    return Err(Error::Wav(format!(
                        "`fmt ` chunk at byte offset {off}: {bits}-bit samples, only 16-bit is supported"
                    )));
                }
                if rate == 0 {
                    return Err(Error::Wav(format!(
                        "`fmt ` chunk at byte offset {off}: zero sample rate"
                    )));
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                let Some((_, _, rate, _)) = fmt else {
                    return Err(Error::Wav(format!(
                        "`data` chunk at byte offset {off} precedes the `fmt ` chunk"
                    )));
                };
                if body + size > bytes.len() {
                    return Err(Error::Wav(format!(
                        "truncated `data` chunk at byte offset {off}: declares {size} bytes, \
                         file ends at byte offset {}",
                        bytes.len()
                    )));
                }
                if size % 2 != 0 {
                    return Err(Error::Wav(format!(
                        "`data` chunk at byte offset {off}: odd byte count {size} for 16-bit samples"
                    )));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                return AudioBuffer::new(samples, rate, Timestamp::ZERO);
            }
            _ => {
                log::debug!("skipping chunk `{id_str}` at byte offset {off}");
            }
        }
        // chunks are word aligned
        off = body + size + (size & 1);
    }
    Err(Error::Wav(format!(
        "no `data` chunk found before end of file at byte offset {}",
        bytes.len()
    )))
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes)
}

pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let data_len = audio.samples.len() as u32 * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &audio.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_wav(audio))?;
    Ok(())
}
