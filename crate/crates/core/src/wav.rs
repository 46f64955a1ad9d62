//! RIFF WAV read/write: 16/24-bit integer PCM and 32-bit float, mono or
//! stereo. Stereo is downmixed to mono on read by averaging channels.

use crate::audio::AudioClip;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed wav at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("sample {index} is {value} which is outside ±1.0; integer PCM write refuses to clip")]
    OutOfRange { index: usize, value: f64 },
    #[error("audio error: {0}")]
    Audio(#[from] crate::audio::AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Int16,
    Int24,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WavError> {
        if self.pos + n > self.data.len() {
            return Err(WavError::Malformed {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, WavError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Read a WAV file into a mono clip. Stereo files are downmixed by
/// averaging the two channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    let mut cur = Cursor { data: bytes, pos: 0 };
    if cur.take(4, "RIFF tag")? != b"RIFF" {
        return Err(WavError::UnsupportedFormat("missing RIFF tag".into()));
    }
    let _riff_len = cur.u32("RIFF size")?;
    if cur.take(4, "WAVE tag")? != b"WAVE" {
        return Err(WavError::UnsupportedFormat("missing WAVE tag".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while cur.pos < cur.data.len() {
        let id = cur.take(4, "chunk id")?.to_owned();
        let len = cur.u32("chunk size")? as usize;
        let body = cur.take(len, "chunk body")?;
        if len % 2 == 1 && cur.pos < cur.data.len() {
            cur.pos += 1; // chunks are word-aligned
        }
        match &id[..] {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(WavError::Malformed {
                        offset: cur.pos - len,
                        message: "fmt chunk shorter than 16 bytes".into(),
                    });
                }
                let mut format = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                let bits = u16::from_le_bytes([body[14], body[15]]);
                if format == FORMAT_EXTENSIBLE {
                    // sub-format GUID starts at offset 24; first two bytes hold the tag
                    if body.len() < 26 {
                        return Err(WavError::Malformed {
                            offset: cur.pos - len,
                            message: "extensible fmt chunk too short".into(),
                        });
                    }
                    format = u16::from_le_bytes([body[24], body[25]]);
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                data = Some(body);
            }
            _ => {} // skip unknown chunks
        }
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| WavError::UnsupportedFormat("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::UnsupportedFormat("no data chunk".into()))?;
    if rate == 0 {
        return Err(WavError::UnsupportedFormat("zero sample rate".into()));
    }
    if channels == 0 || channels > 2 {
        return Err(WavError::UnsupportedFormat(format!(
            "{channels} channels; only mono and stereo are supported"
        )));
    }

    let interleaved: Vec<f64> = match (format, bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32767.0)
            .collect(),
        (FORMAT_PCM, 24) => data
            .chunks_exact(3)
            .map(|b| {
                let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
                v as f64 / 8_388_607.0
            })
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        _ => {
            return Err(WavError::UnsupportedFormat(format!(
                "format tag {format} with {bits} bits per sample"
            )))
        }
    };

    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|p| 0.5 * (p[0] + p[1]))
            .collect()
    };
    Ok(AudioClip::new(mono, rate)?)
}

/// Write a mono clip. Integer depths refuse samples outside ±1.0 rather
/// than clipping them.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, depth: BitDepth) -> Result<(), WavError> {
    let bytes = encode_wav(clip, depth)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn encode_wav(clip: &AudioClip, depth: BitDepth) -> Result<Vec<u8>, WavError> {
    let samples = clip.samples();
    if matches!(depth, BitDepth::Int16 | BitDepth::Int24) {
        if let Some(index) = samples.iter().position(|s| s.abs() > 1.0) {
            return Err(WavError::OutOfRange { index, value: samples[index] });
        }
    }

    let (format, bits): (u16, u16) = match depth {
        BitDepth::Int16 => (FORMAT_PCM, 16),
        BitDepth::Int24 => (FORMAT_PCM, 24),
        BitDepth::Float32 => (FORMAT_IEEE_FLOAT, 32),
    };
    let bytes_per_sample = (bits / 8) as usize;
    let data_len = samples.len() * bytes_per_sample;

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    let byte_rate = clip.sample_rate() * bytes_per_sample as u32;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    match depth {
        BitDepth::Int16 => {
            for s in samples {
                let v = (s * 32767.0).round() as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        BitDepth::Int24 => {
            for s in samples {
                let v = (s * 8_388_607.0).round() as i32;
                let b = v.to_le_bytes();
                out.extend_from_slice(&b[..3]);
            }
        }
        BitDepth::Float32 => {
            for s in samples {
                out.extend_from_slice(&(*s as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}
