//! RIFF WAV I/O at a fixed 16 kHz rate.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{shape, CoreError, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a mono or interleaved multichannel file into per-channel vectors.
pub fn read_wav(path: &Path) -> Result<Vec<Vec<f64>>> {
    if !path.exists() {
        return Err(CoreError::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(CoreError::SampleRate {
            path: path.to_path_buf(),
            got: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let channels = spec.channels as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(CoreError::WavFormat {
                path: path.to_path_buf(),
                msg: format!("{fmt:?} with {bits} bits"),
            })
        }
    };
    let mut out = vec![Vec::with_capacity(samples.len() / channels.max(1)); channels];
    for frame in samples.chunks_exact(channels) {
        for (c, &v) in frame.iter().enumerate() {
            out[c].push(v);
        }
    }
    Ok(out)
}

pub fn write_wav(path: &Path, channels: &[Vec<f64>], encoding: WavEncoding) -> Result<()> {
    let first = channels.first().ok_or(CoreError::Empty("write_wav"))?;
    if channels.iter().any(|c| c.len() != first.len()) {
        return Err(shape("write_wav", "channels have different lengths"));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for i in 0..first.len() {
        for c in channels {
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)?;
                }
                WavEncoding::Float32 => writer.write_sample(c[i] as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
