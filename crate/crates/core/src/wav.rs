//! WAV input and output.
//!
//! Accepts mono 16 kHz files in 16-bit PCM or 32-bit float; always writes
//! 32-bit float so a written waveform reads back bit-exactly.

use std::fs::File;
use std::io::{BufReader, Read, Seek};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::stdct::Waveform;
use crate::SAMPLE_RATE;

fn audio(e: hound::Error) -> Error {
    Error::Audio(e.to_string())
}

fn io_or_audio(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => audio(other),
    }
}

/// Decodes a WAV stream, enforcing the accepted formats.
pub fn decode_wav<R: Read>(reader: R) -> Result<Waveform> {
    let mut r = WavReader::new(reader).map_err(audio)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::Audio(format!(
            "expected mono audio, got {} channels",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "expected {SAMPLE_RATE} Hz, got {} Hz",
            spec.sample_rate
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (SampleFormat::Float, 32) => r.samples::<f32>().collect(),
        (fmt, bits) => {
            return Err(Error::Audio(format!(
                "unsupported encoding {bits}-bit {fmt:?}; need 16-bit PCM or 32-bit float"
            )))
        }
    }
    .map_err(audio)?;
    Waveform::new(samples).map_err(|e| Error::Audio(e.to_string()))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    decode_wav(BufReader::new(File::open(path)?))
}

fn float_spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    }
}

/// Encodes `samples` as 32-bit float mono 16 kHz.
pub fn encode_wav<W: std::io::Write + Seek>(writer: W, samples: &[f32]) -> Result<()> {
    let mut w = WavWriter::new(writer, float_spec()).map_err(io_or_audio)?;
    for &s in samples {
        w.write_sample(s).map_err(io_or_audio)?;
    }
    w.finalize().map_err(io_or_audio)
}

pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    encode_wav(std::io::BufWriter::new(File::create(path)?), samples)
}
