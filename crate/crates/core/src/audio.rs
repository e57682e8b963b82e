//! Mono PCM buffers and WAV I/O.
//!
//! Everything downstream works on [`AudioBuffer`], which holds samples as
//! `f64` regardless of the on-disk encoding. Files are read as 8–32 bit
//! integer or 32-bit float PCM, one or two channels; stereo is downmixed by
//! averaging the channels. Files are always written as mono 32-bit float.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Wraps `samples`, rejecting a zero sample rate or non-finite values.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of `[start, start + len)`. Panics if the range is out of bounds.
    pub fn slice(&self, start: usize, len: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a PCM WAV file into a mono buffer scaled to [-1, 1].
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(std::io::BufReader::new(file))?;
    let spec = reader.spec();

    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::Unsupported(format!(
            "{channels} channels (expected 1 or 2)"
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::Unsupported(format!("{format:?} PCM at {bits} bits")));
        }
    };

    if interleaved.is_empty() {
        return Err(Error::InvalidAudio(format!(
            "{}: empty data chunk",
            path.display()
        )));
    }

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|frame| 0.5 * (frame[0] + frame[1]))
            .collect()
    };

    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes `buffer` as mono 32-bit float WAV.
pub fn save_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::InvalidAudio("refusing to write an empty buffer".into()));
    }
    // AudioBuffer::new already rejects these, but the float32 cast can overflow.
    if buffer
        .samples()
        .iter()
        .any(|&s| !(s as f32).is_finite())
    {
        return Err(Error::InvalidAudio("sample not representable as f32".into()));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = WavWriter::new(std::io::BufWriter::new(file), spec)?;
    for &s in buffer.samples() {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}
