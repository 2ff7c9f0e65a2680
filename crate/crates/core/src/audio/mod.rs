//! Audio buffers, WAV I/O, resampling, annotations and synthetic corpora.

pub mod annotation;
pub mod labels;
pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};

pub use annotation::{BeatAnnotation, ChordAnnotation, Interval, LabeledIntervals, TagAnnotation};
pub use labels::{HarmonyLabel, Mode};

/// Sample rate every pipeline stage works at.
pub const TARGET_SAMPLE_RATE: u32 = 24_000;

/// Mono samples in roughly `[-1, 1]` at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
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

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, start + len)`, clamped to the buffer.
    pub fn crop(&self, start: usize, len: usize) -> AudioBuffer {
        let s = start.min(self.samples.len());
        let e = (s + len).min(self.samples.len());
        AudioBuffer {
            samples: self.samples[s..e].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Read a PCM WAV file (16-bit integer or 32-bit float, mono or stereo).
///
/// Stereo is downmixed by averaging channels; 16-bit samples are divided by
/// 32768.
pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels in {}",
            spec.channels,
            path.display()
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{}-bit {} PCM in {}",
                bits,
                match fmt {
                    hound::SampleFormat::Int => "integer",
                    hound::SampleFormat::Float => "float",
                },
                path.display()
            )))
        }
    };
    let samples = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) * 0.5)
            .collect()
    } else {
        interleaved
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedEncoding(format!("{}", path.display())),
        other => Error::format(path, other.to_string()),
    }
}

/// Write a mono 32-bit float WAV file.
pub fn write_wav(path: &Path, buf: &AudioBuffer) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &buf.samples {
        w.write_sample(s).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

/// Linear-interpolation resampler; output length is
/// `round(len * target_sr / source_sr)`.
pub fn resample(buf: &AudioBuffer, target_sr: u32) -> Result<AudioBuffer> {
    if target_sr == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    if target_sr == buf.sample_rate {
        return Ok(buf.clone());
    }
    let src = &buf.samples;
    let out_len =
        (src.len() as f64 * target_sr as f64 / buf.sample_rate as f64).round() as usize;
    let step = buf.sample_rate as f64 / target_sr as f64;
    let last = src.len().saturating_sub(1);
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = (pos - lo as f64).clamp(0.0, 1.0) as f32;
            src[lo] + (src[hi] - src[lo]) * frac
        })
        .collect();
    AudioBuffer::new(samples, target_sr)
}
