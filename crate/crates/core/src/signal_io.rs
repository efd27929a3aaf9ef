//! Multichannel WAV ingest/emit and separation run reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};

/// Raw multichannel audio: `M` channels of `K` samples at a common rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWave {
    samples: Vec<Vec<f64>>,
    sample_rate_hz: u32,
}

impl MultichannelWave {
    /// Builds a wave, checking that all channels have the same nonzero
    /// length and every sample is finite.
    pub fn new(samples: Vec<Vec<f64>>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("wave needs at least one channel".into()));
        };
        if first.is_empty() {
            return Err(Error::InvalidArgument("channels must be non-empty".into()));
        }
        let len = first.len();
        for (i, ch) in samples.iter().enumerate() {
            if ch.len() != len {
                return Err(Error::InvalidArgument(format!(
                    "channel {i} has {} samples, expected {len}",
                    ch.len()
                )));
            }
            if ch.iter().any(|s| !s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "channel {i} contains a non-finite sample"
                )));
            }
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: K >= 1
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn channels_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|c| c.as_slice())
    }

    pub fn into_samples(self) -> Vec<Vec<f64>> {
        self.samples
    }
}

/// Target encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a RIFF/WAVE file holding PCM 16-bit, PCM 24-bit or IEEE float 32
/// samples. Integer PCM is scaled to [-1, 1] by `1 / 2^(bits-1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWave> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::malformed(path, "zero channels"));
    }

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); channels];
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let scale = 1.0 / 32768.0;
            for (i, s) in reader.samples::<i16>().enumerate() {
                let s = s.map_err(|e| map_hound(path, e))?;
                samples[i % channels].push(f64::from(s) * scale);
            }
        }
        (hound::SampleFormat::Int, 24) => {
            let scale = 1.0 / f64::from(1 << 23);
            for (i, s) in reader.samples::<i32>().enumerate() {
                let s = s.map_err(|e| map_hound(path, e))?;
                samples[i % channels].push(f64::from(s) * scale);
            }
        }
        (hound::SampleFormat::Float, 32) => {
            for (i, s) in reader.samples::<f32>().enumerate() {
                let s = s.map_err(|e| map_hound(path, e))?;
                samples[i % channels].push(f64::from(s));
            }
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?} WAV; supported encodings are PCM16, PCM24 and float32",
                path.display()
            )));
        }
    }

    if samples[0].is_empty() {
        return Err(Error::malformed(path, "no audio frames"));
    }
    let len = samples[0].len();
    if samples.iter().any(|c| c.len() != len) {
        return Err(Error::malformed(path, "truncated final frame"));
    }
    MultichannelWave::new(samples, spec.sample_rate)
}

/// Writes a wave to disk. Samples are clipped to [-1, 1] before
/// quantization; float32 output round-trips bit-exactly through
/// [`read_wav`] whenever the samples are f32-representable.
pub fn write_wav(
    path: impl AsRef<Path>,
    wave: &MultichannelWave,
    encoding: WavEncoding,
) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: wave.channels() as u16,
        sample_rate: wave.sample_rate_hz(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for k in 0..wave.len() {
        for ch in 0..wave.channels() {
            let x = wave.channel(ch)[k].clamp(-1.0, 1.0);
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q).map_err(|e| map_hound(path, e))?;
                }
                WavEncoding::Float32 => {
                    writer
                        .write_sample(x as f32)
                        .map_err(|e| map_hound(path, e))?;
                }
            }
        }
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedFormat(format!(
            "{}: WAV encoding not supported by the reader",
            path.display()
        )),
        other => Error::malformed(path, other.to_string()),
    }
}

/// Per-run separation summary: quality metrics, stage timings and the fully
/// resolved configuration. Field order is the canonical JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub sources: usize,
    pub sir_db: Vec<f64>,
    pub sdr_db: Vec<f64>,
    pub stages: BTreeMap<String, f64>,
    pub config: PipelineConfig,
}

impl SeparationReport {
    pub fn validate(&self) -> Result<()> {
        if !self.sir_db.is_empty() && self.sir_db.len() != self.sources {
            return Err(Error::InvalidArgument(format!(
                "sir_db has {} entries for {} sources",
                self.sir_db.len(),
                self.sources
            )));
        }
        if self.sdr_db.len() != self.sir_db.len() {
            return Err(Error::InvalidArgument(
                "sir_db and sdr_db lengths differ".into(),
            ));
        }
        if self.stages.values().any(|&ms| !(ms >= 0.0)) {
            return Err(Error::InvalidArgument(
                "stage times must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Serializes a report as canonical pretty JSON (stable key order, trailing
/// newline) so that goldens and diffs stay byte-stable.
pub fn write_report(path: impl AsRef<Path>, report: &SeparationReport) -> Result<()> {
    let path = path.as_ref();
    report.validate()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, report)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    use std::io::Write;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<SeparationReport> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&data).map_err(|e| Error::malformed(path, e.to_string()))
}
