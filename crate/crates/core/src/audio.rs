//! Recording ingest: WAV decoding, normalisation and analysis buffering.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};

/// A single channel of normalised audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub channel_id: usize,
    /// Offset in seconds of `samples[0]` in the source recording.
    pub origin_time: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(CodaError::arg("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(CodaError::arg("signal has no samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
            channel_id: 0,
            origin_time: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// View the whole signal as one analysis buffer.
    pub fn as_buffer(&self) -> AnalysisBuffer<'_> {
        AnalysisBuffer {
            samples: &self.samples,
            sample_rate: self.sample_rate,
            channel_id: self.channel_id,
            start_time: self.origin_time,
        }
    }
}

/// A window of a [`SampledSignal`] processed as one detection unit.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisBuffer<'a> {
    pub samples: &'a [f64],
    pub sample_rate: f64,
    pub channel_id: usize,
    /// Absolute start time in seconds.
    pub start_time: f64,
}

impl AnalysisBuffer<'_> {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn to_signal(&self) -> SampledSignal {
        SampledSignal {
            samples: self.samples.to_vec(),
            sample_rate: self.sample_rate,
            channel_id: self.channel_id,
            origin_time: self.start_time,
        }
    }
}

/// On-disk sample encodings accepted by [`load_audio`] and produced by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Decode one channel of a PCM-16 or float-32 WAV file into `[-1, 1]`.
pub fn load_audio(path: impl AsRef<Path>, channel: usize) -> Result<SampledSignal> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => CodaError::io(path, io),
        other => CodaError::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(CodaError::Format(format!(
            "{channels} channels; only mono or stereo is supported"
        )));
    }
    if channel >= channels {
        return Err(CodaError::arg(format!(
            "channel {channel} requested but file has {channels}"
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CodaError::Format(e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CodaError::Format(e.to_string()))?,
        (fmt, bits) => {
            return Err(CodaError::Format(format!(
                "{bits}-bit {fmt:?} samples; expected 16-bit PCM or 32-bit float"
            )))
        }
    };

    let mut samples: Vec<f64> = interleaved
        .iter()
        .skip(channel)
        .step_by(channels)
        .copied()
        .collect();
    if samples.is_empty() {
        return Err(CodaError::Format("file contains no samples".into()));
    }

    // float files may exceed full scale
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        log::warn!("{}: float samples exceed full scale (peak {peak:.3}); rescaling", path.display());
        samples.iter_mut().for_each(|v| *v /= peak);
    }

    Ok(SampledSignal {
        samples,
        sample_rate: spec.sample_rate as f64,
        channel_id: channel,
        origin_time: 0.0,
    })
}

/// Write a mono WAV file. Samples outside `[-1, 1]` are clipped.
pub fn write_wav(signal: &SampledSignal, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let rate = signal.sample_rate.round();
    if rate < 1.0 || rate > u32::MAX as f64 || (rate - signal.sample_rate).abs() > 1e-9 {
        return Err(CodaError::arg("WAV requires an integral sample rate"));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => CodaError::io(path, io),
        other => CodaError::Format(other.to_string()),
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_err)?;
    for &v in &signal.samples {
        let v = v.clamp(-1.0, 1.0);
        match encoding {
            WavEncoding::Pcm16 => {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(to_err)?;
            }
            WavEncoding::Float32 => writer.write_sample(v as f32).map_err(to_err)?,
        }
    }
    writer.finalize().map_err(to_err)
}

/// Slice a signal into overlapping buffers of `buffer_len` seconds advancing by
/// `buffer_len - overlap`. The last buffer may be shorter; iteration stops at the
/// first buffer that reaches the end of the signal.
pub fn frame_buffers(signal: &SampledSignal, buffer_len: f64, overlap: f64) -> Result<Vec<AnalysisBuffer<'_>>> {
    if !(buffer_len > 0.0) {
        return Err(CodaError::arg("buffer length must be positive"));
    }
    if !(overlap >= 0.0) || overlap >= buffer_len {
        return Err(CodaError::arg(format!(
            "overlap {overlap} s must be in [0, buffer length {buffer_len} s)"
        )));
    }
    let fs = signal.sample_rate;
    let len = ((buffer_len * fs).round() as usize).max(1);
    let step = (((buffer_len - overlap) * fs).round() as usize).max(1);
    let n = signal.samples.len();

    let mut out = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + len).min(n);
        out.push(AnalysisBuffer {
            samples: &signal.samples[start..end],
            sample_rate: fs,
            channel_id: signal.channel_id,
            start_time: signal.origin_time + start as f64 / fs,
        });
        if end >= n {
            break;
        }
        start += step;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(secs: f64, fs: f64) -> SampledSignal {
        SampledSignal::new(vec![0.0; (secs * fs) as usize], fs).unwrap()
    }

    #[test]
    fn exact_tiling() {
        let s = signal(21.0, 1000.0);
        let b = frame_buffers(&s, 7.0, 0.0).unwrap();
        let starts: Vec<f64> = b.iter().map(|b| b.start_time).collect();
        assert_eq!(starts, vec![0.0, 7.0, 14.0]);
        assert!(b.iter().all(|b| (b.duration() - 7.0).abs() < 1e-12));
    }

    #[test]
    fn overlapping_with_truncated_tail() {
        let s = signal(10.0, 1000.0);
        let b = frame_buffers(&s, 7.0, 2.0).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].start_time, 5.0);
        assert!((b[1].duration() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn short_input_is_one_buffer() {
        let s = signal(3.0, 1000.0);
        let b = frame_buffers(&s, 7.0, 2.0).unwrap();
        assert_eq!(b.len(), 1);
        assert!((b[0].duration() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_must_be_shorter_than_buffer() {
        let s = signal(3.0, 1000.0);
        assert!(matches!(frame_buffers(&s, 7.0, 7.0), Err(CodaError::Argument(_))));
    }

    #[test]
    fn constant_pcm16_scales_to_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap();
        }
        w.finalize().unwrap();
        let s = load_audio(&path, 0).unwrap();
        assert!(s.samples.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn stereo_channel_selection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 96000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(1000i16).unwrap();
            w.write_sample(-2000i16).unwrap();
        }
        w.finalize().unwrap();
        let s = load_audio(&path, 1).unwrap();
        assert_eq!(s.sample_rate, 96000.0);
        assert_eq!(s.channel_id, 1);
        assert!(s.samples.iter().all(|&v| v == -2000.0 / 32768.0));
        assert!(matches!(load_audio(&path, 2), Err(CodaError::Argument(_))));
    }

    #[test]
    fn rejects_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_audio(&path, 0), Err(CodaError::Format(_))));
    }

    #[test]
    fn non_wav_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        std::fs::write(&path, b"not a riff file at all").unwrap();
        assert!(matches!(load_audio(&path, 0), Err(CodaError::Format(_))));
    }
}
