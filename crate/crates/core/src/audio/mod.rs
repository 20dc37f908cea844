//! Waveform I/O, log-Mel features and interpretable voice descriptors.

mod mel;
mod pitch;

pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, LogMelExtractor, LogMelPatch, MelConfig};
pub use pitch::{descriptors, estimate_f0_track, AcousticDescriptors, F0Frame, F0Track, PitchConfig};

use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sq: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sq / self.samples.len() as f64).sqrt()
    }

    /// Samples `[start, start + len)` of a span given in milliseconds.
    pub fn slice_ms(&self, start_ms: f64, len_samples: usize) -> Option<&[f32]> {
        let start = (start_ms * self.sample_rate as f64 / 1000.0).round() as usize;
        self.samples.get(start..start + len_samples)
    }

    /// Concatenate several waveforms of the same rate.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Waveform>, sample_rate: u32) -> Waveform {
        let mut samples = Vec::new();
        for p in parts {
            debug_assert_eq!(p.sample_rate, sample_rate);
            samples.extend_from_slice(&p.samples);
        }
        Waveform { samples, sample_rate }
    }

    /// Resample to `target` Hz with a Hann-windowed sinc interpolator.
    pub fn resample(&self, target: u32) -> Waveform {
        if target == self.sample_rate || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), target);
        }
        const HALF_TAPS: i64 = 16;
        let ratio = target as f64 / self.sample_rate as f64;
        // low-pass at the lower of the two Nyquist rates
        let cutoff = ratio.min(1.0);
        let out_len = (self.samples.len() as f64 * ratio).round() as usize;
        let support = HALF_TAPS as f64 / cutoff;
        let samples = (0..out_len)
            .map(|i| {
                let t = i as f64 / ratio;
                let center = t.floor() as i64;
                let span = support.ceil() as i64;
                let mut acc = 0.0;
                let mut norm = 0.0;
                for j in (center - span)..=(center + span) {
                    let x = t - j as f64;
                    if x.abs() >= support {
                        continue;
                    }
                    let arg = std::f64::consts::PI * x * cutoff;
                    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                    let win = 0.5 + 0.5 * (std::f64::consts::PI * x / support).cos();
                    let w = sinc * win;
                    norm += w;
                    if let Some(&s) = usize::try_from(j).ok().and_then(|j| self.samples.get(j)) {
                        acc += w * s as f64;
                    }
                }
                if norm.abs() > 0.0 {
                    (acc / norm) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Waveform::new(samples, target)
    }
}

/// Read a RIFF/WAVE file (16-bit PCM or 32-bit float), mixing to mono and
/// resampling to `target_rate`.
pub fn read_wav(path: &Path, target_rate: u32) -> Result<Waveform> {
    let audio_err = |message: String| Error::Audio {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
        (fmt, bits) => return Err(audio_err(format!("unsupported sample format {fmt:?} with {bits} bits"))),
    };
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    if mono.is_empty() {
        return Err(audio_err("no samples".into()));
    }
    if mono.iter().any(|v| !v.is_finite()) {
        return Err(audio_err("non-finite sample values".into()));
    }
    Ok(Waveform::new(mono, spec.sample_rate).resample(target_rate))
}

/// Duration of a WAVE file in milliseconds, read from the header only.
pub fn wav_duration_ms(path: &Path) -> Result<f64> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(reader.duration() as f64 * 1000.0 / reader.spec().sample_rate as f64)
}

/// Write mono 16-bit PCM. Values are clipped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| Error::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(audio_err)?;
    }
    writer.finalize().map_err(audio_err)
}
