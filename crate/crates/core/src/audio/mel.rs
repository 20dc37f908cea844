//! Log-Mel spectrogram: periodic Hann window, power STFT without centre
//! padding, Slaney-scale area-normalized triangular filters, natural log.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 512,
            hop: 128,
            n_mels: 128,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.n_fft {
            0
        } else {
            1 + (n_samples - self.n_fft) / self.hop
        }
    }
}

/// `[n_mels × n_frames]` log power values, mel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelPatch {
    pub n_mels: usize,
    pub n_frames: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub values: Vec<f32>,
}

impl LogMelPatch {
    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f32> {
        (0..self.n_mels).map(|m| self.get(m, frame)).collect()
    }
}

/// Slaney mel scale (linear below 1 kHz, logarithmic above).
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (logstep * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// Dense `[n_mels][1 + n_fft/2]` filter weights and the centre frequency of
/// each filter in Hz.
pub fn mel_filterbank(cfg: &MelConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_bins = 1 + cfg.n_fft / 2;
    let sr = cfg.sample_rate as f64;
    let fmax = cfg.fmax.unwrap_or(sr / 2.0);
    let fft_freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * sr / cfg.n_fft as f64).collect();
    let (mmin, mmax) = (hz_to_mel(cfg.fmin), hz_to_mel(fmax));
    let mel_f: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mmin + (mmax - mmin) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let weights = (0..cfg.n_mels)
        .map(|i| {
            let (lo, mid, hi) = (mel_f[i], mel_f[i + 1], mel_f[i + 2]);
            let enorm = 2.0 / (hi - lo);
            fft_freqs
                .iter()
                .map(|&f| {
                    let lower = (f - lo) / (mid - lo);
                    let upper = (hi - f) / (hi - mid);
                    lower.min(upper).max(0.0) * enorm
                })
                .collect()
        })
        .collect();
    (weights, mel_f[1..=cfg.n_mels].to_vec())
}

struct SparseFilter {
    start: usize,
    weights: Vec<f64>,
}

/// Reusable extractor; cheap to share across threads.
pub struct LogMelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<SparseFilter>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(cfg: MelConfig) -> Self {
        let n = cfg.n_fft;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let (dense, _) = mel_filterbank(&cfg);
        let filters = dense
            .into_iter()
            .map(|row| {
                let start = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let end = row.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
                SparseFilter {
                    start,
                    weights: row[start..end].to_vec(),
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Self {
            cfg,
            window,
            filters,
            fft,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn extract(&self, w: &Waveform) -> Result<LogMelPatch> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::dim(
                "log_mel",
                "sample_rate",
                format!("expected {} Hz, got {}", self.cfg.sample_rate, w.sample_rate),
            ));
        }
        self.extract_samples(&w.samples)
    }

    pub fn extract_samples(&self, samples: &[f32]) -> Result<LogMelPatch> {
        let cfg = &self.cfg;
        let n_frames = cfg.n_frames(samples.len());
        if n_frames == 0 {
            return Err(Error::dim(
                "log_mel",
                "samples",
                format!("need at least {} samples, got {}", cfg.n_fft, samples.len()),
            ));
        }
        let n_bins = 1 + cfg.n_fft / 2;
        let mut values = vec![0f32; cfg.n_mels * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0f64; n_bins];
        for t in 0..n_frames {
            let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.n_fft];
            for ((b, &s), &win) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(s as f64 * win, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, f) in self.filters.iter().enumerate() {
                let e: f64 = f
                    .weights
                    .iter()
                    .zip(&power[f.start..])
                    .map(|(w, p)| w * p)
                    .sum();
                values[m * n_frames + t] = (e + cfg.log_floor).ln() as f32;
            }
        }
        Ok(LogMelPatch {
            n_mels: cfg.n_mels,
            n_frames,
            n_fft: cfg.n_fft,
            hop: cfg.hop,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slaney_scale_breakpoint_and_round_trip() {
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        for hz in [0.0, 120.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_area_normalized() {
        let cfg = MelConfig {
            n_fft: 8192,
            ..MelConfig::default()
        };
        let (w, centers) = mel_filterbank(&cfg);
        assert_eq!(w.len(), 128);
        assert!(centers.windows(2).all(|p| p[0] < p[1]));
        // with fine bins each triangle integrates to ~1 (height 2/width · width/2)
        let df = 16000.0 / 8192.0;
        for row in &w[20..] {
            let area: f64 = row.iter().sum::<f64>() * df;
            assert!((area - 1.0).abs() < 0.05, "area {area}");
        }
    }

    #[test]
    fn patch_shape_for_250ms() {
        let ex = LogMelExtractor::new(MelConfig::default());
        let p = ex.extract_samples(&vec![0.1; 4000]).unwrap();
        assert_eq!((p.n_mels, p.n_frames), (128, 28));
        assert!(ex.extract_samples(&[0.0; 511]).is_err());
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let ex = LogMelExtractor::new(MelConfig::default());
        let p = ex.extract_samples(&vec![0.0; 4000]).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(p.values.iter().all(|&v| v == floor));
    }
}
