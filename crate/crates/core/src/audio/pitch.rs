//! YIN-style F0 tracking and cycle-level voice descriptors.
//!
//! Each analysis frame integrates the squared difference function over a
//! 25 ms window for every lag in the search range, normalizes it by its
//! cumulative mean, and takes the first dip below the threshold. Jitter and
//! shimmer come from waveform peaks picked one pitch period apart inside
//! runs of voiced frames.

use serde::{Deserialize, Serialize};

use super::Waveform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub fmin: f64,
    pub fmax: f64,
    pub threshold: f64,
    /// Frames quieter than this RMS are unvoiced without analysis.
    pub silence_rms: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            fmin: 50.0,
            fmax: 500.0,
            threshold: 0.15,
            silence_rms: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F0Frame {
    /// First sample of the frame.
    pub start: usize,
    pub f0: f64,
    pub voiced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct F0Track {
    pub frames: Vec<F0Frame>,
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub max_lag: usize,
}

impl F0Track {
    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().filter(|f| f.voiced).map(|f| f.f0)
    }

    pub fn mean_f0(&self) -> f64 {
        let (sum, n) = self.voiced_f0().fold((0.0, 0usize), |(s, n), f| (s + f, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Frame-wise F0 estimate. Frames need `window + max_lag` samples; audio
/// shorter than that yields an empty track.
pub fn estimate_f0_track(w: &Waveform, cfg: &PitchConfig) -> F0Track {
    let sr = w.sample_rate as f64;
    let window = (cfg.frame_ms * sr / 1000.0).round() as usize;
    let hop = ((cfg.hop_ms * sr / 1000.0).round() as usize).max(1);
    let max_lag = (sr / cfg.fmin).ceil() as usize;
    let min_lag = ((sr / cfg.fmax).floor() as usize).max(2);
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let need = window + max_lag + 1;
    let n_frames = if x.len() < need { 0 } else { 1 + (x.len() - need) / hop };
    let frames = crate::par::map_range(n_frames, |k| {
        let start = k * hop;
        let (f0, voiced) = yin_frame(&x[start..start + need], window, min_lag, max_lag, cfg)
            .map_or((0.0, false), |tau| (sr / tau, true));
        F0Frame { start, f0, voiced }
    });
    F0Track {
        frames,
        sample_rate: w.sample_rate,
        window,
        hop,
        max_lag,
    }
}

fn yin_frame(x: &[f64], window: usize, min_lag: usize, max_lag: usize, cfg: &PitchConfig) -> Option<f64> {
    let energy: f64 = x[..window].iter().map(|v| v * v).sum();
    if (energy / window as f64).sqrt() < cfg.silence_rms {
        return None;
    }
    let mut d = vec![0.0; max_lag + 1];
    for (tau, dt) in d.iter_mut().enumerate().skip(1) {
        *dt = x[..window]
            .iter()
            .zip(&x[tau..tau + window])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    let mut cmnd = vec![1.0; max_lag + 1];
    let mut running = 0.0;
    for tau in 1..=max_lag {
        running += d[tau];
        cmnd[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    let mut tau = min_lag;
    while tau < max_lag {
        if cmnd[tau] < cfg.threshold {
            while tau + 1 < max_lag && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            return Some(parabolic_offset(cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]) + tau as f64);
        }
        tau += 1;
    }
    None
}

/// Vertex offset of the parabola through three equally spaced points.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-300 {
        0.0
    } else {
        (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct AcousticDescriptors {
    pub speech_percent: f64,
    pub mean_f0: f64,
    pub std_f0: f64,
    pub jitter: f64,
    pub shimmer: f64,
    pub loudness: f64,
    /// False when no frame was voiced; F0, jitter and shimmer are then 0.
    pub voiced: bool,
}

impl AcousticDescriptors {
    pub const NAMES: [&'static str; 6] = ["speech_percent", "mean_f0", "std_f0", "jitter", "shimmer", "loudness"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.speech_percent,
            self.mean_f0,
            self.std_f0,
            self.jitter,
            self.shimmer,
            self.loudness,
        ]
    }
}

pub fn descriptors(w: &Waveform, cfg: &PitchConfig) -> AcousticDescriptors {
    let track = estimate_f0_track(w, cfg);
    let loudness = w.rms();
    let voiced: Vec<f64> = track.voiced_f0().collect();
    if voiced.is_empty() {
        return AcousticDescriptors {
            loudness,
            ..Default::default()
        };
    }
    let speech_percent = voiced.len() as f64 / track.frames.len() as f64;
    let mean_f0 = voiced.iter().sum::<f64>() / voiced.len() as f64;
    let std_f0 = (voiced.iter().map(|f| (f - mean_f0).powi(2)).sum::<f64>() / voiced.len() as f64).sqrt();
    let (jitter, shimmer) = cycle_perturbation(w, &track);
    AcousticDescriptors {
        speech_percent,
        mean_f0,
        std_f0,
        jitter,
        shimmer,
        loudness,
        voiced: true,
    }
}

/// Mean absolute consecutive difference of periods and peak amplitudes,
/// each relative to its mean, pooled over all voiced runs.
fn cycle_perturbation(w: &Waveform, track: &F0Track) -> (f64, f64) {
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let mut period_diff = 0.0;
    let mut period_sum = 0.0;
    let mut amp_diff = 0.0;
    let mut amp_sum = 0.0;
    let mut n_pairs = 0usize;
    let mut n_cycles = 0usize;

    let mut i = 0;
    while i < track.frames.len() {
        if !track.frames[i].voiced {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < track.frames.len() && track.frames[j + 1].voiced {
            j += 1;
        }
        let run = &track.frames[i..=j];
        let lo = run[0].start;
        let hi = (run[run.len() - 1].start + track.window + track.max_lag).min(x.len());
        let peaks = pick_cycle_peaks(&x, lo, hi, run, track);
        for pair in peaks.windows(2) {
            let period = pair[1].0 - pair[0].0;
            period_sum += period;
            amp_sum += pair[0].1;
            n_cycles += 1;
        }
        for tri in peaks.windows(3) {
            let t0 = tri[1].0 - tri[0].0;
            let t1 = tri[2].0 - tri[1].0;
            period_diff += (t1 - t0).abs();
            amp_diff += (tri[1].1 - tri[0].1).abs();
            n_pairs += 1;
        }
        i = j + 1;
    }
    if n_pairs == 0 || period_sum <= 0.0 || amp_sum <= 0.0 {
        return (0.0, 0.0);
    }
    let mean_period = period_sum / n_cycles as f64;
    let mean_amp = amp_sum / n_cycles as f64;
    (
        (period_diff / n_pairs as f64) / mean_period,
        (amp_diff / n_pairs as f64) / mean_amp,
    )
}

/// Positive peaks one local period apart, as (fractional position, amplitude).
fn pick_cycle_peaks(x: &[f64], lo: usize, hi: usize, run: &[F0Frame], track: &F0Track) -> Vec<(f64, f64)> {
    let local_period = |pos: usize| -> f64 {
        let k = run
            .iter()
            .position(|f| f.start + track.window / 2 >= pos)
            .unwrap_or(run.len() - 1);
        track.sample_rate as f64 / run[k].f0
    };
    let mut peaks = Vec::new();
    let first_end = (lo + local_period(lo).ceil() as usize).min(hi);
    if first_end <= lo + 2 {
        return peaks;
    }
    let mut at = argmax(x, lo + 1, first_end);
    loop {
        if at == 0 || at + 1 >= x.len() {
            break;
        }
        let off = parabolic_offset(x[at - 1], x[at], x[at + 1]);
        let amp = x[at] - 0.25 * (x[at - 1] - x[at + 1]) * off;
        peaks.push((at as f64 + off, amp));
        let t = local_period(at);
        let from = at + (0.75 * t).round() as usize;
        let to = (at + (1.25 * t).round() as usize + 1).min(hi.saturating_sub(1));
        if from + 1 >= to {
            break;
        }
        at = argmax(x, from, to);
    }
    peaks
}

fn argmax(x: &[f64], from: usize, to: usize) -> usize {
    let mut best = from;
    for i in from..to {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}
