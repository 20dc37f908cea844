//! Source-filter vowel speech with planted speaker-level markers.
//!
//! Voiced phones are a glottal impulse train with per-cycle period jitter,
//! shaped by a cascade of three Klatt resonators at the vowel's formant
//! targets. Unvoiced phones are band-shaped noise or a near-silent pause.
//! Depressed speakers get a flatter intonation contour, a quieter voice and
//! more period jitter. All phone boundaries fall on whole milliseconds so
//! alignments are exact.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{label_for_score, Interval, ManifestRecord, PhonemeAlignment, VowelLabel};
use crate::audio::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::seed;

/// F1, F2, F3 targets in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VowelFormants {
    pub a: [f64; 3],
    pub e: [f64; 3],
    pub i: [f64; 3],
    pub o: [f64; 3],
    pub u: [f64; 3],
}

impl Default for VowelFormants {
    fn default() -> Self {
        Self {
            a: [730.0, 1090.0, 2440.0],
            e: [530.0, 1840.0, 2480.0],
            i: [270.0, 2290.0, 3010.0],
            o: [570.0, 840.0, 2410.0],
            u: [300.0, 870.0, 2240.0],
        }
    }
}

impl VowelFormants {
    pub fn get(&self, v: VowelLabel) -> Option<[f64; 3]> {
        match v {
            VowelLabel::A => Some(self.a),
            VowelLabel::E => Some(self.e),
            VowelLabel::I => Some(self.i),
            VowelLabel::O => Some(self.o),
            VowelLabel::U => Some(self.u),
            VowelLabel::Other => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub utterance_ms: [u32; 2],
    pub vowel_ms: [u32; 2],
    pub consonant_ms: [u32; 2],
    /// Probability that the next phone is a vowel.
    pub vowel_probability: f64,
    pub formants: VowelFormants,
    pub bandwidths: [f64; 3],
    /// Per-speaker multiplicative formant scale is drawn from `1 ± spread`.
    pub formant_spread: f64,
    pub f0_mean_hz: [f64; 2],
    /// Intonation standard deviation of control speakers.
    pub f0_std_hz: f64,
    /// Relative per-cycle period standard deviation of control speakers.
    pub jitter: f64,
    /// Vowel RMS of control speakers.
    pub loudness: f64,
    /// Per-speaker and per-utterance level variation, `1 ± spread`.
    pub speaker_level_spread: f64,
    pub utterance_level_spread: f64,
    pub depressed_f0_std_factor: f64,
    pub depressed_loudness_factor: f64,
    pub depressed_jitter_factor: f64,
    /// Fricative RMS relative to the speaker's vowel level.
    pub fricative_level: f64,
    pub pause_rms: f64,
    pub ramp_ms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            utterance_ms: [300, 600],
            vowel_ms: [120, 220],
            consonant_ms: [60, 120],
            vowel_probability: 0.55,
            formants: VowelFormants::default(),
            bandwidths: [60.0, 90.0, 150.0],
            formant_spread: 0.06,
            f0_mean_hz: [95.0, 175.0],
            f0_std_hz: 20.0,
            jitter: 0.005,
            loudness: 0.08,
            speaker_level_spread: 0.12,
            utterance_level_spread: 0.08,
            depressed_f0_std_factor: 0.4,
            depressed_loudness_factor: 0.6,
            depressed_jitter_factor: 2.0,
            fricative_level: 0.25,
            pause_rms: 0.002,
            ramp_ms: 3.0,
        }
    }
}

/// Ground truth of one generated speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTraits {
    pub speaker_id: String,
    pub depressed: bool,
    pub phq8: u32,
    pub f0_mean: f64,
    pub f0_std: f64,
    pub jitter: f64,
    pub loudness: f64,
    pub formant_scale: f64,
}

const CONSONANTS: [&str; 6] = ["s", "sh", "f", "t", "k", "sil"];

/// Write a corpus under `out_dir` and return the manifest path. The
/// directory gets `manifest.jsonl`, `speakers.json` and one folder of
/// `uNNN.wav` / `uNNN.tsv` pairs per speaker.
pub fn generate_synthetic_corpus(
    out_dir: &Path,
    seed: u64,
    n_speakers: usize,
    utterances_per_speaker: usize,
    depressed_fraction: f64,
    cfg: &SynthConfig,
) -> Result<PathBuf> {
    let mut problems = Vec::new();
    if n_speakers < 2 {
        problems.push(format!("n_speakers must be at least 2, got {n_speakers}"));
    }
    if utterances_per_speaker == 0 {
        problems.push("utterances_per_speaker must be positive".into());
    }
    if !(0.0..=1.0).contains(&depressed_fraction) {
        problems.push(format!("depressed_fraction must lie in [0, 1], got {depressed_fraction}"));
    }
    if cfg.utterance_ms[0] < 250 || cfg.utterance_ms[0] > cfg.utterance_ms[1] {
        problems.push(format!("utterance_ms range {:?} must start at 250 ms or more", cfg.utterance_ms));
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    let n_depressed = (n_speakers as f64 * depressed_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n_speakers).collect();
    order.shuffle(&mut seed::rng(seed, &["synth", "labels"]));
    let mut depressed = vec![false; n_speakers];
    for &i in &order[..n_depressed] {
        depressed[i] = true;
    }
    let width = n_speakers.to_string().len().max(3);
    let ids: Vec<String> = (1..=n_speakers).map(|i| format!("S{i:0width$}")).collect();

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let speakers: Vec<usize> = (0..n_speakers).collect();
    let written = crate::par::try_map_slice(&speakers, |&s| {
        write_speaker(out_dir, seed, &ids[s], depressed[s], utterances_per_speaker, cfg)
    })?;

    let mut manifest = String::new();
    let mut traits = Vec::with_capacity(n_speakers);
    for (record, t) in written {
        manifest.push_str(&serde_json::to_string(&record).expect("record serializes"));
        manifest.push('\n');
        traits.push(t);
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let traits_path = out_dir.join("speakers.json");
    let text = serde_json::to_string_pretty(&traits).expect("traits serialize");
    fs::write(&traits_path, text + "\n").map_err(|e| Error::io(&traits_path, e))?;
    Ok(manifest_path)
}

fn write_speaker(
    out_dir: &Path,
    seed: u64,
    id: &str,
    depressed: bool,
    n_utts: usize,
    cfg: &SynthConfig,
) -> Result<(ManifestRecord, SpeakerTraits)> {
    let mut rng = seed::rng(seed, &["synth", id]);
    let phq8 = if depressed {
        rng.random_range(10..=24)
    } else {
        rng.random_range(0..=9)
    };
    let level = 1.0 + rng.random_range(-cfg.speaker_level_spread..=cfg.speaker_level_spread);
    let traits = SpeakerTraits {
        speaker_id: id.to_string(),
        depressed,
        phq8,
        f0_mean: rng.random_range(cfg.f0_mean_hz[0]..=cfg.f0_mean_hz[1]),
        f0_std: cfg.f0_std_hz * if depressed { cfg.depressed_f0_std_factor } else { 1.0 },
        jitter: cfg.jitter * if depressed { cfg.depressed_jitter_factor } else { 1.0 },
        loudness: cfg.loudness * level * if depressed { cfg.depressed_loudness_factor } else { 1.0 },
        formant_scale: 1.0 + rng.random_range(-cfg.formant_spread..=cfg.formant_spread),
    };
    let dir = out_dir.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut audio = Vec::with_capacity(n_utts);
    let mut alignments = Vec::with_capacity(n_utts);
    for u in 0..n_utts {
        let (wave, alignment) = synthesize_utterance(&traits, cfg, &mut rng);
        let wav_name = format!("{id}/u{u:03}.wav");
        let tsv_name = format!("{id}/u{u:03}.tsv");
        write_wav(&out_dir.join(&wav_name), &wave)?;
        let tsv = out_dir.join(&tsv_name);
        fs::write(&tsv, alignment.to_text()).map_err(|e| Error::io(&tsv, e))?;
        audio.push(PathBuf::from(wav_name));
        alignments.push(PathBuf::from(tsv_name));
    }
    let record = ManifestRecord {
        speaker_id: id.to_string(),
        audio,
        alignments,
        phq8,
        label: Some(label_for_score(phq8)),
    };
    Ok((record, traits))
}

/// One utterance of `traits`'s voice with its exact phone alignment.
pub(crate) fn synthesize_utterance(
    traits: &SpeakerTraits,
    cfg: &SynthConfig,
    rng: &mut seed::Rng,
) -> (Waveform, PhonemeAlignment) {
    let sr = cfg.sample_rate as f64;
    let per_ms = cfg.sample_rate as usize / 1000;
    let target_ms = rng.random_range(cfg.utterance_ms[0]..=cfg.utterance_ms[1]);

    let mut phones: Vec<(u32, u32, &str, VowelLabel)> = Vec::new();
    let mut t = 0u32;
    let mut have_vowel = false;
    while t < target_ms || !have_vowel {
        let vowel = rng.random_bool(cfg.vowel_probability) || (!have_vowel && t + cfg.consonant_ms[1] >= target_ms);
        let (dur, name, label) = if vowel {
            let v = VowelLabel::VOWELS[rng.random_range(0..5)];
            have_vowel = true;
            (rng.random_range(cfg.vowel_ms[0]..=cfg.vowel_ms[1]), v.as_str(), v)
        } else {
            let c = CONSONANTS[rng.random_range(0..CONSONANTS.len())];
            (rng.random_range(cfg.consonant_ms[0]..=cfg.consonant_ms[1]), c, VowelLabel::Other)
        };
        phones.push((t, t + dur, name, label));
        t += dur;
    }
    let total = t as usize * per_ms;

    let source = glottal_source(total, traits, sr, rng);
    let utt_level = 1.0 + rng.random_range(-cfg.utterance_level_spread..=cfg.utterance_level_spread);
    let level = traits.loudness * utt_level;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let ramp = ((cfg.ramp_ms * sr / 1000.0).round() as usize).max(1);

    let mut samples = vec![0f64; total];
    for &(start, end, name, label) in &phones {
        let (a, b) = (start as usize * per_ms, end as usize * per_ms);
        let seg = &mut samples[a..b];
        let rms = match cfg.formants.get(label) {
            Some(f) => {
                seg.copy_from_slice(&source[a..b]);
                for (k, &fk) in f.iter().enumerate() {
                    resonate(seg, fk * traits.formant_scale, cfg.bandwidths[k], sr);
                }
                level
            }
            None if name == "sil" => {
                seg.iter_mut().for_each(|s| *s = unit.sample(rng));
                cfg.pause_rms
            }
            None => {
                seg.iter_mut().for_each(|s| *s = unit.sample(rng));
                let centre = if name.starts_with("sh") { 3000.0 } else { 5000.0 };
                resonate(seg, centre, 1500.0, sr);
                level * cfg.fricative_level
            }
        };
        let cur = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt();
        let gain = if cur > 0.0 { rms / cur } else { 0.0 };
        let n = seg.len();
        for (i, s) in seg.iter_mut().enumerate() {
            let edge = i.min(n - 1 - i);
            let env = if edge < ramp { edge as f64 / ramp as f64 } else { 1.0 };
            *s *= gain * env;
        }
    }

    let alignment = PhonemeAlignment {
        intervals: phones
            .iter()
            .map(|&(s, e, name, _)| Interval {
                start_ms: s as f64,
                end_ms: e as f64,
                phone: name.to_string(),
            })
            .collect(),
    };
    (
        Waveform::new(samples.into_iter().map(|v| v as f32).collect(), cfg.sample_rate),
        alignment,
    )
}

/// Unit impulses at jittered glottal closure instants following a slowly
/// varying intonation contour.
fn glottal_source(n: usize, traits: &SpeakerTraits, sr: f64, rng: &mut seed::Rng) -> Vec<f64> {
    let rate = rng.random_range(1.5..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let offset = Normal::new(0.0, 0.5 * traits.f0_std).expect("finite std").sample(rng);
    let jitter = Normal::new(0.0, traits.jitter).expect("finite jitter");
    let contour = |t: f64| {
        let f = traits.f0_mean + offset + traits.f0_std * std::f64::consts::SQRT_2 * (std::f64::consts::TAU * rate * t + phase).sin();
        f.max(60.0)
    };
    let mut out = vec![0.0; n];
    let mut pos = rng.random_range(0.0..sr / traits.f0_mean);
    while (pos as usize) < n {
        let i = pos as usize;
        // split the impulse linearly between neighbouring samples
        let frac = pos - i as f64;
        out[i] += 1.0 - frac;
        if i + 1 < n {
            out[i + 1] += frac;
        }
        let period = sr / contour(pos / sr) * (1.0 + jitter.sample(rng)).max(0.5);
        pos += period;
    }
    out
}

/// In-place second-order Klatt resonator with unit gain at DC.
fn resonate(x: &mut [f64], freq: f64, bw: f64, sr: f64) {
    let t = 1.0 / sr;
    let c = -(-2.0 * std::f64::consts::PI * bw * t).exp();
    let b = 2.0 * (-std::f64::consts::PI * bw * t).exp() * (2.0 * std::f64::consts::PI * freq * t).cos();
    let a = 1.0 - b - c;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = a * *v + b * y1 + c * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}
