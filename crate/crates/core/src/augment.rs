//! Saliency-protected window augmentation for the depression CNN.
//!
//! Each sample is a run of `n` consecutive utterance embeddings from one
//! speaker. The `r` most salient rows of the window are protected, and `p`
//! of the remaining rows are overwritten with the constant `c`.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embed::{bytes_to_rows, rows_to_bytes, SpeakerEmbeddings};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub n: usize,
    pub pos: usize,
    pub neg: usize,
    pub p: usize,
    pub r: usize,
    pub c: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::preset(42)
    }
}

impl AugmentConfig {
    /// Constants for the three window sizes; other sizes get the `n = 42`
    /// counts with `r = n / 2`.
    pub fn preset(n: usize) -> Self {
        let (pos, neg, p) = match n {
            21 => (16, 8, 2),
            10 => (32, 16, 1),
            _ => (8, 4, 6),
        };
        Self {
            n,
            pos,
            neg,
            p,
            r: if n == 42 { 21 } else { n / 2 },
            c: 0.001,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n == 0 {
            out.push("augment.n must be positive".into());
        }
        if self.p + self.r > self.n {
            out.push(format!(
                "augment.p + augment.r must not exceed augment.n ({} + {} > {})",
                self.p, self.r, self.n
            ));
        }
        if !self.c.is_finite() {
            out.push("augment.c must be finite".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub speaker_id: String,
    pub label: u8,
    pub window_start: usize,
    /// Window-relative indices overwritten with `c`, ascending.
    pub perturbed: Vec<usize>,
    /// Constant rows appended because the speaker has fewer than `n`
    /// utterances.
    pub padded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    /// `n` rows of embedding values.
    pub rows: Vec<Vec<f32>>,
    pub provenance: Provenance,
}

impl AugmentedSample {
    pub fn label(&self) -> u8 {
        self.provenance.label
    }
}

/// Window indices ordered by descending saliency, lower index first on ties.
pub fn saliency_ranking(saliency: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..saliency.len()).collect();
    idx.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b)));
    idx
}

/// Draw `pos` (label 1) or `neg` (label 0) augmented windows for one speaker.
pub fn augment_speaker(spk: &SpeakerEmbeddings, cfg: &AugmentConfig, rng: &mut seed::Rng) -> Result<Vec<AugmentedSample>> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if spk.is_empty() || spk.saliency.len() != spk.len() {
        return Err(Error::Config(vec![format!(
            "speaker {} needs one saliency score per utterance ({} rows, {} scores)",
            spk.speaker_id,
            spk.len(),
            spk.saliency.len()
        )]));
    }
    let count = if spk.label == 1 { cfg.pos } else { cfg.neg };
    let u = spk.len();
    let dim = spk.dim();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let start = if u > cfg.n { rng.random_range(0..=u - cfg.n) } else { 0 };
        let real = cfg.n.min(u);
        let ranking = saliency_ranking(&spk.saliency[start..start + real]);
        let eligible: Vec<usize> = ranking.into_iter().skip(cfg.r).collect();
        let k = cfg.p.min(eligible.len());
        let mut perturbed: Vec<usize> = sample(rng, eligible.len(), k).into_iter().map(|i| eligible[i]).collect();
        perturbed.sort_unstable();

        let mut rows: Vec<Vec<f32>> = spk.rows[start..start + real].to_vec();
        for &i in &perturbed {
            rows[i] = vec![cfg.c; dim];
        }
        rows.resize(cfg.n, vec![cfg.c; dim]);
        out.push(AugmentedSample {
            rows,
            provenance: Provenance {
                speaker_id: spk.speaker_id.clone(),
                label: spk.label,
                window_start: start,
                perturbed,
                padded: cfg.n - real,
            },
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSet {
    pub samples: Vec<AugmentedSample>,
    pub n: usize,
    pub dim: usize,
}

impl AugmentedSet {
    /// Samples per class, `[label 0, label 1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.samples.iter().filter(|s| s.label() == 1).count();
        [self.samples.len() - ones, ones]
    }
}

/// Union of every speaker's augmented windows, in speaker order. Each
/// speaker draws from its own stream derived from `seed` and its id.
pub fn build_depression_training_set(speakers: &[SpeakerEmbeddings], cfg: &AugmentConfig, seed: u64) -> Result<AugmentedSet> {
    if speakers.is_empty() {
        return Err(Error::Config(vec!["augmentation needs at least one speaker".into()]));
    }
    let per = crate::par::try_map_slice(speakers, |s| {
        augment_speaker(s, cfg, &mut seed::rng(seed, &["augment", &s.speaker_id]))
    })?;
    Ok(AugmentedSet {
        samples: per.into_iter().flatten().collect(),
        n: cfg.n,
        dim: speakers[0].dim(),
    })
}

#[derive(Serialize, Deserialize)]
struct AugmentedIndex {
    n: usize,
    dim: usize,
    config: AugmentConfig,
    samples: Vec<Provenance>,
}

/// `augmented.bin` (all sample rows, little-endian f32) and
/// `augmented.json` (config and per-sample provenance).
pub fn write_augmented(dir: &Path, set: &AugmentedSet, cfg: &AugmentConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<Vec<f32>> = set.samples.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    let bin = dir.join("augmented.bin");
    fs::write(&bin, rows_to_bytes(&rows)).map_err(|e| Error::io(&bin, e))?;
    let index = AugmentedIndex {
        n: set.n,
        dim: set.dim,
        config: cfg.clone(),
        samples: set.samples.iter().map(|s| s.provenance.clone()).collect(),
    };
    let json = dir.join("augmented.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
}

pub fn read_augmented(dir: &Path) -> Result<(AugmentedSet, AugmentConfig)> {
    let json = dir.join("augmented.json");
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let index: AugmentedIndex = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "augmented index",
        path: json.clone(),
        detail: e.to_string(),
    })?;
    let bin = dir.join("augmented.bin");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let rows = bytes_to_rows(&bytes, index.dim, &bin)?;
    if rows.len() != index.n * index.samples.len() {
        return Err(Error::Format {
            what: "augmented rows",
            path: bin,
            detail: format!("expected {} rows, found {}", index.n * index.samples.len(), rows.len()),
        });
    }
    let mut chunks = rows.chunks(index.n.max(1));
    let samples = index
        .samples
        .into_iter()
        .map(|provenance| AugmentedSample {
            rows: chunks.next().expect("counted").to_vec(),
            provenance,
        })
        .collect();
    Ok((
        AugmentedSet {
            samples,
            n: index.n,
            dim: index.dim,
        },
        index.config,
    ))
}
