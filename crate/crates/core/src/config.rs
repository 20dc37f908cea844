//! Pipeline configuration, read from and written to TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{MelConfig, PitchConfig};
use crate::augment::AugmentConfig;
use crate::corpus::SynthConfig;
use crate::depression::DepressionCnnConfig;
use crate::error::{Error, Result};
use crate::segment::OverlapPolicy;
use crate::vowel::{SaliencyStrategy, VowelCnnConfig};

/// Where the speech comes from: an existing manifest, or a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Manifest of an existing corpus. When unset the `synth` stage
    /// generates one under the output directory.
    pub manifest: Option<PathBuf>,
    pub speakers: usize,
    pub utterances: usize,
    pub depressed_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            speakers: 40,
            utterances: 60,
            depressed_fraction: 0.3,
            synth: SynthConfig::default(),
        }
    }
}

/// Speaker-disjoint split, stratified by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub dev_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            dev_fraction: 0.2,
            test_fraction: 0.3,
        }
    }
}

/// Optional caps on the number of vowel segments featurized for training
/// and model selection.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct VowelDataConfig {
    pub max_train_segments: Option<usize>,
    pub max_dev_segments: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub saliency: SaliencyStrategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    pub segmentation: OverlapPolicy,
    pub features: MelConfig,
    pub pitch: PitchConfig,
    pub vowel: VowelCnnConfig,
    pub vowel_data: VowelDataConfig,
    pub embedding: EmbeddingConfig,
    pub augment: AugmentConfig,
    pub depression: DepressionCnnConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            split: SplitConfig::default(),
            segmentation: OverlapPolicy::default(),
            features: MelConfig::default(),
            pitch: PitchConfig::default(),
            vowel: VowelCnnConfig::default(),
            vowel_data: VowelDataConfig::default(),
            embedding: EmbeddingConfig::default(),
            augment: AugmentConfig::default(),
            depression: DepressionCnnConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            what: "configuration",
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Switch to window size `n`, taking that size's augmentation counts.
    /// The perturbation constant is kept.
    pub fn set_window(&mut self, n: usize) {
        let c = self.augment.c;
        self.augment = AugmentConfig { c, ..AugmentConfig::preset(n) };
    }

    /// Perturbation ablation: windows are oversampled but never perturbed.
    pub fn disable_perturbation(&mut self) {
        self.augment.p = 0;
    }

    /// Every violated constraint, across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let c = &self.corpus;
        if c.manifest.is_none() {
            if c.speakers < 2 {
                out.push(format!("corpus.speakers must be at least 2, got {}", c.speakers));
            }
            if c.utterances == 0 {
                out.push("corpus.utterances must be positive".into());
            }
            if !(c.depressed_fraction > 0.0 && c.depressed_fraction < 1.0) {
                out.push(format!(
                    "corpus.depressed_fraction must lie in (0, 1), got {}",
                    c.depressed_fraction
                ));
            }
        }
        let s = &self.split;
        if !(s.dev_fraction >= 0.0 && s.test_fraction > 0.0 && s.dev_fraction + s.test_fraction < 1.0) {
            out.push(format!(
                "split fractions must satisfy dev >= 0, test > 0, dev + test < 1 (got {} and {})",
                s.dev_fraction, s.test_fraction
            ));
        }
        out.extend(self.segmentation.validate());
        if self.features.n_mels != self.vowel.n_mels {
            out.push(format!(
                "features.n_mels ({}) must equal vowel.n_mels ({})",
                self.features.n_mels, self.vowel.n_mels
            ));
        }
        if self.features.sample_rate != c.synth.sample_rate && c.manifest.is_none() {
            out.push(format!(
                "features.sample_rate ({}) must equal corpus.synth.sample_rate ({})",
                self.features.sample_rate, c.synth.sample_rate
            ));
        }
        out.extend(self.vowel.validate());
        if self.vowel.hidden != self.depression.embed_dim {
            out.push(format!(
                "depression.embed_dim ({}) must equal vowel.hidden ({})",
                self.depression.embed_dim, self.vowel.hidden
            ));
        }
        out.extend(self.augment.validate());
        out.extend(self.depression.validate(self.augment.n));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}
