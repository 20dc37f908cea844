//! Stage graph and on-disk handoff between stages.
//!
//! Every stage reads the outputs of earlier stages from a [`Layout`] and
//! writes only its own directory. Nothing time-dependent is written, so a
//! re-run with the same configuration and seed reproduces every file byte
//! for byte.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audio::{LogMelExtractor, Waveform};
use crate::augment::{build_depression_training_set, read_augmented, write_augmented};
use crate::config::{PipelineConfig, SplitConfig};
use crate::corpus::{generate_synthetic_corpus, load_corpus, Corpus, SpeakerRecord};
use crate::depression::{
    speaker_report, train_depression_cnn, window_partition, DepressionCnn, DepressionTrainReport, SpeakerPrediction,
};
use crate::embed::{embed_speaker, read_embeddings, write_embeddings, SpeakerEmbeddings};
use crate::error::{Error, Result};
use crate::eval::{
    correlate_descriptors, format_correlation_table, format_report_table, mcnemar, window_descriptors,
    ClassificationReport, CorrelationRow, McNemarResult,
};
use crate::segment::{build_vowel_training_set, featurize, SegmentRecord, SegmentSpan};
use crate::seed;
use crate::tensor::{load_checkpoint, manifest_path as checkpoint_manifest, save_checkpoint, CheckpointMeta};
use crate::vowel::{train_vowel_cnn, LabeledPatch, VowelCnn};

pub const CLASS_NAMES: [&str; 2] = ["non-depressed", "depressed"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Segment,
    TrainVowel,
    Embed,
    Augment,
    TrainDepression,
    Evaluate,
    Correlate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Segment,
        Stage::TrainVowel,
        Stage::Embed,
        Stage::Augment,
        Stage::TrainDepression,
        Stage::Evaluate,
        Stage::Correlate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Segment => "segment",
            Stage::TrainVowel => "train-vowel",
            Stage::Embed => "embed",
            Stage::Augment => "augment",
            Stage::TrainDepression => "train-depression",
            Stage::Evaluate => "evaluate",
            Stage::Correlate => "correlate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Output directory of each stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub corpus: PathBuf,
    pub segment: PathBuf,
    pub vowel: PathBuf,
    pub embed: PathBuf,
    pub augment: PathBuf,
    pub depression: PathBuf,
    pub evaluate: PathBuf,
    pub correlate: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            corpus: root.join("corpus"),
            segment: root.join("segment"),
            vowel: root.join("vowel"),
            embed: root.join("embed"),
            augment: root.join("augment"),
            depression: root.join("depression"),
            evaluate: root.join("evaluate"),
            correlate: root.join("correlate"),
        }
    }

    pub fn dir(&self, stage: Stage) -> &Path {
        match stage {
            Stage::Synth => &self.corpus,
            Stage::Segment => &self.segment,
            Stage::TrainVowel => &self.vowel,
            Stage::Embed => &self.embed,
            Stage::Augment => &self.augment,
            Stage::TrainDepression => &self.depression,
            Stage::Evaluate => &self.evaluate,
            Stage::Correlate => &self.correlate,
        }
    }

    pub fn vowel_model(&self) -> PathBuf {
        self.vowel.join("model")
    }

    pub fn depression_model(&self) -> PathBuf {
        self.depression.join("model")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

/// Speaker-disjoint split, stratified by label. Each class is shuffled with
/// its own stream; test takes the first share, dev the next.
pub fn split_speakers(speakers: &[SpeakerRecord], cfg: &SplitConfig, seed: u64) -> Result<Split> {
    let mut split = Split {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for label in [0u8, 1] {
        let mut ids: Vec<String> = speakers
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.speaker_id.clone())
            .collect();
        ids.sort();
        ids.shuffle(&mut seed::rng(seed, &["split", &label.to_string()]));
        let n = ids.len();
        let n_test = ((n as f64 * cfg.test_fraction).round() as usize).min(n);
        let n_dev = ((n as f64 * cfg.dev_fraction).round() as usize).min(n - n_test);
        if n - n_test - n_dev == 0 {
            return Err(Error::Config(vec![format!(
                "split leaves no {} speakers for training ({n} in total)",
                CLASS_NAMES[label as usize]
            )]));
        }
        split.test.extend(ids.drain(..n_test));
        split.dev.extend(ids.drain(..n_dev));
        split.train.extend(ids);
    }
    for part in [&mut split.train, &mut split.dev, &mut split.test] {
        part.sort();
    }
    Ok(split)
}

/// Seed of one stage, derived from the root seed.
pub fn stage_seed(cfg: &PipelineConfig, stage: Stage) -> u64 {
    seed::derive(cfg.seed, &[stage.name()])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what,
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text += &serde_json::to_string(item).expect("item serializes");
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                what,
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(stage: Stage, missing: Stage, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Prerequisite {
            stage: stage.name().into(),
            missing: missing.name().into(),
            path,
        })
    }
}

fn manifest_path(cfg: &PipelineConfig, layout: &Layout) -> PathBuf {
    cfg.corpus
        .manifest
        .clone()
        .unwrap_or_else(|| layout.corpus.join("manifest.jsonl"))
}

fn load_stage_corpus(stage: Stage, cfg: &PipelineConfig, layout: &Layout) -> Result<Corpus> {
    load_corpus(&require(stage, Stage::Synth, manifest_path(cfg, layout))?)
}

fn load_split(stage: Stage, layout: &Layout) -> Result<Split> {
    read_json(&require(stage, Stage::Segment, layout.segment.join("split.json"))?, "split")
}

fn select(speakers: &[SpeakerEmbeddings], ids: &[String]) -> Vec<SpeakerEmbeddings> {
    let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    speakers
        .iter()
        .filter(|s| keep.contains(s.speaker_id.as_str()))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub train_segments: [usize; 6],
    pub dev_segments: [usize; 6],
    pub candidate_train_segments: [usize; 6],
    pub skipped_utterances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub speakers: Vec<String>,
    pub labels: Vec<u8>,
    pub report: ClassificationReport,
}

fn synth(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    if cfg.corpus.manifest.is_some() {
        return Err(Error::Config(vec![
            "corpus.manifest is set; the synth stage only generates corpora".into(),
        ]));
    }
    let c = &cfg.corpus;
    let manifest = generate_synthetic_corpus(
        &layout.corpus,
        stage_seed(cfg, Stage::Synth),
        c.speakers,
        c.utterances,
        c.depressed_fraction,
        &c.synth,
    )?;
    Ok(format!(
        "synth: {} speakers x {} utterances -> {}",
        c.speakers,
        c.utterances,
        manifest.display()
    ))
}

fn segment(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    let corpus = load_stage_corpus(Stage::Segment, cfg, layout)?;
    let split = split_speakers(&corpus.speakers, &cfg.split, stage_seed(cfg, Stage::Segment))?;
    let extractor = LogMelExtractor::new(cfg.features.clone());
    let pick = |ids: &[String]| -> Vec<&SpeakerRecord> { ids.iter().filter_map(|id| corpus.speaker(id)).collect() };
    let seed = stage_seed(cfg, Stage::Segment);
    let train = build_vowel_training_set(
        &pick(&split.train),
        &cfg.segmentation,
        &extractor,
        cfg.vowel_data.max_train_segments,
        seed::derive(seed, &["train"]),
    )?;
    let dev = build_vowel_training_set(
        &pick(&split.dev),
        &cfg.segmentation,
        &extractor,
        cfg.vowel_data.max_dev_segments,
        seed::derive(seed, &["dev"]),
    )?;
    create_dir(&layout.segment)?;
    write_json(&layout.segment.join("split.json"), &split)?;
    train.write_records(&layout.segment.join("train_segments.jsonl"))?;
    dev.write_records(&layout.segment.join("dev_segments.jsonl"))?;
    let summary = SegmentSummary {
        train_segments: train.counts(),
        dev_segments: dev.counts(),
        candidate_train_segments: train.candidate_counts,
        skipped_utterances: train.skipped.len() + dev.skipped.len(),
    };
    write_json(&layout.segment.join("summary.json"), &summary)?;
    Ok(format!(
        "segment: {} train / {} dev / {} test speakers; {} train and {} dev segments (a e i o u other = {:?})",
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        train.segments.len(),
        dev.segments.len(),
        summary.train_segments
    ))
}

/// Re-featurize the segments listed in a records file.
fn load_segments(corpus: &Corpus, records: &[SegmentRecord], cfg: &PipelineConfig) -> Result<Vec<LabeledPatch>> {
    let extractor = LogMelExtractor::new(cfg.features.clone());
    let mut groups: Vec<(&str, usize, Vec<SegmentSpan>)> = Vec::new();
    for r in records {
        let span = SegmentSpan {
            start_ms: r.start_ms,
            end_ms: r.start_ms + cfg.segmentation.segment_ms,
            label: r.label,
        };
        match groups.last_mut() {
            Some((s, u, spans)) if *s == r.speaker && *u == r.utterance => spans.push(span),
            _ => groups.push((&r.speaker, r.utterance, vec![span])),
        }
    }
    let per_group = crate::par::try_map_slice(&groups, |(spk, idx, spans)| {
        let utt = corpus
            .speaker(spk)
            .and_then(|s| s.utterances.get(*idx))
            .ok_or_else(|| Error::Config(vec![format!("segment refers to unknown utterance {spk}/{idx}")]))?;
        featurize(utt, *idx, spans, &extractor)
    })?;
    Ok(per_group
        .into_iter()
        .flatten()
        .map(|s| LabeledPatch {
            label: s.span.label,
            patch: s.patch,
        })
        .collect())
}

fn train_vowel(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    let st = Stage::TrainVowel;
    let train_path = require(st, Stage::Segment, layout.segment.join("train_segments.jsonl"))?;
    let dev_path = require(st, Stage::Segment, layout.segment.join("dev_segments.jsonl"))?;
    let corpus = load_stage_corpus(st, cfg, layout)?;
    let train = load_segments(&corpus, &read_jsonl(&train_path, "segment records")?, cfg)?;
    let dev = load_segments(&corpus, &read_jsonl(&dev_path, "segment records")?, cfg)?;
    let seed = stage_seed(cfg, st);
    let (model, report) = train_vowel_cnn(&train, &dev, &cfg.vowel, seed)?;
    create_dir(&layout.vowel)?;
    let meta = CheckpointMeta {
        model: "vowel-cnn".into(),
        seed,
        hyperparameters: [
            ("lr", cfg.vowel.lr),
            ("l2", cfg.vowel.l2),
            ("batch_size", cfg.vowel.batch_size as f64),
            ("best_epoch", report.best_epoch as f64),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    };
    save_checkpoint(&model.params, &meta, &layout.vowel_model())?;
    write_json(&layout.vowel.join("report.json"), &report)?;
    let names: Vec<&str> = crate::corpus::VowelLabel::ALL.iter().map(|l| l.as_str()).collect();
    fs::write(layout.vowel.join("report.txt"), format_report_table(&report.dev, &names))
        .map_err(|e| Error::io(layout.vowel.join("report.txt"), e))?;
    Ok(format!(
        "train-vowel: {} train / {} dev segments, best epoch {} of {}, dev macro-F1 {:.4}",
        train.len(),
        dev.len(),
        report.best_epoch,
        report.history.len(),
        report.dev.macro_f1
    ))
}

fn load_vowel_model(stage: Stage, cfg: &PipelineConfig, layout: &Layout) -> Result<VowelCnn<f32>> {
    let base = layout.vowel_model();
    require(stage, Stage::TrainVowel, checkpoint_manifest(&base))?;
    VowelCnn::from_params(cfg.vowel.clone(), load_checkpoint(&base)?.params)
}

fn embed(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    let model = load_vowel_model(Stage::Embed, cfg, layout)?;
    let corpus = load_stage_corpus(Stage::Embed, cfg, layout)?;
    let extractor = LogMelExtractor::new(cfg.features.clone());
    let strategy = cfg.embedding.saliency;
    let speakers = corpus
        .speakers
        .iter()
        .map(|s| embed_speaker(&model, &extractor, s, strategy))
        .collect::<Result<Vec<_>>>()?;
    write_embeddings(&layout.embed, &speakers, strategy)?;
    Ok(format!(
        "embed: {} utterances of {} speakers, saliency {}",
        corpus.utterance_count(),
        speakers.len(),
        strategy.as_str()
    ))
}

fn load_embeddings(stage: Stage, layout: &Layout) -> Result<Vec<SpeakerEmbeddings>> {
    require(stage, Stage::Embed, layout.embed.join("index.json"))?;
    Ok(read_embeddings(&layout.embed)?.1)
}

fn augment(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    let split = load_split(Stage::Augment, layout)?;
    let all = load_embeddings(Stage::Augment, layout)?;
    let train = select(&all, &split.train);
    let set = build_depression_training_set(&train, &cfg.augment, stage_seed(cfg, Stage::Augment))?;
    write_augmented(&layout.augment, &set, &cfg.augment)?;
    let [neg, pos] = set.class_counts();
    Ok(format!(
        "augment: {} windows of {} ({} depressed, {} non-depressed), p = {}, r = {}",
        set.samples.len(),
        set.n,
        pos,
        neg,
        cfg.augment.p,
        cfg.augment.r
    ))
}

fn train_depression(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    let st = Stage::TrainDepression;
    require(st, Stage::Augment, layout.augment.join("augmented.json"))?;
    let (set, aug) = read_augmented(&layout.augment)?;
    let split = load_split(st, layout)?;
    let dev = select(&load_embeddings(st, layout)?, &split.dev);
    let seed = stage_seed(cfg, st);
    let (model, report) = train_depression_cnn(&set, &dev, &cfg.depression, aug.c, seed)?;
    create_dir(&layout.depression)?;
    let meta = CheckpointMeta {
        model: "depression-cnn".into(),
        seed,
        hyperparameters: [
            ("n", set.n as f64),
            ("c", aug.c as f64),
            ("p", aug.p as f64),
            ("r", aug.r as f64),
            ("lr", cfg.depression.lr),
            ("l2", cfg.depression.l2),
            ("batch_size", cfg.depression.batch_size as f64),
            ("best_epoch", report.best_epoch as f64),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    };
    save_checkpoint(&model.params, &meta, &layout.depression_model())?;
    write_json(&layout.depression.join("report.json"), &report)?;
    Ok(summarize_depression(set.samples.len(), &report))
}

fn summarize_depression(windows: usize, report: &DepressionTrainReport) -> String {
    format!(
        "train-depression: {windows} windows, best epoch {} of {}, dev speaker macro-F1 {:.4}",
        report.best_epoch,
        report.history.len(),
        report.dev.macro_f1
    )
}

/// Frozen depression model with its window size and pad constant.
fn load_depression_model(stage: Stage, cfg: &PipelineConfig, layout: &Layout) -> Result<(DepressionCnn<f32>, f32)> {
    let base = layout.depression_model();
    require(stage, Stage::TrainDepression, checkpoint_manifest(&base))?;
    let ckpt = load_checkpoint(&base)?;
    let hp = |k: &str| {
        ckpt.meta.hyperparameters.get(k).copied().ok_or_else(|| {
            Error::from(crate::CheckpointError::Schema(format!("depression checkpoint lacks `{k}`")))
        })
    };
    let n = hp("n")? as usize;
    let c = hp("c")? as f32;
    Ok((DepressionCnn::from_params(cfg.depression.clone(), n, ckpt.params)?, c))
}

fn evaluate(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    let st = Stage::Evaluate;
    let (model, c) = load_depression_model(st, cfg, layout)?;
    let split = load_split(st, layout)?;
    let test = select(&load_embeddings(st, layout)?, &split.test);
    let preds = crate::par::try_map_slice(&test, |s| model.predict_speaker(s, c))?;
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let report = speaker_report(&preds, &labels)?;
    create_dir(&layout.evaluate)?;
    write_jsonl(&layout.evaluate.join("predictions.jsonl"), &preds)?;
    let out = EvaluationReport {
        speakers: test.iter().map(|s| s.speaker_id.clone()).collect(),
        labels,
        report,
    };
    write_json(&layout.evaluate.join("report.json"), &out)?;
    let table = format_report_table(&out.report, &CLASS_NAMES);
    fs::write(layout.evaluate.join("report.txt"), &table).map_err(|e| Error::io(layout.evaluate.join("report.txt"), e))?;
    Ok(format!(
        "evaluate: {} test speakers, depressed F1 {:.4}, macro-F1 {:.4}\n{}",
        out.speakers.len(),
        out.report.per_class[1].f1,
        out.report.macro_f1,
        table.trim_end()
    ))
}

pub fn read_evaluation(dir: &Path) -> Result<(EvaluationReport, Vec<SpeakerPrediction>)> {
    let report = read_json(&dir.join("report.json"), "evaluation report")?;
    let preds = read_jsonl(&dir.join("predictions.jsonl"), "predictions")?;
    Ok((report, preds))
}

fn correlate(cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    let st = Stage::Correlate;
    let pred_path = require(st, Stage::Evaluate, layout.evaluate.join("predictions.jsonl"))?;
    let preds: Vec<SpeakerPrediction> = read_jsonl(&pred_path, "predictions")?;
    let (model, _) = load_depression_model(st, cfg, layout)?;
    let corpus = load_stage_corpus(st, cfg, layout)?;
    let sr = cfg.features.sample_rate;
    let mut rows = Vec::new();
    let mut probs = Vec::new();
    for p in &preds {
        let spk = corpus
            .speaker(&p.speaker_id)
            .ok_or_else(|| Error::Config(vec![format!("prediction for unknown speaker {}", p.speaker_id)]))?;
        let windows = window_partition(spk.utterances.len(), model.n);
        let waves: Vec<Waveform> = crate::par::try_map_slice(&spk.utterances, |u| u.load_waveform(sr))?;
        rows.extend(window_descriptors(&waves, &windows, &cfg.pitch));
        probs.extend_from_slice(&p.window_probs);
    }
    let table: Vec<CorrelationRow> = correlate_descriptors(&rows, &probs)?;
    create_dir(&layout.correlate)?;
    write_json(&layout.correlate.join("correlations.json"), &table)?;
    let text = format_correlation_table(&table);
    fs::write(layout.correlate.join("correlations.txt"), &text)
        .map_err(|e| Error::io(layout.correlate.join("correlations.txt"), e))?;
    Ok(format!("correlate: {} windows\n{}", probs.len(), text.trim_end()))
}

/// Run one stage; returns a human-readable summary.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, layout: &Layout) -> Result<String> {
    cfg.validate()?;
    match stage {
        Stage::Synth => synth(cfg, layout),
        Stage::Segment => segment(cfg, layout),
        Stage::TrainVowel => train_vowel(cfg, layout),
        Stage::Embed => embed(cfg, layout),
        Stage::Augment => augment(cfg, layout),
        Stage::TrainDepression => train_depression(cfg, layout),
        Stage::Evaluate => evaluate(cfg, layout),
        Stage::Correlate => correlate(cfg, layout),
    }
}

/// Every stage in order (skipping `synth` for an existing corpus), after
/// writing the resolved configuration to `<root>/config.toml`.
pub fn run_pipeline(cfg: &PipelineConfig, root: &Path, mut progress: impl FnMut(&str)) -> Result<Layout> {
    cfg.validate()?;
    create_dir(root)?;
    let path = root.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    let layout = Layout::new(root);
    for stage in Stage::ALL {
        if stage == Stage::Synth && cfg.corpus.manifest.is_some() {
            continue;
        }
        progress(&run_stage(stage, cfg, &layout)?);
    }
    Ok(layout)
}

/// McNemar's test between two evaluation outputs over the same speakers.
pub fn compare_evaluations(a: &Path, b: &Path) -> Result<McNemarResult> {
    let (ra, pa) = read_evaluation(a)?;
    let (rb, pb) = read_evaluation(b)?;
    if ra.speakers != rb.speakers || ra.labels != rb.labels {
        return Err(Error::Config(vec![format!(
            "{} and {} evaluate different speakers",
            a.display(),
            b.display()
        )]));
    }
    let la: Vec<usize> = pa.iter().map(|p| p.label as usize).collect();
    let lb: Vec<usize> = pb.iter().map(|p| p.label as usize).collect();
    let truth: Vec<usize> = ra.labels.iter().map(|&l| l as usize).collect();
    mcnemar(&la, &lb, &truth)
}
