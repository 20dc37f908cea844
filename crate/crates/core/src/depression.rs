//! Depression CNN over windows of utterance embeddings, and speaker-level
//! soft voting.
//!
//! A window of `n` embeddings is read as `[128 channels × n positions]`:
//! two blocks of conv1d (kernel 7) → ReLU → max pool 2, then a 64-unit
//! hidden layer and two logits.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentedSample, AugmentedSet};
use crate::embed::SpeakerEmbeddings;
use crate::error::{Error, Result};
use crate::eval::{classification_report, ClassificationReport};
use crate::seed;
use crate::tensor::{softmax, Adam, Graph, ModelParameters, ParamGrads, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    /// Valid convolutions when they leave at least one position, else `same`.
    #[default]
    Auto,
    Valid,
    /// Symmetric zero padding of `kernel / 2` per convolution.
    Same,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepressionCnnConfig {
    pub embed_dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub classes: usize,
    pub padding: PaddingMode,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for DepressionCnnConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            filters: 32,
            kernel: 7,
            pool: 2,
            blocks: 2,
            hidden: 64,
            classes: 2,
            padding: PaddingMode::Auto,
            lr: 0.001,
            l2: 0.01,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
        }
    }
}

impl DepressionCnnConfig {
    fn chain(&self, n: usize, pad: usize) -> Option<usize> {
        let mut len = n;
        for _ in 0..self.blocks {
            len = (len + 2 * pad).checked_sub(self.kernel - 1)? / self.pool;
            if len == 0 {
                return None;
            }
        }
        Some(len)
    }

    /// Per-side padding used for window size `n`.
    pub fn padding_for(&self, n: usize) -> usize {
        match self.padding {
            PaddingMode::Valid => 0,
            PaddingMode::Same => self.kernel / 2,
            PaddingMode::Auto => {
                if self.chain(n, 0).is_some() {
                    0
                } else {
                    self.kernel / 2
                }
            }
        }
    }

    /// Positions left after the conv blocks, if any.
    pub fn final_length(&self, n: usize) -> Option<usize> {
        self.chain(n, self.padding_for(n))
    }

    pub fn validate(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("filters", self.filters),
            ("kernel", self.kernel),
            ("pool", self.pool),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ] {
            if v == 0 {
                out.push(format!("depression.{name} must be positive"));
            }
        }
        if self.classes != 2 {
            out.push(format!("depression.classes must be 2, got {}", self.classes));
        }
        if !(self.lr > 0.0) {
            out.push(format!("depression.lr must be positive, got {}", self.lr));
        }
        if !(self.l2 >= 0.0) {
            out.push(format!("depression.l2 must be non-negative, got {}", self.l2));
        }
        if self.kernel > 0 && self.pool > 0 && self.final_length(n).is_none() {
            out.push(format!("window size {n} vanishes in the depression CNN with {:?} padding", self.padding));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepressionCnn<F: Scalar = f32> {
    pub cfg: DepressionCnnConfig,
    pub n: usize,
    pub params: ModelParameters<F>,
}

pub struct DepressionForward {
    pub logits: Var,
    pub dims: Vec<(String, Vec<usize>)>,
    pub params: Vec<(String, Var)>,
}

impl<F: Scalar> DepressionCnn<F> {
    pub fn new(cfg: DepressionCnnConfig, n: usize, seed: u64) -> Result<Self> {
        let problems = cfg.validate(n);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = seed::rng(seed, &["depression", "init"]);
        let mut uniform = |shape: &[usize], bound: f64| {
            Tensor::from_fn(shape.to_vec(), |_| F::from_f64(rng.random_range(-bound..bound)))
        };
        let mut params = ModelParameters::new();
        let mut cin = cfg.embed_dim;
        for b in 1..=cfg.blocks {
            let bound = 1.0 / ((cin * cfg.kernel) as f64).sqrt();
            params.insert(format!("conv{b}.weight"), uniform(&[cfg.filters, cin, cfg.kernel], bound), true);
            params.insert(format!("conv{b}.bias"), uniform(&[cfg.filters], bound), true);
            cin = cfg.filters;
        }
        let flat = cfg.filters * cfg.final_length(n).expect("validated");
        let bound = 1.0 / (flat as f64).sqrt();
        params.insert("fc.weight", uniform(&[cfg.hidden, flat], bound), true);
        params.insert("fc.bias", uniform(&[cfg.hidden], bound), true);
        let bound = 1.0 / (cfg.hidden as f64).sqrt();
        params.insert("out.weight", uniform(&[cfg.classes, cfg.hidden], bound), true);
        params.insert("out.bias", uniform(&[cfg.classes], bound), true);
        Ok(Self { cfg, n, params })
    }

    pub fn from_params(cfg: DepressionCnnConfig, n: usize, params: ModelParameters<F>) -> Result<Self> {
        let mut model = Self::new(cfg, n, 0)?;
        model.params.restore_from(&params)?;
        Ok(model)
    }

    pub fn cast<G: Scalar>(&self) -> DepressionCnn<G> {
        DepressionCnn {
            cfg: self.cfg.clone(),
            n: self.n,
            params: self.params.cast(),
        }
    }

    /// Forward pass on `x: [N, embed_dim, n]`.
    pub fn forward(&self, g: &mut Graph<F>, x: Var, track_params: bool) -> Result<DepressionForward> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.cfg.embed_dim || xs[2] != self.n {
            return Err(Error::dim(
                "forward_depression",
                "n",
                format!("expected [N, {}, {}], got {xs:?}", self.cfg.embed_dim, self.n),
            ));
        }
        let mut tracked = Vec::new();
        let mut leaf = |g: &mut Graph<F>, name: String| {
            let t = self.params.tensor(&name).clone();
            if track_params {
                let v = g.param(t);
                tracked.push((name, v));
                v
            } else {
                g.constant(t)
            }
        };
        let pad = self.cfg.padding_for(self.n);
        let mut dims = Vec::new();
        let mut h = x;
        for b in 1..=self.cfg.blocks {
            let k = leaf(g, format!("conv{b}.weight"));
            let bias = leaf(g, format!("conv{b}.bias"));
            h = g.conv1d(h, k, pad)?;
            h = g.channel_bias(h, bias)?;
            h = g.relu(h);
            h = g.max_pool1d(h, self.cfg.pool)?;
            dims.push((format!("block{b}"), g.shape(h)[1..].to_vec()));
        }
        h = g.flatten(h)?;
        let (w, b) = (leaf(g, "fc.weight".into()), leaf(g, "fc.bias".into()));
        h = g.dense(h, w, b)?;
        h = g.relu(h);
        dims.push(("fc".into(), g.shape(h)[1..].to_vec()));
        let (w, b) = (leaf(g, "out.weight".into()), leaf(g, "out.bias".into()));
        let logits = g.dense(h, w, b)?;
        dims.push(("output".into(), g.shape(logits)[1..].to_vec()));
        Ok(DepressionForward {
            logits,
            dims,
            params: tracked,
        })
    }

    pub fn trace_dims(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, self.cfg.embed_dim, self.n]));
        Ok(self.forward(&mut g, x, false)?.dims)
    }

    /// Logits of one `[n × embed_dim]` window given row by row.
    pub fn window_logits(&self, rows: &[Vec<F>]) -> Result<Vec<F>> {
        let mut g = Graph::new();
        let x = g.constant(windows_tensor(&[rows], self.cfg.embed_dim)?);
        let f = self.forward(&mut g, x, false)?;
        Ok(g.value(f.logits).data().to_vec())
    }
}

/// Stack windows of `n` rows into `[N, dim, n]` (embedding components
/// become channels).
pub fn windows_tensor<F: Scalar, R: AsRef<[Vec<F>]>>(windows: &[R], dim: usize) -> Result<Tensor<F>> {
    let n = windows.first().map_or(0, |w| w.as_ref().len());
    let mut data = vec![F::zero(); windows.len() * dim * n];
    for (s, w) in windows.iter().enumerate() {
        let w = w.as_ref();
        if w.len() != n {
            return Err(Error::dim("forward_depression", "n", format!("windows of {n} and {} rows", w.len())));
        }
        for (t, row) in w.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dim(
                    "forward_depression",
                    "embed_dim",
                    format!("expected {dim} columns, got {}", row.len()),
                ));
            }
            for (ch, &v) in row.iter().enumerate() {
                data[(s * dim + ch) * n + t] = v;
            }
        }
    }
    Tensor::new([windows.len(), dim, n], data)
}

/// Non-overlapping windows `[0, n), [n, 2n), …`; a trailing partial window
/// is dropped unless it is the only one.
pub fn window_partition(u: usize, n: usize) -> Vec<Range<usize>> {
    if u == 0 || n == 0 {
        return Vec::new();
    }
    if u < n {
        return vec![0..u];
    }
    (0..u / n).map(|k| k * n..(k + 1) * n).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPrediction {
    pub speaker_id: String,
    pub window_probs: Vec<f64>,
    pub mean_prob: f64,
    pub label: u8,
}

/// Soft vote: label 1 iff the mean window probability is at least 0.5.
pub fn soft_vote(speaker_id: &str, window_probs: Vec<f64>) -> SpeakerPrediction {
    let mean_prob = if window_probs.is_empty() {
        0.0
    } else {
        window_probs.iter().sum::<f64>() / window_probs.len() as f64
    };
    SpeakerPrediction {
        speaker_id: speaker_id.to_string(),
        label: u8::from(mean_prob >= 0.5),
        window_probs,
        mean_prob,
    }
}

impl DepressionCnn<f32> {
    /// Depression probability of each window (rows padded with `pad_value`
    /// when the speaker is shorter than one window).
    pub fn window_probs(&self, rows: &[Vec<f32>], pad_value: f32) -> Result<Vec<f64>> {
        let windows: Vec<Vec<Vec<f32>>> = window_partition(rows.len(), self.n)
            .into_iter()
            .map(|r| {
                let mut w = rows[r].to_vec();
                w.resize(self.n, vec![pad_value; self.cfg.embed_dim]);
                w
            })
            .collect();
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.constant(windows_tensor(&windows, self.cfg.embed_dim)?);
        let f = self.forward(&mut g, x, false)?;
        Ok(g.value(f.logits)
            .data()
            .chunks(self.cfg.classes)
            .map(|l| softmax(l)[1] as f64)
            .collect())
    }

    pub fn predict_speaker(&self, spk: &SpeakerEmbeddings, pad_value: f32) -> Result<SpeakerPrediction> {
        Ok(soft_vote(&spk.speaker_id, self.window_probs(&spk.rows, pad_value)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepressionEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    pub dev_log_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepressionTrainReport {
    pub history: Vec<DepressionEpoch>,
    pub best_epoch: usize,
    pub dev: ClassificationReport,
}

/// Speaker-level report of soft-voted predictions.
pub fn speaker_report(preds: &[SpeakerPrediction], labels: &[u8]) -> Result<ClassificationReport> {
    let p: Vec<usize> = preds.iter().map(|p| p.label as usize).collect();
    let l: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    classification_report(&p, &l, 2)
}

/// Train on augmented windows with early stopping on the development
/// speakers' soft-voted macro-F1 (training windows when `dev` is empty).
/// Equal macro-F1 is broken by the lower log loss of the voted
/// probabilities.
pub fn train_depression_cnn(
    train: &AugmentedSet,
    dev: &[SpeakerEmbeddings],
    cfg: &DepressionCnnConfig,
    pad_value: f32,
    seed: u64,
) -> Result<(DepressionCnn<f32>, DepressionTrainReport)> {
    let counts = train.class_counts();
    if counts.contains(&0) {
        return Err(Error::Config(vec![format!(
            "depression training needs both classes, got {} negative and {} positive windows",
            counts[0], counts[1]
        )]));
    }
    let mut model = DepressionCnn::<f32>::new(cfg.clone(), train.n, seed)?;
    let opt = Adam::new(cfg.lr, cfg.l2);
    let mut rng = seed::rng(seed, &["depression", "shuffle"]);
    let mut order: Vec<usize> = (0..train.samples.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, f64, usize, ModelParameters<f32>, ClassificationReport)> = None;
    let mut since_best = 0;
    let dev_labels: Vec<u8> = dev.iter().map(|s| s.label).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let windows: Vec<&[Vec<f32>]> = chunk.iter().map(|&i| train.samples[i].rows.as_slice()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train.samples[i].label() as usize).collect();
            let mut g = Graph::new();
            let x = g.constant(windows_tensor(&windows, cfg.embed_dim)?);
            let f = model.forward(&mut g, x, true)?;
            let loss = g.softmax_cross_entropy(f.logits, &targets)?;
            loss_sum += g.value(loss).data()[0] as f64 * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let mut pg = ParamGrads::new();
            for (name, v) in &f.params {
                if let Some(gr) = grads.take(*v) {
                    pg.insert(name.clone(), gr);
                }
            }
            opt.step(&mut model.params, &pg)?;
        }
        let (probs, labels): (Vec<f64>, Vec<u8>) = if dev.is_empty() {
            let probs = train
                .samples
                .iter()
                .map(|s| model.window_probs(&s.rows, pad_value).map(|p| p[0]))
                .collect::<Result<_>>()?;
            (probs, train.samples.iter().map(AugmentedSample::label).collect())
        } else {
            let preds = crate::par::try_map_slice(dev, |s| model.predict_speaker(s, pad_value))?;
            (preds.into_iter().map(|p| p.mean_prob).collect(), dev_labels.clone())
        };
        let pred: Vec<usize> = probs.iter().map(|&p| usize::from(p >= 0.5)).collect();
        let truth: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let report = classification_report(&pred, &truth, 2)?;
        let log_loss = probs
            .iter()
            .zip(&labels)
            .map(|(&p, &l)| {
                let p = p.clamp(1e-7, 1.0 - 1e-7);
                -if l == 1 { p.ln() } else { (1.0 - p).ln() }
            })
            .sum::<f64>()
            / probs.len() as f64;
        history.push(DepressionEpoch {
            epoch,
            train_loss: loss_sum / train.samples.len() as f64,
            dev_macro_f1: report.macro_f1,
            dev_log_loss: log_loss,
        });
        let improved = best
            .as_ref()
            .is_none_or(|b| report.macro_f1 > b.0 || (report.macro_f1 == b.0 && log_loss < b.1));
        if improved {
            best = Some((report.macro_f1, log_loss, epoch, model.params.clone(), report));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, _, best_epoch, params, dev_report) = best.expect("at least one epoch");
    model.params = params;
    Ok((
        model,
        DepressionTrainReport {
            history,
            best_epoch,
            dev: dev_report,
        },
    ))
}
