//! Vowel CNN: three conv blocks, spatial pyramid pooling, a 128-unit
//! embedding layer and six class logits. Accepts log-Mel inputs of any
//! width, so whole utterances map to fixed-size embeddings.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio::LogMelPatch;
use crate::corpus::VowelLabel;
use crate::error::{Error, Result};
use crate::eval::{classification_report, ClassificationReport};
use crate::seed;
use crate::tensor::{
    Adam, BatchNormMode, Graph, ModelParameters, ParamGrads, RunningStats, Scalar, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VowelCnnConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub pool: usize,
    pub spp_levels: Vec<usize>,
    pub hidden: usize,
    pub classes: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for VowelCnnConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            channels: 64,
            blocks: 3,
            kernel: 3,
            pool: 2,
            spp_levels: vec![1, 2, 4],
            hidden: 128,
            classes: 6,
            lr: 0.001,
            l2: 0.001,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
        }
    }
}

impl VowelCnnConfig {
    pub fn spp_len(&self) -> usize {
        self.channels * self.spp_levels.iter().map(|g| g * g).sum::<usize>()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("n_mels", self.n_mels),
            ("channels", self.channels),
            ("blocks", self.blocks),
            ("kernel", self.kernel),
            ("pool", self.pool),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ] {
            if v == 0 {
                out.push(format!("vowel.{name} must be positive"));
            }
        }
        if self.classes < 2 {
            out.push("vowel.classes must be at least 2".into());
        }
        if self.spp_levels.is_empty() || self.spp_levels.contains(&0) {
            out.push(format!("vowel.spp_levels {:?} must be non-empty and positive", self.spp_levels));
        }
        if !(self.lr > 0.0) {
            out.push(format!("vowel.lr must be positive, got {}", self.lr));
        }
        if !(self.l2 >= 0.0) {
            out.push(format!("vowel.l2 must be non-negative, got {}", self.l2));
        }
        let mut h = self.n_mels;
        for _ in 0..self.blocks {
            h = h.saturating_sub(self.kernel - 1) / self.pool.max(1);
        }
        if h == 0 && self.n_mels > 0 {
            out.push(format!("{} Mel rows vanish after {} blocks", self.n_mels, self.blocks));
        }
        out
    }
}

/// Names of one block's parameters.
fn block_names(b: usize) -> [String; 6] {
    let i = b + 1;
    [
        format!("conv{i}.weight"),
        format!("conv{i}.bias"),
        format!("bn{i}.weight"),
        format!("bn{i}.bias"),
        format!("bn{i}.running_mean"),
        format!("bn{i}.running_var"),
    ]
}

fn uniform_tensor<F: Scalar>(shape: &[usize], bound: f64, rng: &mut seed::Rng) -> Tensor<F> {
    Tensor::from_fn(shape.to_vec(), |_| F::from_f64(rng.random_range(-bound..bound)))
}

/// Outputs of one forward pass.
pub struct VowelForward {
    pub logits: Var,
    pub embedding: Var,
    /// Per-layer output shapes without the batch axis.
    pub dims: Vec<(String, Vec<usize>)>,
    /// Graph handle of every trainable parameter, when tracked.
    pub params: Vec<(String, Var)>,
    /// Updated batch-norm statistics (training mode only).
    pub stats: Vec<RunningStats<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VowelCnn<F: Scalar = f32> {
    pub cfg: VowelCnnConfig,
    pub params: ModelParameters<F>,
}

impl<F: Scalar> VowelCnn<F> {
    /// Fresh model with fan-in scaled uniform weights.
    pub fn new(cfg: VowelCnnConfig, seed: u64) -> Result<Self> {
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = seed::rng(seed, &["vowel", "init"]);
        let mut params = ModelParameters::new();
        let mut cin = 1;
        for b in 0..cfg.blocks {
            let [cw, cb, g, bt, rm, rv] = block_names(b);
            let bound = 1.0 / ((cin * cfg.kernel) as f64).sqrt();
            params.insert(cw, uniform_tensor(&[cfg.channels, cin, cfg.kernel, 1], bound, &mut rng), true);
            params.insert(cb, uniform_tensor(&[cfg.channels], bound, &mut rng), true);
            params.insert(g, Tensor::full([cfg.channels], F::one()), true);
            params.insert(bt, Tensor::zeros([cfg.channels]), true);
            params.insert(rm, Tensor::zeros([cfg.channels]), false);
            params.insert(rv, Tensor::full([cfg.channels], F::one()), false);
            cin = cfg.channels;
        }
        let spp = cfg.spp_len();
        let bound = 1.0 / (spp as f64).sqrt();
        params.insert("fc.weight", uniform_tensor(&[cfg.hidden, spp], bound, &mut rng), true);
        params.insert("fc.bias", uniform_tensor(&[cfg.hidden], bound, &mut rng), true);
        let bound = 1.0 / (cfg.hidden as f64).sqrt();
        params.insert("out.weight", uniform_tensor(&[cfg.classes, cfg.hidden], bound, &mut rng), true);
        params.insert("out.bias", uniform_tensor(&[cfg.classes], bound, &mut rng), true);
        Ok(Self { cfg, params })
    }

    /// Adopt checkpointed parameters after checking names and shapes.
    pub fn from_params(cfg: VowelCnnConfig, params: ModelParameters<F>) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        model.params.restore_from(&params)?;
        Ok(model)
    }

    pub fn cast<G: Scalar>(&self) -> VowelCnn<G> {
        VowelCnn {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
        }
    }

    /// Build the forward graph for `x: [N, 1, n_mels, W]`. Trainable
    /// parameters become gradient-tracking leaves iff `track_params`.
    pub fn forward(&self, g: &mut Graph<F>, x: Var, mode: BatchNormMode, track_params: bool) -> Result<VowelForward> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 4 || xs[1] != 1 || xs[2] != self.cfg.n_mels {
            return Err(Error::dim(
                "forward_vowel",
                "n_mels",
                format!("expected [N, 1, {}, W], got {xs:?}", self.cfg.n_mels),
            ));
        }
        let mut tracked = Vec::new();
        let mut leaf = |g: &mut Graph<F>, name: &str| {
            let t = self.params.tensor(name).clone();
            if track_params {
                let v = g.param(t);
                tracked.push((name.to_string(), v));
                v
            } else {
                g.constant(t)
            }
        };
        let mut dims = Vec::new();
        let mut stats = Vec::new();
        let mut h = x;
        for b in 0..self.cfg.blocks {
            let [cw, cb, gm, bt, rm, rv] = block_names(b);
            let k = leaf(g, &cw);
            let bias = leaf(g, &cb);
            let gamma = leaf(g, &gm);
            let beta = leaf(g, &bt);
            h = g.conv2d(h, k, (0, 0))?;
            h = g.channel_bias(h, bias)?;
            h = g.relu(h);
            let mut rs = RunningStats::<F>::new(self.cfg.channels);
            rs.mean = self.params.tensor(&rm).data().to_vec();
            rs.var = self.params.tensor(&rv).data().to_vec();
            h = g.batch_norm(h, gamma, beta, &mut rs, mode)?;
            stats.push(RunningStats {
                mean: rs.mean.iter().map(|v| Scalar::to_f64(*v)).collect(),
                var: rs.var.iter().map(|v| Scalar::to_f64(*v)).collect(),
                momentum: rs.momentum,
                eps: rs.eps,
            });
            h = g.max_pool2d(h, (self.cfg.pool, 1))?;
            dims.push((format!("block{}", b + 1), g.shape(h)[1..].to_vec()));
        }
        h = g.spp(h, &self.cfg.spp_levels)?;
        dims.push(("spp".into(), g.shape(h)[1..].to_vec()));
        let (w, b) = (leaf(g, "fc.weight"), leaf(g, "fc.bias"));
        h = g.dense(h, w, b)?;
        let embedding = g.relu(h);
        dims.push(("fc".into(), g.shape(embedding)[1..].to_vec()));
        let (w, b) = (leaf(g, "out.weight"), leaf(g, "out.bias"));
        let logits = g.dense(embedding, w, b)?;
        dims.push(("output".into(), g.shape(logits)[1..].to_vec()));
        Ok(VowelForward {
            logits,
            embedding,
            dims,
            params: tracked,
            stats,
        })
    }

    /// Write batch-norm statistics from a training pass back into the model.
    pub fn apply_stats(&mut self, stats: &[RunningStats<f64>]) {
        for (b, s) in stats.iter().enumerate() {
            let [_, _, _, _, rm, rv] = block_names(b);
            let conv = |v: &[f64]| v.iter().map(|&x| F::from_f64(x)).collect::<Vec<_>>();
            self.params.get_mut(&rm).expect("running mean").data_mut().copy_from_slice(&conv(&s.mean));
            self.params.get_mut(&rv).expect("running var").data_mut().copy_from_slice(&conv(&s.var));
        }
    }

    /// Per-layer output shapes for a `[1, 1, n_mels, width]` input.
    pub fn trace_dims(&self, width: usize) -> Result<Vec<(String, Vec<usize>)>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 1, self.cfg.n_mels, width]));
        Ok(self.forward(&mut g, x, BatchNormMode::Eval, false)?.dims)
    }

    /// Eval-mode logits for one log-Mel matrix.
    pub fn logits(&self, values: &[F], width: usize) -> Result<Vec<F>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([1, 1, self.cfg.n_mels, width], values.to_vec())?);
        let f = self.forward(&mut g, x, BatchNormMode::Eval, false)?;
        Ok(g.value(f.logits).data().to_vec())
    }
}

/// How the per-utterance saliency score is derived from the frozen model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SaliencyStrategy {
    /// L2 norm of the input gradient of the largest logit.
    #[default]
    GradNorm,
    /// L2 norm of the embedding.
    EmbNorm,
}

impl SaliencyStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GradNorm => "grad-norm",
            Self::EmbNorm => "emb-norm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceEmbedding {
    pub values: Vec<f32>,
    pub saliency: f64,
}

impl VowelCnn<f32> {
    /// Embedding and saliency of one utterance from a single forward pass.
    pub fn embed(&self, patch: &LogMelPatch, strategy: SaliencyStrategy) -> Result<UtteranceEmbedding> {
        if patch.n_mels != self.cfg.n_mels {
            return Err(Error::dim(
                "embed_utterance",
                "n_mels",
                format!("expected {} Mel rows, got {}", self.cfg.n_mels, patch.n_mels),
            ));
        }
        let (values, saliency) = embed_generic(self, &patch.values, patch.n_frames, strategy)?;
        Ok(UtteranceEmbedding { values, saliency })
    }
}

/// Embedding and saliency for any scalar type.
pub fn embed_generic<F: Scalar>(
    model: &VowelCnn<F>,
    values: &[F],
    width: usize,
    strategy: SaliencyStrategy,
) -> Result<(Vec<F>, f64)> {
    let mut g = Graph::new();
    let want_grad = strategy == SaliencyStrategy::GradNorm;
    let x = g.input(Tensor::new([1, 1, model.cfg.n_mels, width], values.to_vec())?.with_requires_grad(want_grad));
    let f = model.forward(&mut g, x, BatchNormMode::Eval, false)?;
    let emb = g.value(f.embedding).data().to_vec();
    let saliency = match strategy {
        SaliencyStrategy::EmbNorm => emb.iter().map(|v| Scalar::to_f64(*v).powi(2)).sum::<f64>().sqrt(),
        SaliencyStrategy::GradNorm => {
            let logits = g.value(f.logits).data();
            let best = argmax(logits);
            let picked = g.pick(f.logits, &[best])?;
            let grads = g.backward(picked)?;
            grads
                .get(x)
                .map_or(0.0, |gx| gx.iter().map(|v| Scalar::to_f64(*v).powi(2)).sum::<f64>().sqrt())
        }
    };
    Ok((emb, saliency))
}

pub fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// One labelled training example.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub patch: LogMelPatch,
    pub label: VowelLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VowelTrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Held-out report of the returned model.
    pub dev: ClassificationReport,
}

/// Predicted class of every patch (eval mode), batched.
pub fn predict_patches(model: &VowelCnn<f32>, patches: &[&LogMelPatch], batch: usize) -> Result<Vec<usize>> {
    let chunks: Vec<&[&LogMelPatch]> = patches.chunks(batch.max(1)).collect();
    let out = crate::par::try_map_slice(&chunks, |chunk| -> Result<Vec<usize>> {
        let (x, _) = stack(chunk)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let f = model.forward(&mut g, xv, BatchNormMode::Eval, false)?;
        Ok(g.value(f.logits).data().chunks(model.cfg.classes).map(argmax).collect())
    })?;
    Ok(out.into_iter().flatten().collect())
}

fn stack(patches: &[&LogMelPatch]) -> Result<(Tensor<f32>, usize)> {
    let first = patches[0];
    let (h, w) = (first.n_mels, first.n_frames);
    let mut data = Vec::with_capacity(patches.len() * h * w);
    for p in patches {
        if (p.n_mels, p.n_frames) != (h, w) {
            return Err(Error::dim(
                "train_vowel_cnn",
                "patch",
                format!("mixed patch sizes ({h}, {w}) and ({}, {})", p.n_mels, p.n_frames),
            ));
        }
        data.extend_from_slice(&p.values);
    }
    Ok((Tensor::new([patches.len(), 1, h, w], data)?, w))
}

/// One optimizer step on a mini-batch; returns the batch loss.
pub fn train_step(model: &mut VowelCnn<f32>, opt: &Adam, batch: &[&LabeledPatch]) -> Result<f64> {
    let patches: Vec<&LogMelPatch> = batch.iter().map(|b| &b.patch).collect();
    let targets: Vec<usize> = batch.iter().map(|b| b.label.index()).collect();
    let (x, _) = stack(&patches)?;
    let mut g = Graph::new();
    let xv = g.constant(x);
    let f = model.forward(&mut g, xv, BatchNormMode::Train, true)?;
    let loss = g.softmax_cross_entropy(f.logits, &targets)?;
    let loss_value = g.value(loss).data()[0] as f64;
    let mut grads = g.backward(loss)?;
    let mut pg = ParamGrads::new();
    for (name, v) in &f.params {
        if let Some(gr) = grads.take(*v) {
            pg.insert(name.clone(), gr);
        }
    }
    opt.step(&mut model.params, &pg)?;
    model.apply_stats(&f.stats);
    Ok(loss_value)
}

/// Train with seeded shuffling and early stopping on held-out macro-F1.
/// An empty `dev` set falls back to the training set for model selection.
pub fn train_vowel_cnn(
    train: &[LabeledPatch],
    dev: &[LabeledPatch],
    cfg: &VowelCnnConfig,
    seed: u64,
) -> Result<(VowelCnn<f32>, VowelTrainReport)> {
    let present = train.iter().map(|p| p.label).collect::<std::collections::BTreeSet<_>>();
    if present.len() < 2 {
        return Err(Error::Config(vec![format!(
            "vowel training needs at least two classes, found {}",
            present.len()
        )]));
    }
    let mut model = VowelCnn::<f32>::new(cfg.clone(), seed)?;
    let opt = Adam::new(cfg.lr, cfg.l2);
    let mut rng = seed::rng(seed, &["vowel", "shuffle"]);
    let select = if dev.is_empty() { train } else { dev };
    let select_patches: Vec<&LogMelPatch> = select.iter().map(|p| &p.patch).collect();
    let select_labels: Vec<usize> = select.iter().map(|p| p.label.index()).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParameters<f32>, ClassificationReport)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledPatch> = chunk.iter().map(|&i| &train[i]).collect();
            loss_sum += train_step(&mut model, &opt, &batch)? * batch.len() as f64;
            seen += batch.len();
        }
        let pred = predict_patches(&model, &select_patches, cfg.batch_size)?;
        let report = classification_report(&pred, &select_labels, cfg.classes)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / seen as f64,
            dev_macro_f1: report.macro_f1,
        });
        if best.as_ref().is_none_or(|b| report.macro_f1 > b.0) {
            best = Some((report.macro_f1, epoch, model.params.clone(), report));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params, dev_report) = best.expect("at least one epoch");
    model.params = params;
    Ok((
        model,
        VowelTrainReport {
            history,
            best_epoch,
            dev: dev_report,
        },
    ))
}
