//! Reverse-mode tape.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Ops push
//! a node holding their output and a backward closure; [`Graph::backward`]
//! walks the nodes in reverse and returns gradients for every node that
//! depends on a gradient-tracking input. Batch axis is always leading.

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct BackwardCtx<'a, F> {
    inputs: Vec<&'a Tensor<F>>,
    grad: &'a [F],
    wants: Vec<bool>,
}

type BackwardFn<F> = Box<dyn Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>>>;

struct Node<F> {
    value: Tensor<F>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<F>>,
    tracks: bool,
}

pub struct Graph<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<F> {
    by_node: Vec<Option<Vec<F>>>,
}

impl<F> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.by_node.get_mut(v.0).and_then(Option::take)
    }
}

/// Batch-norm running statistics. Updated in place in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub momentum: f64,
    pub eps: f64,
}

impl<F: Scalar> RunningStats<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Add a tensor as a leaf. It participates in backward iff `requires_grad`.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let tracks = t.requires_grad();
        self.push(t, Vec::new(), None, tracks)
    }

    /// Add a leaf that always tracks gradients.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Vec::new(), None, true)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, parents: Vec<Var>, backward: Option<BackwardFn<F>>, tracks: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
            tracks,
        });
        Var(self.nodes.len() - 1)
    }

    fn op(&mut self, value: Tensor<F>, parents: Vec<Var>, backward: BackwardFn<F>) -> Var {
        let tracks = parents.iter().any(|p| self.nodes[p.0].tracks);
        let backward = tracks.then_some(backward);
        self.push(value, parents, backward, tracks)
    }

    /// Gradients of the scalar `loss` with respect to every tracking node.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        let len = self.value(loss).len();
        if len != 1 {
            return Err(Error::dim("backward", "loss", format!("expected a scalar, got {len} values")));
        }
        Ok(self.backward_from(loss, vec![F::one()]))
    }

    /// Backpropagate an explicit output gradient from `out`.
    pub fn backward_from(&self, out: Var, seed: Vec<F>) -> Grads<F> {
        assert_eq!(seed.len(), self.value(out).len(), "seed gradient length");
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                grad: &grad,
                wants: node.parents.iter().map(|p| self.nodes[p.0].tracks).collect(),
            };
            let parent_grads = backward(&ctx);
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].tracks {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
            grads[id] = Some(grad);
        }
        Grads { by_node: grads }
    }

    /// 2-D cross-correlation, stride 1. `x: [N, C_in, H, W]`, `k: [C_out, C_in, kH, kW]`.
    pub fn conv2d(&mut self, x: Var, k: Var, padding: (usize, usize)) -> Result<Var> {
        let geom = conv_geom("conv2d", self.shape(x), self.shape(k), padding)?;
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(k).data());
        let value = Tensor::new([geom.n, geom.cout, geom.oh(), geom.ow()], out)?;
        Ok(self.op(
            value,
            vec![x, k],
            Box::new(move |c| {
                let (dx, dk) = kernels::conv2d_backward(
                    &geom,
                    c.inputs[0].data(),
                    c.inputs[1].data(),
                    c.grad,
                    c.wants[0],
                    c.wants[1],
                );
                vec![dx, dk]
            }),
        ))
    }

    /// 1-D cross-correlation, stride 1. `x: [N, C_in, L]`, `k: [C_out, C_in, k]`.
    pub fn conv1d(&mut self, x: Var, k: Var, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim("conv1d", "input", format!("expected [N, C, L], got {xs:?}")));
        }
        if ks.len() != 3 {
            return Err(Error::dim("conv1d", "kernel", format!("expected [C_out, C_in, k], got {ks:?}")));
        }
        let geom = conv_geom(
            "conv1d",
            &[xs[0], xs[1], xs[2], 1],
            &[ks[0], ks[1], ks[2], 1],
            (padding, 0),
        )
        .map_err(|e| match e {
            Error::Dimension { op, axis, detail } if axis == "H" => Error::Dimension {
                op,
                axis: "L".into(),
                detail,
            },
            e => e,
        })?;
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(k).data());
        let value = Tensor::new([geom.n, geom.cout, geom.oh()], out)?;
        Ok(self.op(
            value,
            vec![x, k],
            Box::new(move |c| {
                let (dx, dk) = kernels::conv2d_backward(
                    &geom,
                    c.inputs[0].data(),
                    c.inputs[1].data(),
                    c.grad,
                    c.wants[0],
                    c.wants[1],
                );
                vec![dx, dk]
            }),
        ))
    }

    /// Add a per-channel bias along axis 1 of `[N, C, ...]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() < 2 || bs != [xs[1]] {
            return Err(Error::dim("channel_bias", "C", format!("bias {bs:?} does not match input {xs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut out = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.op(
            value,
            vec![x, b],
            Box::new(move |ctx| {
                let db = ctx.wants[1].then(|| {
                    let mut db = vec![F::zero(); c];
                    for (i, chunk) in ctx.grad.chunks(inner).enumerate() {
                        db[i % c] += kernels::lane_sum(chunk.iter().copied());
                    }
                    debug_assert_eq!(ctx.grad.len(), n * c * inner);
                    db
                });
                vec![ctx.wants[0].then(|| ctx.grad.to_vec()), db]
            }),
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out: Vec<F> = t.data().iter().map(|&v| v.max(F::zero())).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.op(
            value,
            vec![x],
            Box::new(|c| {
                let g = c
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(c.grad)
                    .map(|(&v, &g)| if v > F::zero() { g } else { F::zero() })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// Batch normalization over axis 1 of `[N, C, ...]`.
    ///
    /// Training mode normalizes with the biased batch variance and folds the
    /// batch mean and unbiased variance into `stats` with its momentum. Eval
    /// mode normalizes with `stats` and leaves it untouched.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<F>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::dim("batch_norm", "C", format!("expected [N, C, ...], got {xs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::dim("batch_norm", name, format!("expected [{c}], got {:?}", self.shape(v))));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::dim("batch_norm", "running_stats", format!("expected {c} channels")));
        }
        let eps = F::from_f64(stats.eps);
        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let (mean, var) = kernels::channel_moments(self.value(x).data(), n, c, inner);
                let m = F::from_f64(stats.momentum);
                let count = n * inner;
                let unbias = if count > 1 {
                    F::from_f64(count as f64 / (count - 1) as f64)
                } else {
                    F::one()
                };
                for ch in 0..c {
                    stats.mean[ch] = (F::one() - m) * stats.mean[ch] + m * mean[ch];
                    stats.var[ch] = (F::one() - m) * stats.var[ch] + m * var[ch] * unbias;
                }
                (mean, var)
            }
            BatchNormMode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let scale: Vec<F> = (0..c).map(|ch| inv_std[ch] * g[ch]).collect();
        let shift: Vec<F> = (0..c).map(|ch| b[ch] - mean[ch] * scale[ch]).collect();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let (sc, sh) = (scale[i % c], shift[i % c]);
            chunk.iter_mut().for_each(|v| *v = *v * sc + sh);
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.op(
            value,
            vec![x, gamma, beta],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let g = ctx.inputs[1].data();
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for (i, (xc, gc)) in x.chunks(inner).zip(ctx.grad.chunks(inner)).enumerate() {
                    let ch = i % c;
                    let (mu, is) = (mean[ch], inv_std[ch]);
                    dgamma[ch] += kernels::lane_sum(xc.iter().zip(gc).map(|(&xv, &gv)| gv * (xv - mu) * is));
                    dbeta[ch] += kernels::lane_sum(gc.iter().copied());
                }
                let dx = ctx.wants[0].then(|| {
                    let mut dx = vec![F::zero(); x.len()];
                    let count = F::from_f64((n * inner) as f64);
                    for (i, ((dc, xc), gc)) in dx
                        .chunks_mut(inner)
                        .zip(x.chunks(inner))
                        .zip(ctx.grad.chunks(inner))
                        .enumerate()
                    {
                        let ch = i % c;
                        let scale = g[ch] * inv_std[ch];
                        match mode {
                            BatchNormMode::Eval => {
                                for (d, &gv) in dc.iter_mut().zip(gc) {
                                    *d = gv * scale;
                                }
                            }
                            BatchNormMode::Train => {
                                let (mu, is) = (mean[ch], inv_std[ch]);
                                let (mb, mg) = (dbeta[ch] / count, dgamma[ch] / count);
                                for ((d, &xv), &gv) in dc.iter_mut().zip(xc).zip(gc) {
                                    *d = scale * (gv - mb - (xv - mu) * is * mg);
                                }
                            }
                        }
                    }
                    dx
                });
                vec![dx, ctx.wants[1].then_some(dgamma), ctx.wants[2].then_some(dbeta)]
            }),
        ))
    }

    /// Non-overlapping max pooling over the two trailing axes of `[N, C, H, W]`.
    /// Trailing cells that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::dim("max_pool2d", "input", format!("expected [N, C, H, W], got {xs:?}")));
        }
        self.max_pool_impl("max_pool2d", x, xs[0] * xs[1], xs[2], xs[3], window, |oh, ow| {
            vec![xs[0], xs[1], oh, ow]
        })
    }

    /// Non-overlapping max pooling over the trailing axis of `[N, C, L]`.
    pub fn max_pool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim("max_pool1d", "input", format!("expected [N, C, L], got {xs:?}")));
        }
        self.max_pool_impl("max_pool1d", x, xs[0] * xs[1], xs[2], 1, (window, 1), |ol, _| {
            vec![xs[0], xs[1], ol]
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn max_pool_impl(
        &mut self,
        op: &'static str,
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
        (wh, ww): (usize, usize),
        out_shape: impl FnOnce(usize, usize) -> Vec<usize>,
    ) -> Result<Var> {
        for (axis, win, len) in [("H", wh, h), ("W", ww, w)] {
            if win == 0 || win > len {
                return Err(Error::dim(op, axis, format!("window {win} does not fit axis of length {len}")));
            }
        }
        let (out, _) = kernels::max_pool2d(self.value(x).data(), planes, h, w, wh, ww);
        let value = Tensor::new(out_shape(h / wh, w / ww), out)?;
        Ok(self.op(
            value,
            vec![x],
            Box::new(move |c| {
                let x = c.inputs[0].data();
                let (_, idx) = kernels::max_pool2d(x, planes, h, w, wh, ww);
                let mut dx = vec![F::zero(); x.len()];
                for (&i, &g) in idx.iter().zip(c.grad) {
                    dx[i] += g;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Spatial pyramid max pooling `[N, C, H, W] → [N, C·Σg²]` over the
    /// given grid sizes with adaptive windows.
    pub fn spp(&mut self, x: Var, levels: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::dim("spp", "input", format!("expected [N, C, H, W], got {xs:?}")));
        }
        if levels.is_empty() || levels.contains(&0) {
            return Err(Error::dim("spp", "levels", format!("invalid pyramid {levels:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let levels = levels.to_vec();
        let cells: usize = levels.iter().map(|g| g * g).sum();
        let (out, _) = kernels::spp(self.value(x).data(), n, c, h, w, &levels);
        let value = Tensor::new([n, c * cells], out)?;
        Ok(self.op(
            value,
            vec![x],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let (_, idx) = kernels::spp(x, n, c, h, w, &levels);
                let mut dx = vec![F::zero(); x.len()];
                for (&i, &g) in idx.iter().zip(ctx.grad) {
                    dx[i] += g;
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().with_requires_grad(false).reshape(shape.to_vec())?;
        Ok(self.op(value, vec![x], Box::new(|c| vec![Some(c.grad.to_vec())])))
    }

    /// Collapse every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let n = xs[0];
        let rest: usize = xs[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// Affine map `[N, D_in] → [N, D_out]` with `w: [D_out, D_in]`, `b: [D_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 {
            return Err(Error::dim("dense", "input", format!("expected [N, D_in], got {xs:?}")));
        }
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(Error::dim("dense", "D_in", format!("weights {ws:?} do not accept input {xs:?}")));
        }
        if bs != [ws[0]] {
            return Err(Error::dim("dense", "D_out", format!("bias {bs:?} does not match weights {ws:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        F::gemm(n, din, dout, self.value(x).data(), false, self.value(w).data(), true, &mut out, true);
        let value = Tensor::new([n, dout], out)?;
        Ok(self.op(
            value,
            vec![x, w, b],
            Box::new(move |c| {
                let g = c.grad;
                let dx = c.wants[0].then(|| {
                    let mut dx = vec![F::zero(); n * din];
                    F::gemm(n, dout, din, g, false, c.inputs[1].data(), false, &mut dx, false);
                    dx
                });
                let dw = c.wants[1].then(|| {
                    let mut dw = vec![F::zero(); dout * din];
                    F::gemm(dout, n, din, g, true, c.inputs[0].data(), false, &mut dw, false);
                    dw
                });
                let db = c.wants[2].then(|| {
                    let mut db = vec![F::zero(); dout];
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    db
                });
                vec![dx, dw, db]
            }),
        ))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != targets.len() {
            return Err(Error::dim(
                "softmax_cross_entropy",
                "N",
                format!("logits {ls:?} vs {} targets", targets.len()),
            ));
        }
        let (n, k) = (ls[0], ls[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: t,
                bound: k,
            });
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = F::zero();
        for (row, &t) in data.chunks(k).zip(targets) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
            loss += lse - row[t];
            probs.extend(row.iter().map(|&z| (z - lse).exp()));
        }
        let inv_n = F::one() / F::from_f64(n as f64);
        let targets = targets.to_vec();
        let value = Tensor::scalar(loss * inv_n);
        Ok(self.op(
            value,
            vec![logits],
            Box::new(move |c| {
                let scale = c.grad[0] * inv_n;
                let mut g: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    g[i * k + t] -= scale;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Select one entry per row of `[N, K]`, giving `[N]`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != indices.len() {
            return Err(Error::dim("pick", "N", format!("input {xs:?} vs {} indices", indices.len())));
        }
        let k = xs[1];
        if let Some(&i) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::Index {
                op: "pick",
                index: i,
                bound: k,
            });
        }
        let data = self.value(x).data();
        let out: Vec<F> = indices.iter().enumerate().map(|(r, &i)| data[r * k + i]).collect();
        let indices = indices.to_vec();
        let value = Tensor::new([indices.len()], out)?;
        Ok(self.op(
            value,
            vec![x],
            Box::new(move |c| {
                let mut g = vec![F::zero(); c.inputs[0].len()];
                for (r, &i) in indices.iter().enumerate() {
                    g[r * k + i] = c.grad[r];
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.op(
            Tensor::scalar(total),
            vec![x],
            Box::new(|c| vec![Some(vec![c.grad[0]; c.inputs[0].len()])]),
        )
    }

    /// Element-wise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, weights: &[F]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::dim("mul_const", "data", "length mismatch"));
        }
        let t = self.value(x);
        let out = t.data().iter().zip(weights).map(|(&a, &b)| a * b).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let w = weights.to_vec();
        Ok(self.op(
            value,
            vec![x],
            Box::new(move |c| vec![Some(c.grad.iter().zip(&w).map(|(&g, &b)| g * b).collect())]),
        ))
    }
}

fn conv_geom(op: &'static str, xs: &[usize], ks: &[usize], (ph, pw): (usize, usize)) -> Result<ConvGeom> {
    if xs.len() != 4 {
        return Err(Error::dim(op, "input", format!("expected [N, C, H, W], got {xs:?}")));
    }
    if ks.len() != 4 {
        return Err(Error::dim(op, "kernel", format!("expected [C_out, C_in, kH, kW], got {ks:?}")));
    }
    if ks[1] != xs[1] {
        return Err(Error::dim(op, "C_in", format!("kernel expects {} input channels, input has {}", ks[1], xs[1])));
    }
    if xs[2] + 2 * ph < ks[2] {
        return Err(Error::dim(op, "H", format!("padded length {} shorter than kernel {}", xs[2] + 2 * ph, ks[2])));
    }
    if xs[3] + 2 * pw < ks[3] {
        return Err(Error::dim(op, "W", format!("padded length {} shorter than kernel {}", xs[3] + 2 * pw, ks[3])));
    }
    Ok(ConvGeom {
        n: xs[0],
        cin: xs[1],
        h: xs[2],
        w: xs[3],
        cout: ks[0],
        kh: ks[2],
        kw: ks[3],
        ph,
        pw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_table_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 1, 128, 28]));
        let k = g.constant(Tensor::zeros([64, 1, 3, 1]));
        let y = g.conv2d(x, k, (0, 0)).unwrap();
        assert_eq!(g.shape(y), [1, 64, 126, 28]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let p = g.max_pool2d(y, (2, 1)).unwrap();
        assert_eq!(g.shape(p), [1, 64, 63, 28]);
    }

    #[test]
    fn conv2d_identity_kernel_copies_interior_rows() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let x = g.constant(t(&[1, 1, 5, 4], &data));
        let k = g.constant(t(&[1, 1, 3, 1], &[0.0, 1.0, 0.0]));
        let y = g.conv2d(x, k, (0, 0)).unwrap();
        assert_eq!(g.shape(y), [1, 1, 3, 4]);
        assert_eq!(g.value(y).data(), &data[4..16]);
    }

    #[test]
    fn conv2d_padding_and_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full([2, 3, 4, 5], 1.0));
        let k = g.constant(Tensor::full([2, 3, 3, 3], 1.0));
        let y = g.conv2d(x, k, (1, 1)).unwrap();
        assert_eq!(g.shape(y), [2, 2, 4, 5]);
        // corner sees 2x2 of each of 3 channels
        assert_eq!(g.value(y).data()[0], 12.0);
        // center sees full 3x3x3
        assert_eq!(g.value(y).data()[5 + 1], 27.0);

        let small = g.constant(Tensor::full([1, 3, 2, 5], 1.0));
        match g.conv2d(small, k, (0, 0)) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "H"),
            other => panic!("expected dimension error, got {:?}", other.map(|_| ())),
        }
        let wrong_c = g.constant(Tensor::full([1, 2, 5, 5], 1.0));
        match g.conv2d(wrong_c, k, (0, 0)) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "C_in"),
            other => panic!("expected dimension error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn conv1d_shapes_and_channel_copy() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 128, 42]));
        let k = g.constant(Tensor::zeros([32, 128, 7]));
        let y = g.conv1d(x, k, 0).unwrap();
        assert_eq!(g.shape(y), [1, 32, 36]);
        let x21 = g.constant(Tensor::zeros([1, 128, 21]));
        let y = g.conv1d(x21, k, 3).unwrap();
        assert_eq!(g.shape(y), [1, 32, 21]);

        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn([1, 3, 4], |i| i as f64));
        // select channel 2
        let k = g.constant(t(&[1, 3, 1], &[0.0, 0.0, 1.0]));
        let y = g.conv1d(x, k, 0).unwrap();
        assert_eq!(g.value(y).data(), &[8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn max_pool_floor_and_constant() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full([1, 64, 61, 28], 3.0));
        let y = g.max_pool2d(x, (2, 1)).unwrap();
        assert_eq!(g.shape(y), [1, 64, 30, 28]);
        assert!(g.value(y).data().iter().all(|&v| v == 3.0));
        let x = g.constant(Tensor::zeros([1, 1, 1, 4]));
        assert!(g.max_pool2d(x, (2, 1)).is_err());
    }

    #[test]
    fn spp_fixed_length_and_layout() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn([1, 2, 4, 4], |i| i as f64));
        let y = g.spp(x, &[1, 2]).unwrap();
        assert_eq!(g.shape(y), [1, 10]);
        // level 1: channel maxima; level 2: per channel 2x2 quadrant maxima
        assert_eq!(g.value(y).data(), &[15.0, 31.0, 5.0, 7.0, 13.0, 15.0, 21.0, 23.0, 29.0, 31.0]);
        let empty_levels = g.spp(x, &[]);
        assert!(empty_levels.is_err());
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 3], &[1.0, -2.0, 3.0]));
        let w = g.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::zeros([3]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0]);
        let z = g.constant(Tensor::zeros([1, 3]));
        let b = g.constant(t(&[3], &[0.5, 0.25, -1.0]));
        let y = g.dense(z, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.25, -1.0]);
        let bad = g.constant(Tensor::zeros([1, 4]));
        assert!(g.dense(bad, w, b).is_err());
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::zeros([1, 6]));
        let loss = g.softmax_cross_entropy(l, &[3]).unwrap();
        assert!((g.value(loss).data()[0] - 6f64.ln()).abs() < 1e-12);
        let l = g.constant(Tensor::zeros([1, 2]));
        let loss = g.softmax_cross_entropy(l, &[1]).unwrap();
        assert!((g.value(loss).data()[0] - 2f64.ln()).abs() < 1e-12);
        let l = g.constant(t(&[1, 3], &[0.0, 1000.0, 0.0]));
        let loss = g.softmax_cross_entropy(l, &[1]).unwrap();
        assert!(g.value(loss).data()[0].abs() < 1e-12);
        assert!(matches!(g.softmax_cross_entropy(l, &[3]), Err(Error::Index { .. })));
    }

    #[test]
    fn batch_norm_reference_cases() {
        // zero mean / unit (biased) variance per channel stays put
        let data = [1.0, -1.0, 1.0, -1.0, 2.0, -2.0, 0.0, 0.0];
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 2, 2], &data));
        let gamma = g.constant(Tensor::full([2], 1.0));
        let beta = g.constant(Tensor::zeros([2]));
        let mut stats = RunningStats::new(2);
        let y = g.batch_norm(x, gamma, beta, &mut stats, BatchNormMode::Train).unwrap();
        // channel 0 values: 1,-1,2,-2 -> var 2.5; channel 1: 1,-1,0,0 -> var 0.5
        let out = g.value(y).data();
        assert!((out[0] - 1.0 / (2.5f64 + 1e-5).sqrt()).abs() < 1e-12);
        assert!((stats.mean[0]).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 2.5 * 4.0 / 3.0)).abs() < 1e-12);

        let unit = [1.0, -1.0, 1.0, -1.0];
        let x = g.constant(t(&[2, 1, 2], &unit));
        let gamma1 = g.constant(Tensor::full([1], 1.0));
        let beta1 = g.constant(Tensor::zeros([1]));
        let mut s1 = RunningStats::new(1);
        let y = g.batch_norm(x, gamma1, beta1, &mut s1, BatchNormMode::Train).unwrap();
        for (a, b) in g.value(y).data().iter().zip(unit) {
            assert!((a - b).abs() < 1e-4);
        }

        let gamma0 = g.constant(Tensor::zeros([1]));
        let beta7 = g.constant(Tensor::full([1], 7.0));
        let y = g.batch_norm(x, gamma0, beta7, &mut s1, BatchNormMode::Train).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn batch_norm_eval_is_batch_size_independent() {
        let mut stats = RunningStats::<f64> {
            mean: vec![0.5, -1.0],
            var: vec![2.0, 0.25],
            momentum: 0.1,
            eps: 1e-5,
        };
        let sample: Vec<f64> = (0..6).map(|v| v as f64 * 0.3).collect();
        let mut g = Graph::<f64>::new();
        let gamma = g.constant(t(&[2], &[1.5, 0.5]));
        let beta = g.constant(t(&[2], &[0.1, 0.2]));
        let one = g.constant(t(&[1, 2, 3], &sample));
        let y1 = g.batch_norm(one, gamma, beta, &mut stats, BatchNormMode::Eval).unwrap();
        let mut three = sample.clone();
        three.extend((0..12).map(|v| v as f64 - 4.0));
        let many = g.constant(t(&[3, 2, 3], &three));
        let y3 = g.batch_norm(many, gamma, beta, &mut stats, BatchNormMode::Eval).unwrap();
        assert_eq!(g.value(y1).data(), &g.value(y3).data()[..6]);
        assert_eq!(stats.mean, vec![0.5, -1.0]);
    }

    #[test]
    fn untracked_graph_has_no_grads() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full([1, 2], 1.0));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).is_none());
    }
}
