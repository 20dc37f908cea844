//! Finite-difference checks of every differentiable op, in f64.

mod common;

use common::{grad_check, GradCheck, MAX_REL_ERR};
use voxdep::depression::{DepressionCnn, DepressionCnnConfig};
use voxdep::tensor::{BatchNormMode, Graph, RunningStats, Tensor, Var};
use voxdep::vowel::{VowelCnn, VowelCnnConfig};

const TRIALS: usize = 20;

fn assert_ok(name: &str, r: GradCheck) {
    assert!(r.trials >= 20);
    assert!(r.worst < MAX_REL_ERR, "{name}: worst relative error {:.3e}", r.worst);
}

#[test]
fn conv2d() {
    let r = grad_check(&[vec![2, 2, 5, 4], vec![3, 2, 3, 2]], TRIALS, 1, |g, v| {
        g.conv2d(v[0], v[1], (0, 0)).unwrap()
    });
    assert_ok("conv2d", r);
    let r = grad_check(&[vec![1, 2, 4, 4], vec![2, 2, 3, 3]], TRIALS, 2, |g, v| {
        g.conv2d(v[0], v[1], (1, 1)).unwrap()
    });
    assert_ok("conv2d padded", r);
}

#[test]
fn conv1d() {
    let r = grad_check(&[vec![2, 3, 9], vec![4, 3, 7]], TRIALS, 3, |g, v| g.conv1d(v[0], v[1], 0).unwrap());
    assert_ok("conv1d", r);
    let r = grad_check(&[vec![2, 3, 5], vec![2, 3, 7]], TRIALS, 4, |g, v| g.conv1d(v[0], v[1], 3).unwrap());
    assert_ok("conv1d padded", r);
}

#[test]
fn channel_bias() {
    let r = grad_check(&[vec![2, 3, 4, 2], vec![3]], TRIALS, 5, |g, v| g.channel_bias(v[0], v[1]).unwrap());
    assert_ok("channel_bias", r);
}

#[test]
fn relu() {
    let r = grad_check(&[vec![3, 7]], TRIALS, 6, |g, v| g.relu(v[0]));
    assert_ok("relu", r);
}

fn bn(g: &mut Graph<f64>, v: &[Var], mode: BatchNormMode) -> Var {
    let mut stats = RunningStats::new(3);
    stats.mean = vec![0.2, -0.1, 0.05];
    stats.var = vec![0.7, 1.3, 0.9];
    g.batch_norm(v[0], v[1], v[2], &mut stats, mode).unwrap()
}

#[test]
fn batch_norm_train() {
    let r = grad_check(&[vec![4, 3, 2, 3], vec![3], vec![3]], TRIALS, 7, |g, v| {
        bn(g, v, BatchNormMode::Train)
    });
    assert_ok("batch_norm train", r);
}

#[test]
fn batch_norm_eval() {
    let r = grad_check(&[vec![2, 3, 5], vec![3], vec![3]], TRIALS, 8, |g, v| bn(g, v, BatchNormMode::Eval));
    assert_ok("batch_norm eval", r);
}

#[test]
fn max_pool2d() {
    let r = grad_check(&[vec![2, 2, 6, 5]], TRIALS, 9, |g, v| g.max_pool2d(v[0], (2, 1)).unwrap());
    assert_ok("max_pool2d (2,1)", r);
    let r = grad_check(&[vec![1, 2, 5, 6]], TRIALS, 10, |g, v| g.max_pool2d(v[0], (2, 3)).unwrap());
    assert_ok("max_pool2d (2,3)", r);
}

#[test]
fn max_pool1d() {
    let r = grad_check(&[vec![2, 3, 9]], TRIALS, 11, |g, v| g.max_pool1d(v[0], 2).unwrap());
    assert_ok("max_pool1d", r);
}

#[test]
fn spp() {
    let r = grad_check(&[vec![2, 2, 7, 5]], TRIALS, 12, |g, v| g.spp(v[0], &[1, 2, 4]).unwrap());
    assert_ok("spp", r);
    let r = grad_check(&[vec![1, 2, 2, 3]], TRIALS, 13, |g, v| g.spp(v[0], &[1, 2, 4]).unwrap());
    assert_ok("spp small map", r);
}

#[test]
fn reshape_and_flatten() {
    let r = grad_check(&[vec![2, 3, 4]], TRIALS, 14, |g, v| {
        let f = g.flatten(v[0]).unwrap();
        g.reshape(f, &[4, 6]).unwrap()
    });
    assert_ok("reshape", r);
}

#[test]
fn dense() {
    let r = grad_check(&[vec![3, 5], vec![4, 5], vec![4]], TRIALS, 15, |g, v| g.dense(v[0], v[1], v[2]).unwrap());
    assert_ok("dense", r);
}

#[test]
fn softmax_cross_entropy() {
    let r = grad_check(&[vec![4, 6]], TRIALS, 16, |g, v| g.softmax_cross_entropy(v[0], &[0, 5, 2, 2]).unwrap());
    assert_ok("softmax_cross_entropy", r);
}

#[test]
fn pick_sum_mul_const() {
    let r = grad_check(&[vec![3, 4]], TRIALS, 17, |g, v| g.pick(v[0], &[3, 0, 1]).unwrap());
    assert_ok("pick", r);
    let r = grad_check(&[vec![2, 5]], TRIALS, 18, |g, v| g.sum(v[0]));
    assert_ok("sum", r);
    let w: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
    let r = grad_check(&[vec![2, 5]], TRIALS, 19, |g, v| g.mul_const(v[0], &w).unwrap());
    assert_ok("mul_const", r);
}

fn small_vowel_cfg() -> VowelCnnConfig {
    VowelCnnConfig {
        n_mels: 24,
        channels: 3,
        hidden: 5,
        ..VowelCnnConfig::default()
    }
}

/// Gradients of the whole vowel CNN loss with respect to its input, with
/// the trained parameters held fixed.
#[test]
fn vowel_cnn_input_gradient() {
    let model = VowelCnn::<f64>::new(small_vowel_cfg(), 3).unwrap();
    for (mode, seed) in [(BatchNormMode::Train, 20), (BatchNormMode::Eval, 21)] {
        let r = grad_check(&[vec![2, 1, 24, 6]], TRIALS, seed, |g, v| {
            let f = model.forward(g, v[0], mode, false).unwrap();
            g.softmax_cross_entropy(f.logits, &[1, 4]).unwrap()
        });
        assert_ok("vowel cnn", r);
    }
}

fn vowel_loss(model: &VowelCnn<f64>, x: &Tensor<f64>, want: bool) -> (f64, Vec<(String, Vec<f64>)>) {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let f = model.forward(&mut g, xv, BatchNormMode::Train, want).unwrap();
    let loss = g.softmax_cross_entropy(f.logits, &[0, 3]).unwrap();
    let value = g.value(loss).data()[0];
    if !want {
        return (value, Vec::new());
    }
    let mut grads = g.backward(loss).unwrap();
    let named = f
        .params
        .iter()
        .filter_map(|(n, v)| grads.take(*v).map(|gr| (n.clone(), gr)))
        .collect();
    (value, named)
}

#[test]
fn vowel_cnn_parameter_gradients() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    for trial in 0..TRIALS {
        let model = VowelCnn::<f64>::new(small_vowel_cfg(), trial as u64).unwrap();
        let x = common::random_tensor(&[2, 1, 24, 5], &mut rng);
        let (_, analytic) = vowel_loss(&model, &x, true);
        assert_eq!(analytic.len(), 16, "every trainable parameter gets a gradient");
        for (name, grad) in &analytic {
            let len = grad.len();
            let coords: Vec<usize> = (0..len.min(8)).map(|i| (i * 7919 + trial) % len).collect();
            let mut num = Vec::new();
            let mut ana = Vec::new();
            for &i in &coords {
                let mut plus = model.clone();
                plus.params.get_mut(name).unwrap().data_mut()[i] += common::FD_STEP;
                let mut minus = model.clone();
                minus.params.get_mut(name).unwrap().data_mut()[i] -= common::FD_STEP;
                num.push((vowel_loss(&plus, &x, false).0 - vowel_loss(&minus, &x, false).0) / (2.0 * common::FD_STEP));
                ana.push(grad[i]);
            }
            let err = common::rel_err(&ana, &num);
            assert!(err < MAX_REL_ERR, "{name}: relative error {err:.3e}");
        }
    }
}

#[test]
fn depression_cnn_input_gradient() {
    let cfg = DepressionCnnConfig {
        embed_dim: 6,
        filters: 4,
        hidden: 5,
        ..DepressionCnnConfig::default()
    };
    for n in [10usize, 21] {
        let model = DepressionCnn::<f64>::new(cfg.clone(), n, 6).unwrap();
        let r = grad_check(&[vec![2, 6, n]], TRIALS, 23 + n as u64, |g, v| {
            let f = model.forward(g, v[0], false).unwrap();
            g.softmax_cross_entropy(f.logits, &[0, 1]).unwrap()
        });
        assert_ok("depression cnn", r);
    }
}
