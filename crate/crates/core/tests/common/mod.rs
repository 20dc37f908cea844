#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use voxdep::audio::Waveform;
use voxdep::tensor::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Coordinates probed per input per trial; small inputs are probed fully.
pub const PROBES: usize = 48;

/// Values in ±[0.1, 1], away from the ReLU kink.
pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub struct GradCheck {
    pub trials: usize,
    pub worst: f64,
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` builds the op on fresh parameter leaves; non-scalar outputs are
/// reduced with a fixed random projection so every output element
/// contributes.
pub fn grad_check<F>(shapes: &[Vec<usize>], trials: usize, seed: u64, f: F) -> GradCheck
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
        let mut weights: Option<Vec<f64>> = None;
        let mut eval = |inputs: &[Tensor<f64>], want_grads: bool| -> (f64, Vec<Vec<f64>>) {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
            let y = f(&mut g, &vars);
            let loss = if g.value(y).len() == 1 {
                y
            } else {
                let n = g.value(y).len();
                let w = weights.get_or_insert_with(|| (0..n).map(|i| ((i * 7919 % 17) as f64 - 8.0) / 8.0).collect());
                let p = g.mul_const(y, w).unwrap();
                g.sum(p)
            };
            let value = g.value(loss).data()[0];
            if !want_grads {
                return (value, Vec::new());
            }
            let grads = g.backward(loss).unwrap();
            let out = vars
                .iter()
                .zip(inputs)
                .map(|(v, t)| grads.get(*v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
                .collect();
            (value, out)
        };
        let (_, analytic) = eval(&inputs, true);
        for (k, input) in inputs.iter().enumerate() {
            let coords: Vec<usize> = if input.len() <= PROBES {
                (0..input.len()).collect()
            } else {
                (0..PROBES).map(|_| rng.random_range(0..input.len())).collect()
            };
            let mut num = Vec::new();
            let mut ana = Vec::new();
            for &i in &coords {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += FD_STEP;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= FD_STEP;
                let d = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_STEP);
                num.push(d);
                ana.push(analytic[k][i]);
            }
            worst = worst.max(rel_err(&ana, &num));
        }
    }
    GradCheck { trials, worst }
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-10)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

pub fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn binomial_tail_oracle(b: usize, c: usize) -> f64 {
    let n = b + c;
    let k = b.min(c);
    // C(n, i) / 2^n accumulated with exact integer binomials
    let mut coef: u128 = 1;
    let mut tail: u128 = 0;
    for i in 0..=k {
        if i > 0 {
            coef = coef * (n - i + 1) as u128 / i as u128;
        }
        tail += coef;
    }
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

/// Student t density integrated with composite Simpson on [0, |t|].
pub fn t_two_sided_oracle(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * PI).ln();
    let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let steps = 20_000;
    let h = t.abs() / steps as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..steps {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (1.0 - 2.0 * s * h / 3.0).clamp(0.0, 1.0)
}

pub const SR: u32 = 16_000;

pub fn tone(hz: f64, secs: f64, amp: f64) -> Waveform {
    let n = (secs * SR as f64) as usize;
    Waveform::new(
        (0..n)
            .map(|i| (amp * (2.0 * PI * hz * i as f64 / SR as f64).sin()) as f32)
            .collect(),
        SR,
    )
}

/// One cosine cycle per period, peaking at the period start, with
/// periods alternating `T(1 + d)` and `T(1 − d)`.
pub fn alternating_tone(hz: f64, d: f64, secs: f64) -> Waveform {
    let total = (secs * SR as f64) as usize;
    let base = SR as f64 / hz;
    let mut out = Vec::with_capacity(total);
    let mut k = 0usize;
    let mut t0 = 0.0f64;
    while out.len() < total {
        let period = base * if k.is_multiple_of(2) { 1.0 + d } else { 1.0 - d };
        let t1 = t0 + period;
        while (out.len() as f64) < t1 && out.len() < total {
            let phase = (out.len() as f64 - t0) / period;
            out.push((0.5 * (2.0 * PI * phase).cos()) as f32);
        }
        t0 = t1;
        k += 1;
    }
    Waveform::new(out, SR)
}
