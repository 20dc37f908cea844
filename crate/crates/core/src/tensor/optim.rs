use super::{ModelParameters, ParamGrads, Scalar};
use crate::error::{Error, Result};

/// Adam with coupled L2 regularization (`g ← g + l2·w` before the moment
/// updates) and bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64, l2: f64) -> Self {
        Self {
            lr,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of every trainable parameter that has a gradient in `grads`.
    ///
    /// Checks every gradient before touching any parameter, so a non-finite
    /// gradient leaves the model unchanged.
    pub fn step<F: Scalar>(&self, params: &mut ModelParameters<F>, grads: &ParamGrads<F>) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(vec![format!("learning rate must be positive, got {}", self.lr)]));
        }
        for (name, g) in grads {
            let entry = params
                .entry(name)
                .ok_or_else(|| Error::Config(vec![format!("gradient for unknown parameter `{name}`")]))?;
            if g.len() != entry.tensor.len() {
                return Err(Error::dim("adam_step", name.clone(), "gradient length differs from parameter"));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        params.step += 1;
        let t = params.step as i32;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let bc1 = F::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(t));
        let lr = F::from_f64(self.lr);
        let l2 = F::from_f64(self.l2);
        let eps = F::from_f64(self.eps);
        let one = F::one();
        for (name, entry) in params.entries_mut() {
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            let w = entry.tensor.data_mut();
            for i in 0..w.len() {
                let gi = g[i] + l2 * w[i];
                entry.m[i] = b1 * entry.m[i] + (one - b1) * gi;
                entry.v[i] = b2 * entry.v[i] + (one - b2) * gi * gi;
                let m_hat = entry.m[i] / bc1;
                let v_hat = entry.v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single Adam step with the default moment constants.
pub fn adam_step<F: Scalar>(params: &mut ModelParameters<F>, grads: &ParamGrads<F>, lr: f64, l2: f64) -> Result<()> {
    Adam::new(lr, l2).step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f64) -> ModelParameters<f64> {
        let mut p = ModelParameters::new();
        p.insert("w", Tensor::full([1], w), true);
        p
    }

    fn grad(g: f64) -> ParamGrads<f64> {
        [("w".to_string(), vec![g])].into_iter().collect()
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g, v̂ = g², so the first step moves by lr·g/(|g| + eps).
        let mut p = single(1.0);
        adam_step(&mut p, &grad(1.0), 0.001, 0.0).unwrap();
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.tensor("w").data()[0] - expected).abs() < 1e-15);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = single(0.75);
        for _ in 0..5 {
            adam_step(&mut p, &grad(0.0), 0.001, 0.0).unwrap();
        }
        assert_eq!(p.tensor("w").data()[0], 0.75);
    }

    #[test]
    fn l2_acts_as_gradient() {
        // effective gradient 0.001·1 → first step lr·0.001/(0.001 + eps)
        let mut p = single(1.0);
        adam_step(&mut p, &grad(0.0), 0.001, 0.001).unwrap();
        let expected = 1.0 - 0.001 * 0.001 / (0.001 + 1e-8);
        assert!((p.tensor("w").data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_shrinks_magnitude_every_step() {
        let mut p = single(-2.0);
        let mut prev = 2.0;
        for _ in 0..50 {
            adam_step(&mut p, &grad(0.0), 0.001, 0.01).unwrap();
            let now = p.tensor("w").data()[0].abs();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_names_parameter_and_leaves_model() {
        let mut p = single(1.0);
        let err = adam_step(&mut p, &grad(f64::NAN), 0.001, 0.0).unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "w"));
        assert_eq!(p.tensor("w").data()[0], 1.0);
        assert_eq!(p.step(), 0);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut p = single(1.0);
        p.insert("running_mean", Tensor::full([1], 3.0), false);
        let mut g = grad(1.0);
        g.insert("running_mean".into(), vec![1.0]);
        adam_step(&mut p, &g, 0.1, 0.0).unwrap();
        assert_eq!(p.tensor("running_mean").data()[0], 3.0);
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut p = ModelParameters::<f32>::new();
            p.insert("a", Tensor::from_fn([7], |i| i as f32 * 0.37 - 1.0), true);
            for s in 0..20 {
                let g: ParamGrads<f32> = [("a".to_string(), (0..7).map(|i| ((i * s) as f32).sin()).collect())]
                    .into_iter()
                    .collect();
                adam_step(&mut p, &g, 0.001, 0.01).unwrap();
            }
            p.tensor("a").data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
