use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamSet, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Bias-corrected Adam. Moments are keyed by parameter name and created
/// lazily on the first step.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: HashMap<String, Tensor<F>>,
    second_moment: HashMap<String, Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step_count: 0,
            first_moment: HashMap::new(),
            second_moment: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One descent step on every parameter in `params` that has a gradient.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &Gradients<F>) -> Result<()> {
        for (name, p) in params.iter() {
            if let Some(g) = grads.get(name) {
                if g.shape() != p.shape() {
                    return Err(Error::dim(
                        format!("adam grad for `{name}`"),
                        format!("{:?}", p.shape()),
                        format!("{:?}", g.shape()),
                    ));
                }
                if !g.is_finite() {
                    return Err(Error::Divergence {
                        what: format!("non-finite gradient for `{name}`"),
                        step: self.step_count,
                    });
                }
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let lr = F::lit(c.learning_rate);
        let eps = F::lit(c.eps);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .first_moment
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .second_moment
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Adam step on a bare scalar (used for Lagrange multipliers and the
    /// entropy temperature).
    pub fn step_scalar(&mut self, name: &str, value: &mut F, grad: F) -> Result<()> {
        let mut set = ParamSet::new();
        set.push(name, Tensor::scalar(*value));
        let mut grads = Gradients::default();
        grads.insert(name, Tensor::scalar(grad));
        self.step(&mut set, &grads)?;
        *value = set.get(name).unwrap().item();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut params = ParamSet::<f64>::new();
        params.push("p", Tensor::row(vec![1.0, -2.0]));
        let before = params.clone();
        let mut grads = Gradients::default();
        grads.insert("p", Tensor::row(vec![0.0, 0.0]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps) ≈ lr
        let mut x = 0.5f64;
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step_scalar("x", &mut x, 1.0).unwrap();
        let expected = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((x - expected).abs() < 1e-15);
        assert!((0.5 - x - 0.1).abs() < 1e-8);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut params = ParamSet::<f64>::new();
        params.push("critic.w0", Tensor::scalar(1.0));
        let mut grads = Gradients::default();
        grads.insert("critic.w0", Tensor::scalar(f64::NAN));
        let err = Adam::new(AdamConfig::default()).step(&mut params, &grads).unwrap_err();
        assert!(err.to_string().contains("critic.w0"), "{err}");
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut params = ParamSet::<f64>::new();
            params.push("w", Tensor::row(vec![0.3, -0.7, 1.1]));
            let mut adam = Adam::new(AdamConfig::with_lr(0.01));
            for _ in 0..25 {
                let mut tape = Tape::new();
                let w = tape.param("w", params.get("w").unwrap());
                let sq = tape.square(w);
                let loss = tape.sum(sq);
                let g = tape.backward(loss).unwrap();
                adam.step(&mut params, &g).unwrap();
            }
            params.get("w").unwrap().data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
