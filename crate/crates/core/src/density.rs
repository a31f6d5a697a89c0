//! Conditional diagonal Gaussian `q(s'|s)`, per-factor negative
//! log-likelihoods, and curiosity weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::FactorSpec;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Adam, Mlp, Real, Tape, Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub logvar_min: f64,
    pub logvar_max: f64,
    pub weight_floor: WeightFloor,
}

/// What is subtracted from a factor NLL before the square root.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFloor {
    /// Nothing; negative NLLs give weight 0.
    Zero,
    /// The lowest NLL reachable under the log-variance clamp.
    #[default]
    LogvarClamp,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            hidden: 256,
            hidden_layers: 2,
            logvar_min: -10.0,
            logvar_max: 4.0,
            weight_floor: WeightFloor::LogvarClamp,
        }
    }
}

/// `s -> (mu(s), log sigma^2(s))` over the full next state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCondModel<F> {
    net: Mlp<F>,
    logvar_min: f64,
    logvar_max: f64,
    weight_floor: WeightFloor,
    fitted: bool,
}

/// Negative log-likelihood of `x` under `N(mu, diag(exp(logvar)))`.
pub fn gaussian_nll(x: &[f64], mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * x
        .iter()
        .zip(mu)
        .zip(logvar)
        .map(|((&x, &m), &lv)| (x - m).powi(2) * (-lv).exp() + lv + LN_2PI)
        .sum::<f64>()
}

/// `sqrt(max(0, nll - floor))`.
pub fn weight_from_nll(nll: f64, floor: f64) -> f64 {
    (nll - floor).max(0.0).sqrt()
}

/// Smallest NLL a `dim`-dimensional prediction can reach when the
/// log-variance is clamped below at `logvar_min`.
pub fn nll_floor(dim: usize, logvar_min: f64) -> f64 {
    0.5 * dim as f64 * (logvar_min + LN_2PI)
}

impl<F: Real> GaussianCondModel<F> {
    pub fn new(state_dim: usize, cfg: &DensityConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.logvar_min >= cfg.logvar_max {
            return Err(Error::config("density.logvar_min", "must be below logvar_max"));
        }
        let mut sizes = vec![state_dim];
        sizes.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        sizes.push(2 * state_dim);
        Ok(GaussianCondModel {
            net: Mlp::new("density", &sizes, Activation::Relu, rng)?,
            logvar_min: cfg.logvar_min,
            logvar_max: cfg.logvar_max,
            weight_floor: cfg.weight_floor,
            fitted: false,
        })
    }

    /// Wraps an existing net whose output width is twice its input width.
    /// Weights use [`WeightFloor::Zero`].
    pub fn from_net(net: Mlp<F>, logvar_min: f64, logvar_max: f64) -> Result<Self> {
        if net.output_dim() != 2 * net.input_dim() {
            return Err(Error::dim("density output", 2 * net.input_dim(), net.output_dim()));
        }
        Ok(GaussianCondModel {
            net,
            logvar_min,
            logvar_max,
            weight_floor: WeightFloor::Zero,
            fitted: false,
        })
    }

    pub fn net(&self) -> &Mlp<F> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<F> {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn with_weight_floor(mut self, floor: WeightFloor) -> Self {
        self.weight_floor = floor;
        self
    }

    /// Value subtracted from the NLL of a `dim`-wide factor.
    pub fn weight_offset(&self, dim: usize) -> f64 {
        match self.weight_floor {
            WeightFloor::Zero => 0.0,
            WeightFloor::LogvarClamp => nll_floor(dim, self.logvar_min),
        }
    }

    pub fn mark_fitted(&mut self) {
        self.fitted = true;
    }

    /// Mean and clamped log-variance, each `[B, S]`.
    pub fn predict(&self, s: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let out = self.net.infer(s)?;
        let d = self.state_dim();
        let (lo, hi) = (F::lit(self.logvar_min), F::lit(self.logvar_max));
        let lv = out.cols_range(d, 2 * d).map(|v| v.max(lo).min(hi));
        Ok((out.cols_range(0, d), lv))
    }

    /// Records the batch-mean full-state NLL with trainable weights.
    pub fn record_nll(&self, tape: &mut Tape<F>, s: &Tensor<F>, s_next: &Tensor<F>) -> Result<Var> {
        if s.rows() == 0 {
            return Err(Error::contract("empty batch"));
        }
        if s_next.shape() != s.shape() {
            return Err(Error::dim(
                "next states",
                format!("{:?}", s.shape()),
                format!("{:?}", s_next.shape()),
            ));
        }
        let d = self.state_dim();
        let input = tape.constant(s.clone());
        let out = self.net.forward(tape, input)?;
        let mu = tape.cols(out, 0, d)?;
        let raw = tape.cols(out, d, 2 * d)?;
        let lv = tape.clamp(raw, F::lit(self.logvar_min), F::lit(self.logvar_max));
        let x = tape.constant(s_next.clone());
        let diff = tape.sub(x, mu)?;
        let sq = tape.square(diff);
        let nlv = tape.neg(lv);
        let prec = tape.exp(nlv);
        let maha = tape.mul(sq, prec)?;
        let with_logdet = tape.add(maha, lv)?;
        let terms = tape.offset(with_logdet, F::lit(LN_2PI));
        let per_row = tape.row_sum(terms);
        let half = tape.scale(per_row, F::lit(0.5));
        Ok(tape.mean(half))
    }

    /// Maximum-likelihood Adam steps on minibatches drawn from
    /// `(s, s_next)`. Returns the loss of each step.
    pub fn fit(
        &mut self,
        opt: &mut Adam<F>,
        s: &Tensor<F>,
        s_next: &Tensor<F>,
        grad_steps: usize,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        let n = s.rows();
        if n == 0 {
            return Err(Error::contract("density fit needs at least one transition"));
        }
        let mut losses = Vec::with_capacity(grad_steps);
        for step in 0..grad_steps {
            let idx: Vec<usize> = (0..batch_size.min(n)).map(|_| rng.random_range(0..n)).collect();
            let (bs, bn) = (s.gather_rows(&idx), s_next.gather_rows(&idx));
            let mut tape = Tape::new();
            let loss = self.record_nll(&mut tape, &bs, &bn)?;
            let value = tape.value(loss).item().to_f64().unwrap();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    what: "density nll".into(),
                    step: step as u64,
                });
            }
            let grads = tape.backward(loss)?;
            opt.step(self.net.params_mut(), &grads)?;
            losses.push(value);
        }
        self.fitted = true;
        Ok(losses)
    }

    /// Full-state NLL per row.
    pub fn nll_rows(&self, s: &Tensor<F>, s_next: &Tensor<F>) -> Result<Vec<f64>> {
        let (mu, lv) = self.predict(s)?;
        Ok((0..s.rows())
            .map(|r| gaussian_nll(&f64_row(s_next, r), &f64_row(&mu, r), &f64_row(&lv, r)))
            .collect())
    }

    /// Per-factor NLL, `[B, N]`.
    pub fn factor_nll_batch(&self, spec: &FactorSpec, s: &Tensor<F>, s_next: &Tensor<F>) -> Result<Tensor<F>> {
        if spec.state_dim() != self.state_dim() {
            return Err(Error::dim("factor spec state dim", self.state_dim(), spec.state_dim()));
        }
        let (mu, lv) = self.predict(s)?;
        let (b, n) = (s.rows(), spec.len());
        let mut out = Vec::with_capacity(b * n);
        for r in 0..b {
            let (x, m, v) = (s_next.row_slice(r), mu.row_slice(r), lv.row_slice(r));
            for f in spec.factors() {
                let mut acc = F::zero();
                for k in f.range() {
                    let diff = x[k] - m[k];
                    acc += diff * diff * (-v[k]).exp() + v[k];
                }
                let nll = F::lit(0.5) * (acc + F::lit(LN_2PI * f.dim() as f64));
                out.push(nll);
            }
        }
        Tensor::matrix(b, n, out)
    }

    /// Curiosity weights `[B, N]`: `sqrt(max(0, nll_i - floor_i))` with
    /// `floor_i` from [`Self::weight_offset`]. All ones before the
    /// first fit.
    pub fn curiosity_weights_batch(&self, spec: &FactorSpec, s: &Tensor<F>, s_next: &Tensor<F>) -> Result<Tensor<F>> {
        if !self.fitted {
            return Ok(Tensor::full(&[s.rows(), spec.len()], F::one()));
        }
        let floors: Vec<F> = spec
            .factors()
            .iter()
            .map(|f| F::lit(self.weight_offset(f.dim())))
            .collect();
        let mut nll = self.factor_nll_batch(spec, s, s_next)?;
        let n = spec.len();
        for (k, v) in nll.data_mut().iter_mut().enumerate() {
            *v = (*v - floors[k % n]).max(F::zero()).sqrt();
        }
        Ok(nll)
    }

    pub fn named_arrays(&self) -> Vec<(String, Tensor<F>)> {
        self.net
            .params()
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    pub fn load_arrays(&mut self, arrays: &[(String, Tensor<F>)]) -> Result<()> {
        crate::tensor::load_params(self.net.params_mut(), arrays)?;
        self.fitted = true;
        Ok(())
    }
}

fn f64_row<F: Real>(t: &Tensor<F>, r: usize) -> Vec<f64> {
    t.row_slice(r).iter().map(|v| v.to_f64().unwrap()).collect()
}

fn one_row<F: Real>(x: &[f64]) -> Tensor<F> {
    Tensor::row(x.iter().map(|&v| F::lit(v)).collect())
}

/// `-log q(s'^i | s)` for one transition.
pub fn factor_nll<F: Real>(
    model: &GaussianCondModel<F>,
    spec: &FactorSpec,
    s: &[f64],
    s_next: &[f64],
    i: usize,
) -> Result<f64> {
    spec.factor(i)?;
    let t = model.factor_nll_batch(spec, &one_row(s), &one_row(s_next))?;
    Ok(t.row_slice(0)[i].to_f64().unwrap())
}

/// One weight per factor for a single transition.
pub fn curiosity_weights<F: Real>(
    model: &GaussianCondModel<F>,
    spec: &FactorSpec,
    s: &[f64],
    s_next: &[f64],
) -> Result<Vec<f64>> {
    let t = model.curiosity_weights_batch(spec, &one_row(s), &one_row(s_next))?;
    Ok(t.data().iter().map(|v| v.to_f64().unwrap()).collect())
}
