//! Factorized skills, per-factor embeddings and the skill-discovery
//! reward with its dual objectives.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::FactorSpec;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Mlp, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkillMode {
    Continuous,
    Discrete,
}

/// A skill `z` made of `n` blocks of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillVector {
    mode: SkillMode,
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl SkillVector {
    pub fn continuous(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::dim("skill vector", n * d, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("continuous skill has a non-finite value"));
        }
        Ok(SkillVector {
            mode: SkillMode::Continuous,
            n,
            d,
            values,
        })
    }

    /// One-hot blocks with the hot position of block `i` at `indices[i]`.
    pub fn one_hot(d: usize, indices: &[usize]) -> Result<Self> {
        let mut values = vec![0.0; indices.len() * d];
        for (i, &k) in indices.iter().enumerate() {
            if k >= d {
                return Err(Error::OutOfRange { index: k, len: d });
            }
            values[i * d + k] = 1.0;
        }
        Ok(SkillVector {
            mode: SkillMode::Discrete,
            n: indices.len(),
            d,
            values,
        })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        SkillVector {
            mode: SkillMode::Continuous,
            n,
            d,
            values: vec![0.0; n * d],
        }
    }

    pub fn mode(&self) -> SkillMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// Hot index of block `i` for discrete skills.
    pub fn index(&self, i: usize) -> Option<usize> {
        match self.mode {
            SkillMode::Discrete => self.block(i).iter().position(|&v| v == 1.0),
            SkillMode::Continuous => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkillPrior {
    pub n: usize,
    pub d: usize,
    pub mode: SkillMode,
}

impl SkillPrior {
    pub fn dim(&self) -> usize {
        self.n * self.d
    }
}

/// Standard normal coordinates, or a uniform one-hot per block.
pub fn sample_skill(prior: &SkillPrior, rng: &mut impl Rng) -> SkillVector {
    match prior.mode {
        SkillMode::Continuous => {
            let values = (0..prior.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            SkillVector {
                mode: SkillMode::Continuous,
                n: prior.n,
                d: prior.d,
                values,
            }
        }
        SkillMode::Discrete => {
            let idx: Vec<usize> = (0..prior.n).map(|_| rng.random_range(0..prior.d)).collect();
            SkillVector::one_hot(prior.d, &idx).expect("indices drawn below d")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillsConfig {
    /// Expected factor count; checked against the factorization when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub d: usize,
    pub mode: SkillMode,
    /// One of [`FACTORIZATIONS`](crate::envs::FACTORIZATIONS).
    pub factorization: String,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub lambda_init: f64,
    pub epsilon: f64,
}

impl Default for SkillsConfig {
    fn default() -> Self {
        SkillsConfig {
            n: None,
            d: 2,
            mode: SkillMode::Continuous,
            factorization: "native".into(),
            hidden: 256,
            hidden_layers: 2,
            lambda_init: 3000.0,
            epsilon: 1e-6,
        }
    }
}

/// One embedding net `phi_i` per factor plus its Lagrange multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBank<F> {
    nets: Vec<Mlp<F>>,
    lambdas: Vec<f64>,
    epsilon: f64,
    d: usize,
}

/// A batch of adjacent state pairs with the skill active at the time.
#[derive(Clone, Debug)]
pub struct PairBatch<F> {
    pub s: Tensor<F>,
    pub s_next: Tensor<F>,
    pub z: Tensor<F>,
}

impl<F: Real> PairBatch<F> {
    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<F: Real> EmbeddingBank<F> {
    pub fn new(spec: &FactorSpec, cfg: &SkillsConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut nets = Vec::with_capacity(spec.len());
        for (i, f) in spec.factors().iter().enumerate() {
            let mut sizes = vec![f.dim()];
            sizes.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
            sizes.push(cfg.d);
            nets.push(Mlp::new(&format!("phi{i}"), &sizes, Activation::Relu, rng)?);
        }
        if cfg.epsilon <= 0.0 {
            return Err(Error::config("skills.epsilon", "must be positive"));
        }
        if cfg.lambda_init < 0.0 {
            return Err(Error::config("skills.lambda_init", "must be nonnegative"));
        }
        Ok(EmbeddingBank {
            nets,
            lambdas: vec![cfg.lambda_init; spec.len()],
            epsilon: cfg.epsilon,
            d: cfg.d,
        })
    }

    /// Builds a bank from existing nets (all with output width `d`).
    pub fn from_nets(nets: Vec<Mlp<F>>, lambdas: Vec<f64>, epsilon: f64) -> Result<Self> {
        let d = nets.first().map(|n| n.output_dim()).unwrap_or(0);
        if nets.iter().any(|n| n.output_dim() != d) || lambdas.len() != nets.len() {
            return Err(Error::contract(
                "embedding nets must share an output width, one lambda each",
            ));
        }
        if lambdas.iter().any(|&l| l < 0.0) {
            return Err(Error::contract("lambda must be nonnegative"));
        }
        Ok(EmbeddingBank {
            nets,
            lambdas,
            epsilon,
            d,
        })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn net(&self, i: usize) -> &Mlp<F> {
        &self.nets[i]
    }

    pub fn net_mut(&mut self, i: usize) -> &mut Mlp<F> {
        &mut self.nets[i]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn set_lambda(&mut self, i: usize, value: f64) {
        self.lambdas[i] = value.max(0.0);
    }

    /// One ascent step on `lambda_i`, clamped at zero.
    pub fn ascend_lambda(&mut self, i: usize, grad: f64, lr: f64) {
        self.set_lambda(i, self.lambdas[i] + lr * grad);
    }

    fn check_spec(&self, spec: &FactorSpec) -> Result<()> {
        if spec.len() != self.nets.len() {
            return Err(Error::dim("factor count", self.nets.len(), spec.len()));
        }
        Ok(())
    }

    /// `phi_i` applied to factor `i` of each row of `states`.
    pub fn embed(&self, spec: &FactorSpec, states: &Tensor<F>, i: usize) -> Result<Tensor<F>> {
        self.check_spec(spec)?;
        let r = spec.factor(i)?.range();
        self.nets[i].infer(&states.cols_range(r.start, r.end))
    }

    /// `phi_i(s'^i) - phi_i(s^i)` per row.
    pub fn displacement(&self, spec: &FactorSpec, s: &Tensor<F>, s_next: &Tensor<F>, i: usize) -> Result<Tensor<F>> {
        let a = self.embed(spec, s, i)?;
        let b = self.embed(spec, s_next, i)?;
        let data = b.data().iter().zip(a.data()).map(|(&x, &y)| x - y).collect();
        Tensor::new(b.shape().to_vec(), data)
    }

    pub fn named_arrays(&self) -> Vec<(String, Tensor<F>)> {
        let mut out: Vec<(String, Tensor<F>)> = self
            .nets
            .iter()
            .flat_map(|n| n.params().iter().map(|(k, v)| (k.to_string(), v.clone())))
            .collect();
        out.push((
            "lambdas".into(),
            Tensor::new(
                vec![self.lambdas.len()],
                self.lambdas.iter().map(|&l| F::lit(l)).collect(),
            )
            .expect("1-d"),
        ));
        out
    }

    /// Restores values saved by [`named_arrays`](Self::named_arrays) into a
    /// bank of the same layout.
    pub fn load_arrays(&mut self, arrays: &[(String, Tensor<F>)]) -> Result<()> {
        for net in &mut self.nets {
            crate::tensor::load_params(net.params_mut(), arrays)?;
        }
        let l = crate::tensor::find_array(arrays, "lambdas")?;
        if l.numel() != self.lambdas.len() {
            return Err(Error::dim("lambdas", self.lambdas.len(), l.numel()));
        }
        self.lambdas = l.data().iter().map(|v| v.to_f64().unwrap()).collect();
        Ok(())
    }
}

/// Per-row coefficients `c` such that the factor reward is `c . delta`.
///
/// Continuous skills use the skill block itself. Discrete skills use
/// `+1` at the hot index and `-1/(D-1)` elsewhere.
pub fn reward_direction<F: Real>(mode: SkillMode, z_block: &Tensor<F>) -> Result<Tensor<F>> {
    match mode {
        SkillMode::Continuous => Ok(z_block.clone()),
        SkillMode::Discrete => {
            let d = z_block.cols();
            if d < 2 {
                return Err(Error::Unsupported("discrete skills need D >= 2".into()));
            }
            let off = F::one() / F::lit((d - 1) as f64);
            Ok(z_block.map(|v| if v == F::one() { F::one() } else { -off }))
        }
    }
}

/// `(phi(s') - phi(s)) . z` from precomputed embeddings.
pub fn displacement_reward(phi_s: &[f64], phi_next: &[f64], z: &[f64]) -> f64 {
    phi_s.iter().zip(phi_next).zip(z).map(|((a, b), c)| (b - a) * c).sum()
}

/// The same reward expressed through the scaled embedding `phi / d`:
/// `d * (phi(s')/d - phi(s)/d) . z`.
pub fn scaled_displacement_reward(phi_s: &[f64], phi_next: &[f64], z: &[f64], d: f64) -> f64 {
    let inner: f64 = phi_s
        .iter()
        .zip(phi_next)
        .zip(z)
        .map(|((a, b), c)| (b / d - a / d) * c)
        .sum();
    d * inner
}

fn single_row<F: Real>(x: &[f64]) -> Tensor<F> {
    Tensor::row(x.iter().map(|&v| F::lit(v)).collect())
}

/// Reward of factor `i` for one transition.
///
/// Continuous skills give `(phi_i(s'^i) - phi_i(s^i)) . z^i`; discrete
/// skills dispatch to [`discrete_factor_reward`].
pub fn factor_reward<F: Real>(
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    s: &[f64],
    s_next: &[f64],
    z: &SkillVector,
    i: usize,
) -> Result<f64> {
    let delta = bank.displacement(spec, &single_row(s), &single_row(s_next), i)?;
    let delta: Vec<f64> = delta.data().iter().map(|v| v.to_f64().unwrap()).collect();
    match z.mode() {
        SkillMode::Continuous => Ok(delta.iter().zip(z.block(i)).map(|(a, b)| a * b).sum()),
        SkillMode::Discrete => {
            let k = z
                .index(i)
                .ok_or_else(|| Error::contract("discrete block without a hot index"))?;
            discrete_factor_reward(&delta, k)
        }
    }
}

/// `delta_k - (1/(D-1)) * sum_{j != k} delta_j`.
pub fn discrete_factor_reward(delta: &[f64], k: usize) -> Result<f64> {
    let d = delta.len();
    if d < 2 {
        return Err(Error::Unsupported("discrete skills need D >= 2".into()));
    }
    if k >= d {
        return Err(Error::OutOfRange { index: k, len: d });
    }
    let others: f64 = delta.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, v)| v).sum();
    Ok(delta[k] - others / (d - 1) as f64)
}

/// Per-factor rewards and displacement norms for a batch, each `[B, N]`.
pub struct FactorBatchStats<F> {
    pub rewards: Tensor<F>,
    pub norms: Tensor<F>,
}

pub fn factor_batch_stats<F: Real>(
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    batch: &PairBatch<F>,
    mode: SkillMode,
) -> Result<FactorBatchStats<F>> {
    let (b, n, d) = (batch.len(), spec.len(), bank.d());
    if batch.z.cols() != n * d {
        return Err(Error::dim("skill width", n * d, batch.z.cols()));
    }
    let mut rewards = vec![F::zero(); b * n];
    let mut norms = vec![F::zero(); b * n];
    for i in 0..n {
        let delta = bank.displacement(spec, &batch.s, &batch.s_next, i)?;
        let c = reward_direction(mode, &batch.z.cols_range(i * d, (i + 1) * d))?;
        for r in 0..b {
            let dr = delta.row_slice(r);
            let cr = c.row_slice(r);
            rewards[r * n + i] = dr.iter().zip(cr).map(|(&x, &y)| x * y).sum();
            norms[r * n + i] = dr.iter().map(|&x| x * x).sum::<F>().sqrt();
        }
    }
    Ok(FactorBatchStats {
        rewards: Tensor::matrix(b, n, rewards)?,
        norms: Tensor::matrix(b, n, norms)?,
    })
}

fn check_batch<F: Real>(batch: &PairBatch<F>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    Ok(())
}

/// Records `min(eps, 1 - ||delta||)` per row on the tape, with `phi_i`
/// trainable or frozen. Returns `(delta, penalty)`.
fn record_penalty<F: Real>(
    tape: &mut Tape<F>,
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    batch: &PairBatch<F>,
    i: usize,
    trainable: bool,
) -> Result<(Var, Var)> {
    check_batch(batch)?;
    bank.check_spec(spec)?;
    let r = spec.factor(i)?.range();
    let si = tape.constant(batch.s.cols_range(r.start, r.end));
    let ni = tape.constant(batch.s_next.cols_range(r.start, r.end));
    let net = &bank.nets[i];
    let (a, b) = if trainable {
        (net.forward(tape, si)?, net.forward(tape, ni)?)
    } else {
        (net.forward_frozen(tape, si)?, net.forward_frozen(tape, ni)?)
    };
    let delta = tape.sub(b, a)?;
    let norm = tape.row_norm(delta);
    let neg = tape.neg(norm);
    let slack = tape.offset(neg, F::one());
    let pen = tape.min_const(slack, F::lit(bank.epsilon));
    Ok((delta, pen))
}

/// `mean(r_i + lambda_i * min(eps, 1 - ||delta phi_i||))`, trainable in
/// `phi_i`. Maximize it.
pub fn phi_objective<F: Real>(
    tape: &mut Tape<F>,
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    batch: &PairBatch<F>,
    mode: SkillMode,
    i: usize,
) -> Result<Var> {
    let (delta, pen) = record_penalty(tape, bank, spec, batch, i, true)?;
    let d = bank.d();
    let c = tape.constant(reward_direction(mode, &batch.z.cols_range(i * d, (i + 1) * d))?);
    let prod = tape.mul(delta, c)?;
    let r = tape.row_sum(prod);
    let lp = tape.scale(pen, F::lit(bank.lambdas[i]));
    let total = tape.add(r, lp)?;
    Ok(tape.mean(total))
}

/// Name of the tape parameter holding `lambda_i`.
pub fn lambda_param_name(i: usize) -> String {
    format!("lambda{i}")
}

/// `-lambda_i * mean(min(eps, 1 - ||delta phi_i||))` with `phi_i` frozen
/// and `lambda_i` a trainable scalar. Maximize it.
pub fn lambda_objective<F: Real>(
    tape: &mut Tape<F>,
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    batch: &PairBatch<F>,
    i: usize,
) -> Result<Var> {
    let (_, pen) = record_penalty(tape, bank, spec, batch, i, false)?;
    let m = tape.mean(pen);
    let lam = tape.param(&lambda_param_name(i), &Tensor::scalar(F::lit(bank.lambdas[i])));
    let prod = tape.mul(lam, m)?;
    Ok(tape.neg(prod))
}

/// `d/d lambda_i` of the lambda objective: the negated mean penalty.
pub fn lambda_gradient<F: Real>(
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    batch: &PairBatch<F>,
    i: usize,
) -> Result<f64> {
    check_batch(batch)?;
    let delta = bank.displacement(spec, &batch.s, &batch.s_next, i)?;
    let eps = bank.epsilon;
    let mut acc = 0.0;
    for r in 0..delta.rows() {
        let norm = delta
            .row_slice(r)
            .iter()
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt();
        acc += eps.min(1.0 - norm);
    }
    Ok(-acc / delta.rows() as f64)
}

/// `R = sum_i w_i r_i` for one transition.
pub fn total_intrinsic_reward<F: Real>(
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    weights: &[f64],
    s: &[f64],
    s_next: &[f64],
    z: &SkillVector,
) -> Result<f64> {
    if weights.len() != spec.len() {
        return Err(Error::dim("curiosity weights", spec.len(), weights.len()));
    }
    let mut rewards = Vec::with_capacity(spec.len());
    for i in 0..spec.len() {
        rewards.push(factor_reward(bank, spec, s, s_next, z, i)?);
    }
    weighted_sum(&rewards, weights)
}

pub fn weighted_sum(rewards: &[f64], weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|&w| w < 0.0 || w.is_nan()) {
        return Err(Error::contract("curiosity weights must be nonnegative"));
    }
    Ok(rewards.iter().zip(weights).map(|(r, w)| r * w).sum())
}

/// Row-wise `sum_i w_i r_i` for `[B, N]` rewards and weights.
pub fn weighted_rewards<F: Real>(rewards: &Tensor<F>, weights: &Tensor<F>) -> Result<Vec<F>> {
    if rewards.shape() != weights.shape() {
        return Err(Error::dim(
            "weights",
            format!("{:?}", rewards.shape()),
            format!("{:?}", weights.shape()),
        ));
    }
    if weights.data().iter().any(|&w| !(w >= F::zero())) {
        return Err(Error::contract("curiosity weights must be nonnegative"));
    }
    Ok((0..rewards.rows())
        .map(|r| {
            rewards
                .row_slice(r)
                .iter()
                .zip(weights.row_slice(r))
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect())
}

/// Per factor, the unit direction from `phi_i(s^i)` to `phi_i(g^i)`;
/// zero when the two embeddings coincide to within `1e-8`.
pub fn zero_shot_skill<F: Real>(
    bank: &EmbeddingBank<F>,
    spec: &FactorSpec,
    state: &[f64],
    goal: &[f64],
) -> Result<SkillVector> {
    let d = bank.d();
    let mut values = Vec::with_capacity(spec.len() * d);
    for i in 0..spec.len() {
        let delta = bank.displacement(spec, &single_row(state), &single_row(goal), i)?;
        let delta: Vec<f64> = delta.data().iter().map(|v| v.to_f64().unwrap()).collect();
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 {
            values.extend(std::iter::repeat_n(0.0, d));
        } else {
            values.extend(delta.iter().map(|v| v / norm));
        }
    }
    SkillVector::continuous(spec.len(), d, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Factor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_bank(weights: &[Vec<f64>], dims: &[usize]) -> (EmbeddingBank<f64>, FactorSpec) {
        let mut nets = Vec::new();
        let mut factors = Vec::new();
        let mut at = 0;
        for (i, (w, &dim)) in weights.iter().zip(dims).enumerate() {
            let mut net = Mlp::zeros(&format!("phi{i}"), &[dim, w.len() / dim], Activation::Relu).unwrap();
            net.weight_mut(0).data_mut().copy_from_slice(w);
            nets.push(net);
            factors.push(Factor::new(format!("f{i}"), at..at + dim, true));
            at += dim;
        }
        let spec = FactorSpec::new(factors, at).unwrap();
        let n = nets.len();
        (EmbeddingBank::from_nets(nets, vec![3000.0; n], 1e-6).unwrap(), spec)
    }

    #[test]
    fn continuous_samples_are_standard_normal() {
        let prior = SkillPrior {
            n: 1,
            d: 2,
            mode: SkillMode::Continuous,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let z = sample_skill(&prior, &mut rng);
            for k in 0..2 {
                sum[k] += z.values()[k];
                sq[k] += z.values()[k].powi(2);
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn discrete_samples_are_uniform_one_hot() {
        let prior = SkillPrior {
            n: 1,
            d: 4,
            mode: SkillMode::Discrete,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let z = sample_skill(&prior, &mut rng);
            assert_eq!(z.values().iter().sum::<f64>(), 1.0);
            counts[z.index(0).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn skill_dimension_is_n_times_d() {
        let prior = SkillPrior {
            n: 7,
            d: 2,
            mode: SkillMode::Continuous,
        };
        let z = sample_skill(&prior, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(z.dim(), 14);
    }

    #[test]
    fn factor_reward_is_displacement_dot_skill() {
        // phi(x) = x for a 2-dim factor
        let (bank, spec) = linear_bank(&[vec![1.0, 0.0, 0.0, 1.0]], &[2]);
        let z = SkillVector::continuous(1, 2, vec![0.5, -1.0]).unwrap();
        let r = factor_reward(&bank, &spec, &[0.0, 0.0], &[1.0, 2.0], &z, 0).unwrap();
        assert!((r + 1.5).abs() < 1e-12);
        assert_eq!(
            factor_reward(&bank, &spec, &[0.3, 0.1], &[0.3, 0.1], &z, 0).unwrap(),
            0.0
        );
        let zero = SkillVector::zeros(1, 2);
        assert_eq!(
            factor_reward(&bank, &spec, &[0.0, 0.0], &[1.0, 2.0], &zero, 0).unwrap(),
            0.0
        );
    }

    fn one_pair(delta: [f64; 2], z: [f64; 2]) -> PairBatch<f64> {
        PairBatch {
            s: Tensor::row(vec![0.0, 0.0]),
            s_next: Tensor::row(delta.to_vec()),
            z: Tensor::row(z.to_vec()),
        }
    }

    fn objective_value(bank: &EmbeddingBank<f64>, spec: &FactorSpec, batch: &PairBatch<f64>) -> f64 {
        let mut tape = Tape::new();
        let v = phi_objective(&mut tape, bank, spec, batch, SkillMode::Continuous, 0).unwrap();
        tape.value(v).item()
    }

    #[test]
    fn phi_objective_penalty_values() {
        let (mut bank, spec) = linear_bank(&[vec![1.0, 0.0, 0.0, 1.0]], &[2]);
        // norm 1.2, zero skill: penalty 3000 * (1 - 1.2)
        let v = objective_value(&bank, &spec, &one_pair([1.2, 0.0], [0.0, 0.0]));
        assert!((v + 600.0).abs() < 1e-9);
        // norm 0.5: slack capped by eps
        let v = objective_value(&bank, &spec, &one_pair([0.5, 0.0], [0.0, 0.0]));
        assert!((v - 0.003).abs() < 1e-12);
        bank.set_lambda(0, 0.0);
        let v = objective_value(&bank, &spec, &one_pair([1.2, 0.0], [1.0, 1.0]));
        assert!((v - 1.2).abs() < 1e-12);
    }

    #[test]
    fn lambda_objective_and_gradient() {
        let (bank, spec) = linear_bank(&[vec![1.0, 0.0, 0.0, 1.0]], &[2]);
        let batch = one_pair([1.2, 0.0], [0.0, 0.0]);
        let mut tape = Tape::new();
        let v = lambda_objective(&mut tape, &bank, &spec, &batch, 0).unwrap();
        assert!((tape.value(v).item() - 600.0).abs() < 1e-9);
        let g = tape.backward(v).unwrap();
        let dl = g.get(&lambda_param_name(0)).unwrap().item();
        assert!((dl - 0.2).abs() < 1e-12);
        assert!((lambda_gradient(&bank, &spec, &batch, 0).unwrap() - 0.2).abs() < 1e-12);

        let satisfied = one_pair([0.5, 0.0], [0.0, 0.0]);
        assert!((lambda_gradient(&bank, &spec, &satisfied, 0).unwrap() + 1e-6).abs() < 1e-18);
    }

    #[test]
    fn zero_lambda_stays_zero_when_satisfied() {
        let (mut bank, spec) = linear_bank(&[vec![1.0, 0.0, 0.0, 1.0]], &[2]);
        bank.set_lambda(0, 0.0);
        let g = lambda_gradient(&bank, &spec, &one_pair([0.5, 0.0], [0.0, 0.0]), 0).unwrap();
        bank.ascend_lambda(0, g, 1e-4);
        assert_eq!(bank.lambdas()[0], 0.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (bank, spec) = linear_bank(&[vec![1.0, 0.0, 0.0, 1.0]], &[2]);
        let empty = PairBatch {
            s: Tensor::zeros(&[0, 2]),
            s_next: Tensor::zeros(&[0, 2]),
            z: Tensor::zeros(&[0, 2]),
        };
        let mut tape = Tape::new();
        assert!(phi_objective(&mut tape, &bank, &spec, &empty, SkillMode::Continuous, 0).is_err());
        assert!(lambda_objective(&mut tape, &bank, &spec, &empty, 0).is_err());
    }

    #[test]
    fn weighted_reward_arithmetic() {
        assert!((weighted_sum(&[0.3, 5.0], &[2.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(weighted_sum(&[0.3], &[-1.0]).is_err());
        let (bank, spec) = linear_bank(&[vec![1.0, 0.0, 0.0, 1.0], vec![2.0, 0.0, 0.0, 2.0]], &[2, 2]);
        let z = SkillVector::continuous(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = [0.0; 4];
        let s2 = [0.1, 0.2, 0.3, 0.4];
        let unit = total_intrinsic_reward(&bank, &spec, &[1.0, 1.0], &s, &s2, &z).unwrap();
        let r0 = factor_reward(&bank, &spec, &s, &s2, &z, 0).unwrap();
        let r1 = factor_reward(&bank, &spec, &s, &s2, &z, 1).unwrap();
        assert!((unit - (r0 + r1)).abs() < 1e-15);
        assert!((unit - (0.1 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn discrete_reward_cases() {
        assert!((discrete_factor_reward(&[0.3, -0.1], 0).unwrap() - 0.4).abs() < 1e-15);
        for k in 0..3 {
            assert_eq!(discrete_factor_reward(&[0.7, 0.7, 0.7], k).unwrap(), 0.0);
        }
        assert!(matches!(discrete_factor_reward(&[1.0], 0), Err(Error::Unsupported(_))));
        let delta = [0.4, -1.3, 2.2];
        let total: f64 = (0..3).map(|k| discrete_factor_reward(&delta, k).unwrap()).sum();
        assert!(total.abs() <= 1e-12);
    }

    #[test]
    fn discrete_direction_matches_scalar_formula() {
        let z = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let c = reward_direction(SkillMode::Discrete, &z).unwrap();
        let delta = [0.4, -1.3, 2.2];
        let via_c: f64 = c.data().iter().zip(delta).map(|(a, b)| a * b).sum();
        assert!((via_c - discrete_factor_reward(&delta, 1).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn zero_shot_skill_is_unit_or_zero() {
        let (bank, spec) = linear_bank(&[vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0, 1.0]], &[2, 2]);
        let s = [0.1, 0.2, 0.3, -0.4];
        assert!(zero_shot_skill(&bank, &spec, &s, &s)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let g = [1.0, -2.0, 0.3, -0.4];
        let z = zero_shot_skill(&bank, &spec, &s, &g).unwrap();
        let n0: f64 = z.block(0).iter().map(|v| v * v).sum();
        assert!((n0 - 1.0).abs() < 1e-12);
        assert_eq!(z.block(1), &[0.0, 0.0]);
        let back = zero_shot_skill(&bank, &spec, &g, &s).unwrap();
        for (a, b) in z.values().iter().zip(back.values()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_embedding_gives_same_reward() {
        let a = [0.3, -1.2];
        let b = [2.5, 0.7];
        let z = [0.9, -0.4];
        let direct = displacement_reward(&a, &b, &z);
        let scaled = scaled_displacement_reward(&a, &b, &z, 3.7);
        assert!(((direct - scaled) / direct).abs() < 1e-12);
    }
}
