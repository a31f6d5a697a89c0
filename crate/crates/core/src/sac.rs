//! Soft Actor-Critic: tanh-squashed Gaussian actor, twin critics with
//! Polyak-averaged targets, adaptive entropy temperature, and a FIFO
//! replay buffer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Adam, AdamConfig, Mlp, Real, Tape, Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Weight kept by the target nets on each Polyak update.
    pub tau: f64,
    pub init_alpha: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Defaults to `-action_dim` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: 256,
            hidden_layers: 2,
            learning_rate: 1e-4,
            gamma: 0.99,
            tau: 0.995,
            init_alpha: 0.1,
            batch_size: 256,
            buffer_capacity: 100_000,
            log_std_min: -5.0,
            log_std_max: 2.0,
            target_entropy: None,
        }
    }
}

/// One environment transition, tagged with the skill in force.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub z: Vec<f64>,
    /// Stored reward; relabeled at update time when intrinsic.
    pub reward: f64,
    /// True only for terminal states, not time limits.
    pub done: bool,
}

/// Columns of a sampled minibatch.
#[derive(Clone, Debug)]
pub struct TransitionBatch<F> {
    pub s: Tensor<F>,
    pub a: Tensor<F>,
    pub s_next: Tensor<F>,
    /// `None` when the buffer stores no skill.
    pub z: Option<Tensor<F>>,
    pub reward: Vec<F>,
    pub done: Vec<F>,
}

impl<F: Real> TransitionBatch<F> {
    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `s (+) z` and `s' (+) z`.
    pub fn policy_inputs(&self) -> Result<(Tensor<F>, Tensor<F>)> {
        match &self.z {
            Some(z) => Ok((Tensor::hcat(&[&self.s, z])?, Tensor::hcat(&[&self.s_next, z])?)),
            None => Ok((self.s.clone(), self.s_next.clone())),
        }
    }
}

/// Ring buffer with FIFO eviction and uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<F> {
    capacity: usize,
    dims: [usize; 3],
    len: usize,
    head: usize,
    s: Vec<F>,
    a: Vec<F>,
    s_next: Vec<F>,
    z: Vec<F>,
    reward: Vec<F>,
    done: Vec<F>,
}

impl<F: Real> ReplayBuffer<F> {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize, skill_dim: usize) -> Self {
        ReplayBuffer {
            capacity,
            dims: [state_dim, action_dim, skill_dim],
            len: 0,
            head: 0,
            s: Vec::new(),
            a: Vec::new(),
            s_next: Vec::new(),
            z: Vec::new(),
            reward: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let [ds, da, dz] = self.dims;
        if t.s.len() != ds || t.s_next.len() != ds {
            return Err(Error::dim("transition state", ds, t.s.len().max(t.s_next.len())));
        }
        if t.a.len() != da {
            return Err(Error::dim("transition action", da, t.a.len()));
        }
        if t.z.len() != dz {
            return Err(Error::dim("transition skill", dz, t.z.len()));
        }
        let conv = |xs: &[f64]| xs.iter().map(|&x| F::lit(x)).collect::<Vec<F>>();
        let done = if t.done { F::one() } else { F::zero() };
        if self.len < self.capacity {
            self.s.extend(conv(&t.s));
            self.a.extend(conv(&t.a));
            self.s_next.extend(conv(&t.s_next));
            self.z.extend(conv(&t.z));
            self.reward.push(F::lit(t.reward));
            self.done.push(done);
            self.len += 1;
        } else {
            let h = self.head;
            self.s[h * ds..(h + 1) * ds].copy_from_slice(&conv(&t.s));
            self.a[h * da..(h + 1) * da].copy_from_slice(&conv(&t.a));
            self.s_next[h * ds..(h + 1) * ds].copy_from_slice(&conv(&t.s_next));
            self.z[h * dz..(h + 1) * dz].copy_from_slice(&conv(&t.z));
            self.reward[h] = F::lit(t.reward);
            self.done[h] = done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Row `i` in insertion order among the stored transitions.
    pub fn get(&self, i: usize) -> Result<Transition> {
        if i >= self.len {
            return Err(Error::OutOfRange {
                index: i,
                len: self.len,
            });
        }
        let slot = if self.len < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        };
        let [ds, da, dz] = self.dims;
        let f = |xs: &[F]| xs.iter().map(|x| x.to_f64().unwrap()).collect::<Vec<f64>>();
        Ok(Transition {
            s: f(&self.s[slot * ds..(slot + 1) * ds]),
            a: f(&self.a[slot * da..(slot + 1) * da]),
            s_next: f(&self.s_next[slot * ds..(slot + 1) * ds]),
            z: f(&self.z[slot * dz..(slot + 1) * dz]),
            reward: self.reward[slot].to_f64().unwrap(),
            done: self.done[slot] == F::one(),
        })
    }

    /// Gathers storage slots into batch tensors.
    pub fn gather(&self, slots: &[usize]) -> Result<TransitionBatch<F>> {
        if slots.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let [ds, da, dz] = self.dims;
        let b = slots.len();
        let pick = |src: &[F], w: usize| {
            let mut out = Vec::with_capacity(b * w);
            for &i in slots {
                out.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
            out
        };
        Ok(TransitionBatch {
            s: Tensor::matrix(b, ds, pick(&self.s, ds))?,
            a: Tensor::matrix(b, da, pick(&self.a, da))?,
            s_next: Tensor::matrix(b, ds, pick(&self.s_next, ds))?,
            z: if dz == 0 {
                None
            } else {
                Some(Tensor::matrix(b, dz, pick(&self.z, dz))?)
            },
            reward: slots.iter().map(|&i| self.reward[i]).collect(),
            done: slots.iter().map(|&i| self.done[i]).collect(),
        })
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<TransitionBatch<F>> {
        if self.len == 0 {
            return Err(Error::contract("sampling from an empty replay buffer"));
        }
        let slots: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len)).collect();
        self.gather(&slots)
    }
}

/// Loss values from one call to [`SacAgent::update`], averaged over steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_reward: f64,
    pub entropy: f64,
}

fn normal_tensor<F: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<F> {
    let data = (0..rows * cols)
        .map(|_| F::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

/// `log(1 - tanh(u)^2)` in a form that stays finite for large `|u|`.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Skill-conditioned SAC agent. Inputs are `obs (+) z`.
#[derive(Clone, Debug)]
pub struct SacAgent<F> {
    cfg: SacConfig,
    input_dim: usize,
    action_dim: usize,
    actor: Mlp<F>,
    critics: [Mlp<F>; 2],
    targets: [Mlp<F>; 2],
    log_alpha: f64,
    actor_opt: Adam<F>,
    critic_opts: [Adam<F>; 2],
    alpha_opt: Adam<f64>,
    updates: u64,
}

impl<F: Real> SacAgent<F> {
    /// `input_dim` is the width of `obs (+) z`.
    pub fn new(input_dim: usize, action_dim: usize, cfg: &SacConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.init_alpha <= 0.0 {
            return Err(Error::config("sac.init_alpha", "must be positive"));
        }
        let hidden = std::iter::repeat_n(cfg.hidden, cfg.hidden_layers);
        let mut actor_sizes = vec![input_dim];
        actor_sizes.extend(hidden.clone());
        actor_sizes.push(2 * action_dim);
        let mut critic_sizes = vec![input_dim + action_dim];
        critic_sizes.extend(hidden);
        critic_sizes.push(1);
        let actor = Mlp::new("actor", &actor_sizes, Activation::Relu, rng)?;
        let c1 = Mlp::new("critic0", &critic_sizes, Activation::Relu, rng)?;
        let c2 = Mlp::new("critic1", &critic_sizes, Activation::Relu, rng)?;
        let opt = AdamConfig::with_lr(cfg.learning_rate);
        Ok(SacAgent {
            cfg: cfg.clone(),
            input_dim,
            action_dim,
            actor,
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            log_alpha: cfg.init_alpha.ln(),
            actor_opt: Adam::new(opt),
            critic_opts: [Adam::new(opt), Adam::new(opt)],
            alpha_opt: Adam::new(opt),
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha = v;
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    pub fn actor(&self) -> &Mlp<F> {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp<F> {
        &mut self.actor
    }

    pub fn critic(&self, j: usize) -> &Mlp<F> {
        &self.critics[j]
    }

    pub fn critic_mut(&mut self, j: usize) -> &mut Mlp<F> {
        &mut self.critics[j]
    }

    pub fn target(&self, j: usize) -> &Mlp<F> {
        &self.targets[j]
    }

    pub fn target_mut(&mut self, j: usize) -> &mut Mlp<F> {
        &mut self.targets[j]
    }

    fn log_std_from_raw(&self, raw: F) -> F {
        let (lo, hi) = (F::lit(self.cfg.log_std_min), F::lit(self.cfg.log_std_max));
        lo + F::lit(0.5) * (hi - lo) * (raw.tanh() + F::one())
    }

    /// Pre-squash mean and log-std, each `[B, A]`.
    pub fn policy_params(&self, inputs: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let out = self.actor.infer(inputs)?;
        let a = self.action_dim;
        let ls = out.cols_range(a, 2 * a).map(|v| self.log_std_from_raw(v));
        Ok((out.cols_range(0, a), ls))
    }

    /// Squashed actions and their log-probabilities for given noise.
    pub fn sample_from_noise(&self, inputs: &Tensor<F>, noise: &Tensor<F>) -> Result<(Tensor<F>, Vec<F>)> {
        let (mu, ls) = self.policy_params(inputs)?;
        if noise.shape() != mu.shape() {
            return Err(Error::dim(
                "policy noise",
                format!("{:?}", mu.shape()),
                format!("{:?}", noise.shape()),
            ));
        }
        let (b, a) = (mu.rows(), self.action_dim);
        let mut actions = Vec::with_capacity(b * a);
        let mut logp = Vec::with_capacity(b);
        for r in 0..b {
            let mut lp = 0.0;
            for k in 0..a {
                let (m, l, e) = (mu.row_slice(r)[k], ls.row_slice(r)[k], noise.row_slice(r)[k]);
                let u = m + l.exp() * e;
                actions.push(u.tanh());
                let (l, e, u) = (l.to_f64().unwrap(), e.to_f64().unwrap(), u.to_f64().unwrap());
                lp += -0.5 * e * e - l - 0.5 * LN_2PI - log_tanh_jacobian(u);
            }
            logp.push(F::lit(lp));
        }
        Ok((Tensor::matrix(b, a, actions)?, logp))
    }

    /// Action for one input row: `tanh(mean)` or a squashed sample.
    pub fn act(&self, input: &[f64], stochastic: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let x = Tensor::row(input.iter().map(|&v| F::lit(v)).collect());
        Ok(self
            .act_batch(&x, stochastic, rng)?
            .data()
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect())
    }

    pub fn act_batch(&self, inputs: &Tensor<F>, stochastic: bool, rng: &mut impl Rng) -> Result<Tensor<F>> {
        if stochastic {
            let noise = normal_tensor(inputs.rows(), self.action_dim, rng);
            Ok(self.sample_from_noise(inputs, &noise)?.0)
        } else {
            Ok(self.policy_params(inputs)?.0.map(|v| v.tanh()))
        }
    }

    fn q_min(nets: &[Mlp<F>; 2], x: &Tensor<F>) -> Result<Vec<F>> {
        let q1 = nets[0].infer(x)?;
        let q2 = nets[1].infer(x)?;
        Ok(q1.data().iter().zip(q2.data()).map(|(&a, &b)| a.min(b)).collect())
    }

    /// Bellman target `r + gamma (1 - done) (min_j Q'_j(s', a') - alpha log pi(a'|s'))`.
    pub fn critic_target(
        &self,
        next_inputs: &Tensor<F>,
        reward: &[F],
        done: &[F],
        next_noise: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        let (a_next, logp) = self.sample_from_noise(next_inputs, next_noise)?;
        let q = Self::q_min(&self.targets, &Tensor::hcat(&[next_inputs, &a_next])?)?;
        let (g, alpha) = (F::lit(self.cfg.gamma), F::lit(self.alpha()));
        let y = (0..reward.len())
            .map(|r| reward[r] + g * (F::one() - done[r]) * (q[r] - alpha * logp[r]))
            .collect();
        Tensor::matrix(reward.len(), 1, y)
    }

    /// `sum_j mean((Q_j(s, a) - y)^2)`, trainable in both critics.
    pub fn critic_loss(
        &self,
        tape: &mut Tape<F>,
        inputs: &Tensor<F>,
        actions: &Tensor<F>,
        target: &Tensor<F>,
    ) -> Result<Var> {
        let x = tape.constant(Tensor::hcat(&[inputs, actions])?);
        let y = tape.constant(target.clone());
        let mut total = None;
        for c in &self.critics {
            let q = c.forward(tape, x)?;
            let d = tape.sub(q, y)?;
            let sq = tape.square(d);
            let m = tape.mean(sq);
            total = Some(match total {
                None => m,
                Some(t) => tape.add(t, m)?,
            });
        }
        Ok(total.expect("two critics"))
    }

    /// `mean(alpha log pi(a|s) - min_j Q_j(s, a))` with reparameterized
    /// actions; trainable in the actor only. Also returns the per-row
    /// log-probabilities.
    pub fn actor_loss(&self, tape: &mut Tape<F>, inputs: &Tensor<F>, noise: &Tensor<F>) -> Result<(Var, Vec<F>)> {
        let a = self.action_dim;
        let b = inputs.rows();
        if noise.shape() != [b, a] {
            return Err(Error::dim(
                "policy noise",
                format!("[{b}, {a}]"),
                format!("{:?}", noise.shape()),
            ));
        }
        let x = tape.constant(inputs.clone());
        let out = self.actor.forward(tape, x)?;
        let mu = tape.cols(out, 0, a)?;
        let raw = tape.cols(out, a, 2 * a)?;
        let th = tape.tanh(raw);
        let th1 = tape.offset(th, F::one());
        let (lo, hi) = (self.cfg.log_std_min, self.cfg.log_std_max);
        let scaled = tape.scale(th1, F::lit(0.5 * (hi - lo)));
        let ls = tape.offset(scaled, F::lit(lo));
        let std = tape.exp(ls);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps)?;
        let u = tape.add(mu, spread)?;
        let act = tape.tanh(u);

        // log N(u; mu, std) = -eps^2/2 - log std - log(2 pi)/2
        let consts: Vec<F> = (0..b)
            .map(|r| {
                let e2: f64 = noise.row_slice(r).iter().map(|v| v.to_f64().unwrap().powi(2)).sum();
                F::lit(-0.5 * e2 - 0.5 * LN_2PI * a as f64)
            })
            .collect();
        let c = tape.constant(Tensor::matrix(b, 1, consts)?);
        let sum_ls = tape.row_sum(ls);
        let gauss = tape.sub(c, sum_ls)?;
        // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
        let m2u = tape.scale(u, F::lit(-2.0));
        let sp = tape.softplus(m2u);
        let inner = tape.add(u, sp)?;
        let neg = tape.neg(inner);
        let shifted = tape.offset(neg, F::lit(LN_2));
        let jac = tape.scale(shifted, F::lit(2.0));
        let jac_sum = tape.row_sum(jac);
        let logp = tape.sub(gauss, jac_sum)?;

        let xa = tape.concat(&[x, act])?;
        let q1 = self.critics[0].forward_frozen(tape, xa)?;
        let q2 = self.critics[1].forward_frozen(tape, xa)?;
        let q = tape.minimum(q1, q2)?;
        let ent = tape.scale(logp, F::lit(self.alpha()));
        let diff = tape.sub(ent, q)?;
        let loss = tape.mean(diff);
        let lp = tape.value(logp).data().to_vec();
        Ok((loss, lp))
    }

    /// `-log_alpha * mean(log pi + target_entropy)` with `log_alpha` a
    /// trainable scalar named `log_alpha`.
    pub fn alpha_loss(&self, tape: &mut Tape<F>, logp: &[F]) -> Result<Var> {
        if logp.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let h = self.target_entropy();
        let m = logp.iter().map(|v| v.to_f64().unwrap() + h).sum::<f64>() / logp.len() as f64;
        let la = tape.param("log_alpha", &Tensor::scalar(F::lit(self.log_alpha)));
        let c = tape.constant(Tensor::scalar(F::lit(-m)));
        tape.mul(la, c)
    }

    /// Moves each target net toward its critic:
    /// `target = tau * target + (1 - tau) * critic`.
    pub fn polyak_update(&mut self) {
        let tau = F::lit(self.cfg.tau);
        for j in 0..2 {
            let src = self.critics[j].params().clone();
            self.targets[j].params_mut().polyak_from(&src, tau);
        }
    }

    fn diverged(&self, what: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::Divergence {
                what: what.into(),
                step: self.updates,
            })
        }
    }

    /// One SAC gradient step on a batch whose rewards have already been
    /// computed. Returns `(critic loss, actor loss, mean log pi)`.
    pub fn update_on_batch(
        &mut self,
        batch: &TransitionBatch<F>,
        reward: &[F],
        rng: &mut impl Rng,
    ) -> Result<(f64, f64, f64)> {
        let b = batch.len();
        if reward.len() != b {
            return Err(Error::dim("relabeled rewards", b, reward.len()));
        }
        let (inputs, next_inputs) = batch.policy_inputs()?;
        let next_noise = normal_tensor(b, self.action_dim, rng);
        let y = self.critic_target(&next_inputs, reward, &batch.done, &next_noise)?;

        let mut tape = Tape::new();
        let closs = self.critic_loss(&mut tape, &inputs, &batch.a, &y)?;
        let cval = tape.value(closs).item().to_f64().unwrap();
        self.diverged("critic loss", cval)?;
        let grads = tape.backward(closs)?;
        for j in 0..2 {
            self.critic_opts[j].step(self.critics[j].params_mut(), &grads)?;
        }

        let noise = normal_tensor(b, self.action_dim, rng);
        let mut tape = Tape::new();
        let (aloss, logp) = self.actor_loss(&mut tape, &inputs, &noise)?;
        let aval = tape.value(aloss).item().to_f64().unwrap();
        self.diverged("actor loss", aval)?;
        let grads = tape.backward(aloss)?;
        self.actor_opt.step(self.actor.params_mut(), &grads)?;

        let mean_logp = logp.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / b as f64;
        let grad = -(mean_logp + self.target_entropy());
        let mut la = self.log_alpha;
        self.alpha_opt.step_scalar("log_alpha", &mut la, grad)?;
        self.diverged("entropy temperature", la)?;
        self.log_alpha = la;

        self.polyak_update();
        self.updates += 1;
        Ok((cval, aval, mean_logp))
    }

    /// `grad_steps` updates on uniform minibatches; `reward_fn` supplies
    /// each batch's rewards (relabeling).
    pub fn update(
        &mut self,
        buffer: &ReplayBuffer<F>,
        reward_fn: &mut dyn FnMut(&TransitionBatch<F>) -> Result<Vec<F>>,
        batch_size: usize,
        grad_steps: usize,
        rng: &mut impl Rng,
    ) -> Result<UpdateStats> {
        if buffer.len() < batch_size {
            return Err(Error::contract(format!(
                "replay buffer holds {} transitions, batch needs {batch_size}",
                buffer.len()
            )));
        }
        let mut stats = UpdateStats::default();
        for _ in 0..grad_steps {
            let batch = buffer.sample(batch_size, rng)?;
            let reward = reward_fn(&batch)?;
            stats.mean_reward += reward.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / reward.len() as f64;
            let (c, a, lp) = self.update_on_batch(&batch, &reward, rng)?;
            stats.critic_loss += c;
            stats.actor_loss += a;
            stats.entropy -= lp;
        }
        let n = grad_steps.max(1) as f64;
        stats.critic_loss /= n;
        stats.actor_loss /= n;
        stats.mean_reward /= n;
        stats.entropy /= n;
        stats.alpha = self.alpha();
        Ok(stats)
    }

    pub fn named_arrays(&self) -> Vec<(String, Tensor<F>)> {
        let mut out: Vec<(String, Tensor<F>)> = Vec::new();
        for net in [&self.actor, &self.critics[0], &self.critics[1]] {
            out.extend(net.params().iter().map(|(k, v)| (k.to_string(), v.clone())));
        }
        for (j, net) in self.targets.iter().enumerate() {
            out.extend(net.params().iter().map(|(k, v)| (format!("target.{j}.{k}"), v.clone())));
        }
        out.push(("log_alpha".into(), Tensor::scalar(F::lit(self.log_alpha))));
        out
    }

    pub fn load_arrays(&mut self, arrays: &[(String, Tensor<F>)]) -> Result<()> {
        crate::tensor::load_params(self.actor.params_mut(), arrays)?;
        for c in &mut self.critics {
            crate::tensor::load_params(c.params_mut(), arrays)?;
        }
        for (j, t) in self.targets.iter_mut().enumerate() {
            let prefix = format!("target.{j}.");
            let renamed: Vec<(String, Tensor<F>)> = arrays
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), v.clone())))
                .collect();
            crate::tensor::load_params(t.params_mut(), &renamed)?;
        }
        self.log_alpha = crate::tensor::find_array(arrays, "log_alpha")?.item().to_f64().unwrap();
        Ok(())
    }
}
