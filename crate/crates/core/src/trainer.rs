//! The pretraining loop: per epoch, collect episodes under fresh skills,
//! fit the density model, update the embeddings, update the multipliers,
//! then run SAC on the intrinsic reward.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::density::GaussianCondModel;
use crate::envs::{make_env, resolve_factorization, Env, FactorSpec, INFO_TIME_LIMIT};
use crate::error::{Error, Result};
use crate::sac::{ReplayBuffer, SacAgent, Transition, TransitionBatch};
use crate::skills::{
    factor_batch_stats, lambda_gradient, phi_objective, sample_skill, weighted_rewards, EmbeddingBank, PairBatch,
    SkillMode, SkillPrior, SkillVector,
};
use crate::tensor::{load_checkpoint, save_checkpoint, Adam, AdamConfig, Real, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "full")]
    Full,
    /// Curiosity weights fixed at 1.
    #[serde(rename = "susd-w")]
    NoWeighting,
    /// Weights fixed at 1 and a single embedding over the whole state.
    #[serde(rename = "susd-wf")]
    NoWeightingNoFactorization,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoWeighting => "susd-w",
            Ablation::NoWeightingNoFactorization => "susd-wf",
        }
    }

    pub fn uses_weights(self) -> bool {
        self == Ablation::Full
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "susd-w" => Ok(Ablation::NoWeighting),
            "susd-wf" => Ok(Ablation::NoWeightingNoFactorization),
            other => Err(Error::Unknown {
                kind: "ablation",
                name: other.into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub grad_steps_per_epoch: usize,
    /// Learning rate for the embeddings, multipliers and density model.
    pub learning_rate: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Save a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    /// Recompute intrinsic rewards from current networks at update time.
    pub relabel_rewards: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 300,
            episodes_per_epoch: 8,
            grad_steps_per_epoch: 50,
            learning_rate: 1e-4,
            seed: 0,
            ablation: Ablation::Full,
            checkpoint_every: 100,
            relabel_rewards: true,
        }
    }
}

/// The stages of one epoch, in the order they ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Collect,
    DensityFit,
    PhiUpdate,
    LambdaUpdate,
    SacUpdate,
}

/// One episode under a fixed skill.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub z: SkillVector,
    pub transitions: Vec<Transition>,
    pub task_return: f64,
}

/// Rolls out one episode with the skill held fixed. Time-limit ends are
/// not stored as terminal.
pub fn collect_episode<F: Real>(
    env: &mut dyn Env,
    agent: &SacAgent<F>,
    z: &SkillVector,
    seed: u64,
    stochastic: bool,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut s = env.reset(seed);
    let mut transitions = Vec::with_capacity(env.episode_len());
    let mut task_return = 0.0;
    let mut input = Vec::with_capacity(s.len() + z.dim());
    loop {
        input.clear();
        input.extend_from_slice(&s);
        input.extend_from_slice(z.values());
        let a = agent.act(&input, stochastic, rng)?;
        let step = env.step(&a)?;
        task_return += step.task_reward;
        let terminal = step.done && !step.info.contains_key(INFO_TIME_LIMIT);
        transitions.push(Transition {
            s: std::mem::take(&mut s),
            a,
            s_next: step.next_state.clone(),
            z: z.values().to_vec(),
            reward: step.task_reward,
            done: terminal,
        });
        s = step.next_state;
        if step.done {
            break;
        }
    }
    Ok(Trajectory {
        z: z.clone(),
        transitions,
        task_return,
    })
}

/// Per-epoch summary; one CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub env_steps: u64,
    /// Mean intrinsic reward over this epoch's transitions.
    pub mean_reward: f64,
    /// Mean full-state NLL after fitting; `None` when no fit ran.
    pub density_nll: Option<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// Per factor: mean `||phi_i(s') - phi_i(s)||` over this epoch's transitions.
    pub delta_norm: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Per factor: mean curiosity weight over this epoch's transitions.
    pub weight: Vec<f64>,
}

impl EpochMetrics {
    pub fn header(n: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "epoch",
            "env_steps",
            "mean_reward",
            "density_nll",
            "critic_loss",
            "actor_loss",
            "alpha",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for prefix in ["delta_norm", "lambda", "weight"] {
            h.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        h
    }

    pub fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.epoch.to_string(),
            self.env_steps.to_string(),
            self.mean_reward.to_string(),
            self.density_nll.map(|v| v.to_string()).unwrap_or_default(),
            self.critic_loss.to_string(),
            self.actor_loss.to_string(),
            self.alpha.to_string(),
        ];
        for col in [&self.delta_norm, &self.lambda, &self.weight] {
            r.extend(col.iter().map(|v| v.to_string()));
        }
        r
    }
}

/// Appends metrics rows to a CSV file, writing the header first.
pub struct MetricsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(header)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    pub fn append(&mut self, row: &[String]) -> Result<()> {
        self.inner.write_record(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// All mutable state of a pretraining run.
pub struct Pretrainer {
    cfg: ExperimentConfig,
    env: Box<dyn Env>,
    spec: FactorSpec,
    prior: SkillPrior,
    bank: EmbeddingBank<f32>,
    density: GaussianCondModel<f32>,
    agent: SacAgent<f32>,
    buffer: ReplayBuffer<f32>,
    phi_opts: Vec<Adam<f32>>,
    density_opt: Adam<f32>,
    rng: ChaCha8Rng,
    epoch: usize,
    env_steps: u64,
    trace: Vec<Phase>,
}

/// The factorization a config trains on, after applying the ablation.
pub fn training_spec(cfg: &ExperimentConfig, env: &dyn Env) -> Result<FactorSpec> {
    let name = if cfg.trainer.ablation == Ablation::NoWeightingNoFactorization {
        "whole"
    } else {
        cfg.skills.factorization.as_str()
    };
    let spec = resolve_factorization(env, name)?;
    if cfg.trainer.ablation != Ablation::NoWeightingNoFactorization {
        if let Some(n) = cfg.skills.n {
            if n != spec.len() {
                return Err(Error::config(
                    "skills.n",
                    format!("factorization `{name}` has {} factors, config says {n}", spec.len()),
                ));
            }
        }
    }
    Ok(spec)
}

/// Skill-conditioned policy and embeddings as restored from a checkpoint.
pub struct SkillModel {
    pub spec: FactorSpec,
    pub prior: SkillPrior,
    pub bank: EmbeddingBank<f32>,
    pub density: GaussianCondModel<f32>,
    pub agent: SacAgent<f32>,
}

impl SkillModel {
    /// Freshly initialized networks for `cfg`.
    pub fn init(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Result<Self> {
        let env = make_env(&cfg.env)?;
        let spec = training_spec(cfg, env.as_ref())?;
        let prior = SkillPrior {
            n: spec.len(),
            d: cfg.skills.d,
            mode: cfg.skills.mode,
        };
        if cfg.skills.d == 0 {
            return Err(Error::config("skills.d", "must be at least 1"));
        }
        if prior.mode == SkillMode::Discrete && prior.d < 2 {
            return Err(Error::config("skills.d", "discrete skills need d >= 2"));
        }
        let bank = EmbeddingBank::new(&spec, &cfg.skills, rng)?;
        let density = GaussianCondModel::new(env.obs_dim(), &cfg.density, rng)?;
        let agent = SacAgent::new(env.obs_dim() + prior.dim(), env.action_dim(), &cfg.sac, rng)?;
        Ok(SkillModel {
            spec,
            prior,
            bank,
            density,
            agent,
        })
    }

    pub fn named_arrays(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = self.bank.named_arrays();
        out.extend(self.density.named_arrays());
        out.extend(self.agent.named_arrays());
        out
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(stem, &self.named_arrays())?;
        Ok(())
    }

    /// Rebuilds the networks described by `cfg` and loads `stem` into them.
    pub fn load(cfg: &ExperimentConfig, stem: &Path) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Self::init(cfg, &mut rng)?;
        let arrays = load_checkpoint::<f32>(stem)?;
        m.bank.load_arrays(&arrays)?;
        m.density.load_arrays(&arrays)?;
        m.agent.load_arrays(&arrays)?;
        Ok(m)
    }
}

impl Pretrainer {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed);
        let model = SkillModel::init(cfg, &mut rng)?;
        let env = make_env(&cfg.env)?;
        let buffer = ReplayBuffer::new(
            cfg.sac.buffer_capacity,
            env.obs_dim(),
            env.action_dim(),
            model.prior.dim(),
        );
        let opt = AdamConfig::with_lr(cfg.trainer.learning_rate);
        Ok(Pretrainer {
            cfg: cfg.clone(),
            env,
            phi_opts: (0..model.spec.len()).map(|_| Adam::new(opt)).collect(),
            density_opt: Adam::new(opt),
            spec: model.spec,
            prior: model.prior,
            bank: model.bank,
            density: model.density,
            agent: model.agent,
            buffer,
            rng,
            epoch: 0,
            env_steps: 0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    pub fn prior(&self) -> SkillPrior {
        self.prior
    }

    pub fn bank(&self) -> &EmbeddingBank<f32> {
        &self.bank
    }

    pub fn density(&self) -> &GaussianCondModel<f32> {
        &self.density
    }

    pub fn agent(&self) -> &SacAgent<f32> {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer<f32> {
        &self.buffer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Phases run by the most recent epoch.
    pub fn trace(&self) -> &[Phase] {
        &self.trace
    }

    /// A snapshot of the trained networks.
    pub fn model(&self) -> SkillModel {
        SkillModel {
            spec: self.spec.clone(),
            prior: self.prior,
            bank: self.bank.clone(),
            density: self.density.clone(),
            agent: self.agent.clone(),
        }
    }

    pub fn into_model(self) -> SkillModel {
        SkillModel {
            spec: self.spec,
            prior: self.prior,
            bank: self.bank,
            density: self.density,
            agent: self.agent,
        }
    }

    fn weights_for(&self, s: &Tensor<f32>, s_next: &Tensor<f32>) -> Result<Tensor<f32>> {
        if self.cfg.trainer.ablation.uses_weights() {
            self.density.curiosity_weights_batch(&self.spec, s, s_next)
        } else {
            Ok(Tensor::full(&[s.rows(), self.spec.len()], 1.0))
        }
    }

    fn intrinsic(&self, pairs: &PairBatch<f32>) -> Result<(Vec<f32>, Tensor<f32>, Tensor<f32>)> {
        let stats = factor_batch_stats(&self.bank, &self.spec, pairs, self.prior.mode)?;
        let w = self.weights_for(&pairs.s, &pairs.s_next)?;
        let r = weighted_rewards(&stats.rewards, &w)?;
        Ok((r, stats.norms, w))
    }

    fn with_epoch<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Divergence { what, .. } => Error::Divergence {
                what: format!("{what} (epoch {})", self.epoch),
                step: self.epoch as u64,
            },
            other => other,
        })
    }

    /// Runs one full epoch and returns its metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let r = self.run_epoch_inner();
        let m = self.with_epoch(r)?;
        self.epoch += 1;
        Ok(m)
    }

    fn run_epoch_inner(&mut self) -> Result<EpochMetrics> {
        self.trace.clear();
        let tc = self.cfg.trainer.clone();
        let bs = self.cfg.sac.batch_size;

        // collect
        let mut epoch_rows: Vec<Transition> = Vec::new();
        for _ in 0..tc.episodes_per_epoch {
            let z = sample_skill(&self.prior, &mut self.rng);
            let seed = self.rng.random::<u64>();
            let traj = collect_episode(self.env.as_mut(), &self.agent, &z, seed, true, &mut self.rng)?;
            epoch_rows.extend(traj.transitions);
        }
        if epoch_rows.is_empty() {
            return Err(Error::contract("epoch collected no transitions"));
        }
        let pairs = pair_batch(&epoch_rows)?;
        if !tc.relabel_rewards {
            let (r, _, _) = self.intrinsic(&pairs)?;
            for (t, v) in epoch_rows.iter_mut().zip(r) {
                t.reward = v as f64;
            }
        }
        for t in &epoch_rows {
            self.buffer.push(t)?;
        }
        self.env_steps += epoch_rows.len() as u64;
        self.trace.push(Phase::Collect);

        // density, on this epoch's samples only
        let mut density_nll = None;
        if tc.ablation.uses_weights() {
            let losses = self.density.fit(
                &mut self.density_opt,
                &pairs.s,
                &pairs.s_next,
                tc.grad_steps_per_epoch,
                bs,
                &mut self.rng,
            )?;
            density_nll = losses.last().copied();
            self.trace.push(Phase::DensityFit);
        }

        // embeddings
        for _ in 0..tc.grad_steps_per_epoch {
            let batch = self.buffer.sample(bs, &mut self.rng)?;
            let pb = to_pairs(&batch)?;
            for i in 0..self.spec.len() {
                let mut tape = Tape::new();
                let obj = phi_objective(&mut tape, &self.bank, &self.spec, &pb, self.prior.mode, i)?;
                let loss = tape.neg(obj);
                let grads = tape.backward(loss)?;
                self.phi_opts[i].step(self.bank.net_mut(i).params_mut(), &grads)?;
            }
        }
        self.trace.push(Phase::PhiUpdate);

        // multipliers
        for _ in 0..tc.grad_steps_per_epoch {
            let batch = self.buffer.sample(bs, &mut self.rng)?;
            let pb = to_pairs(&batch)?;
            for i in 0..self.spec.len() {
                let g = lambda_gradient(&self.bank, &self.spec, &pb, i)?;
                self.bank.ascend_lambda(i, g, tc.learning_rate);
            }
        }
        self.trace.push(Phase::LambdaUpdate);

        // policy
        let mut stats = Default::default();
        if self.buffer.len() >= bs {
            let bank = &self.bank;
            let spec = &self.spec;
            let density = &self.density;
            let mode = self.prior.mode;
            let weighted = tc.ablation.uses_weights();
            let mut reward_fn = |b: &TransitionBatch<f32>| -> Result<Vec<f32>> {
                if !tc.relabel_rewards {
                    return Ok(b.reward.clone());
                }
                let pb = to_pairs(b)?;
                let st = factor_batch_stats(bank, spec, &pb, mode)?;
                let w = if weighted {
                    density.curiosity_weights_batch(spec, &pb.s, &pb.s_next)?
                } else {
                    Tensor::full(&[pb.len(), spec.len()], 1.0)
                };
                weighted_rewards(&st.rewards, &w)
            };
            stats = self
                .agent
                .update(&self.buffer, &mut reward_fn, bs, tc.grad_steps_per_epoch, &mut self.rng)?;
            self.trace.push(Phase::SacUpdate);
        }

        let (r, norms, w) = self.intrinsic(&pairs)?;
        let n = self.spec.len();
        let col_mean = |t: &Tensor<f32>, i: usize| -> f64 {
            (0..t.rows()).map(|row| t.row_slice(row)[i] as f64).sum::<f64>() / t.rows() as f64
        };
        Ok(EpochMetrics {
            epoch: self.epoch,
            env_steps: self.env_steps,
            mean_reward: r.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64,
            density_nll,
            critic_loss: stats.critic_loss,
            actor_loss: stats.actor_loss,
            alpha: self.agent.alpha(),
            delta_norm: (0..n).map(|i| col_mean(&norms, i)).collect(),
            lambda: self.bank.lambdas().to_vec(),
            weight: (0..n).map(|i| col_mean(&w, i)).collect(),
        })
    }

    /// Runs the configured number of epochs. Writes `metrics.csv` and
    /// checkpoints into `out_dir` when given; `on_epoch` sees each row.
    pub fn run(
        &mut self,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let mut writer = match out_dir {
            Some(d) => Some(MetricsWriter::create(
                &d.join("metrics.csv"),
                &EpochMetrics::header(self.spec.len()),
            )?),
            None => None,
        };
        let mut all = Vec::with_capacity(self.cfg.trainer.epochs);
        let every = self.cfg.trainer.checkpoint_every;
        for _ in 0..self.cfg.trainer.epochs {
            let m = self.run_epoch()?;
            if let Some(w) = writer.as_mut() {
                w.append(&m.record())?;
            }
            if let Some(d) = out_dir {
                if every > 0 && self.epoch.is_multiple_of(every) && self.epoch < self.cfg.trainer.epochs {
                    self.model().save(&d.join(format!("checkpoint-{:05}", self.epoch)))?;
                }
            }
            on_epoch(&m);
            all.push(m);
        }
        if let Some(d) = out_dir {
            self.model().save(&d.join("checkpoint-final"))?;
        }
        Ok(all)
    }
}

fn to_pairs(b: &TransitionBatch<f32>) -> Result<PairBatch<f32>> {
    let z =
        b.z.clone()
            .ok_or_else(|| Error::contract("skill replay batch without skills"))?;
    Ok(PairBatch {
        s: b.s.clone(),
        s_next: b.s_next.clone(),
        z,
    })
}

fn pair_batch(rows: &[Transition]) -> Result<PairBatch<f32>> {
    let conv = |f: &dyn Fn(&Transition) -> &Vec<f64>| -> Result<Tensor<f32>> {
        let data: Vec<Vec<f32>> = rows.iter().map(|t| f(t).iter().map(|&v| v as f32).collect()).collect();
        Tensor::from_rows(&data)
    };
    Ok(PairBatch {
        s: conv(&|t| &t.s)?,
        s_next: conv(&|t| &t.s_next)?,
        z: conv(&|t| &t.z)?,
    })
}

/// Writes a JSON-lines trajectory dump of `episodes` episodes under
/// freshly sampled skills.
pub fn dump_rollouts(
    model: &SkillModel,
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
    out: &mut impl Write,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for e in 0..episodes {
        let z = sample_skill(&model.prior, &mut rng);
        let env_seed = rng.random::<u64>();
        let traj = collect_episode(env, &model.agent, &z, env_seed, false, &mut rng)?;
        for (t, tr) in traj.transitions.into_iter().enumerate() {
            records.push(crate::envs::TrajectoryRecord {
                episode: e,
                t,
                z: tr.z,
                s: tr.s,
                a: tr.a,
                s_next: tr.s_next,
                task_reward: tr.reward,
            });
        }
    }
    crate::envs::dump_trajectories(out, &records)?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.env.episode_len = Some(10);
        cfg.skills.hidden = 16;
        cfg.density.hidden = 16;
        cfg.sac.hidden = 16;
        cfg.sac.batch_size = 32;
        cfg.trainer.episodes_per_epoch = 4;
        cfg.trainer.grad_steps_per_epoch = 3;
        cfg.trainer.epochs = 2;
        cfg
    }

    #[test]
    fn epoch_runs_phases_in_order() {
        let mut p = Pretrainer::new(&tiny_cfg()).unwrap();
        p.run_epoch().unwrap();
        assert_eq!(
            p.trace(),
            &[
                Phase::Collect,
                Phase::DensityFit,
                Phase::PhiUpdate,
                Phase::LambdaUpdate,
                Phase::SacUpdate
            ]
        );
    }

    #[test]
    fn episodes_hold_one_skill_and_have_full_length() {
        let p = Pretrainer::new(&tiny_cfg()).unwrap();
        let mut env = make_env(&p.config().env).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = sample_skill(&p.prior(), &mut rng);
        let traj = collect_episode(env.as_mut(), p.agent(), &z, 4, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(traj.transitions.len(), 10);
        assert!(traj.transitions.iter().all(|t| t.z == z.values()));
        assert!(traj.transitions.iter().all(|t| !t.done));
        for w in traj.transitions.windows(2) {
            assert_eq!(w[0].s_next, w[1].s);
        }
        let again = collect_episode(env.as_mut(), p.agent(), &z, 4, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(traj.transitions, again.transitions);
    }

    #[test]
    fn weighting_ablation_reports_unit_weights() {
        let mut cfg = tiny_cfg();
        cfg.trainer.ablation = Ablation::NoWeighting;
        let mut p = Pretrainer::new(&cfg).unwrap();
        let m = p.run_epoch().unwrap();
        assert!(m.weight.iter().all(|&w| w == 1.0));
        assert!(!p.trace().contains(&Phase::DensityFit));
    }

    #[test]
    fn factorization_ablation_uses_one_factor() {
        let mut cfg = tiny_cfg();
        cfg.trainer.ablation = Ablation::NoWeightingNoFactorization;
        let mut p = Pretrainer::new(&cfg).unwrap();
        assert_eq!(p.spec().len(), 1);
        assert_eq!(p.prior().dim(), 2);
        let m = p.run_epoch().unwrap();
        assert_eq!(m.delta_norm.len(), 1);
        assert_eq!(m.weight, vec![1.0]);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = Pretrainer::new(&tiny_cfg()).unwrap().run(None, |_| {}).unwrap();
        let b = Pretrainer::new(&tiny_cfg()).unwrap().run(None, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn stored_rewards_mode_runs() {
        let mut cfg = tiny_cfg();
        cfg.trainer.relabel_rewards = false;
        let mut p = Pretrainer::new(&cfg).unwrap();
        p.run_epoch().unwrap();
        let t = p.buffer().get(0).unwrap();
        assert!(t.reward.is_finite());
    }

    #[test]
    fn writes_metrics_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.trainer.epochs = 3;
        cfg.trainer.checkpoint_every = 2;
        let mut p = Pretrainer::new(&cfg).unwrap();
        p.run(Some(dir.path()), |_| {}).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epoch,env_steps,mean_reward"));
        assert!(dir.path().join("checkpoint-00002.json").exists());
        let m = SkillModel::load(&cfg, &dir.path().join("checkpoint-final")).unwrap();
        assert_eq!(m.named_arrays(), p.model().named_arrays());
    }

    #[test]
    fn discrete_skills_train() {
        let mut cfg = tiny_cfg();
        cfg.skills.mode = SkillMode::Discrete;
        cfg.skills.d = 3;
        let mut p = Pretrainer::new(&cfg).unwrap();
        let m = p.run_epoch().unwrap();
        assert!(m.mean_reward.is_finite());
    }
}
