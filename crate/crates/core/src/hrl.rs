//! Downstream learning: a high-level SAC policy picks a skill every `k`
//! steps and the frozen skill policy executes it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::envs::{TaskEnv, TaskKind, INFO_TIME_LIMIT};
use crate::error::{Error, Result};
use crate::sac::{ReplayBuffer, SacAgent, Transition, TransitionBatch};
use crate::skills::{SkillMode, SkillVector};
use crate::trainer::SkillModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrlConfig {
    /// Environment steps per high-level decision.
    pub k: usize,
    /// Skills are clipped to `[-skill_bound, skill_bound]` per coordinate.
    pub skill_bound: f64,
    pub task: String,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub grad_steps_per_epoch: usize,
    pub seeds: usize,
}

impl Default for HrlConfig {
    fn default() -> Self {
        HrlConfig {
            k: 5,
            skill_bound: 1.5,
            task: "gunner-unlim".into(),
            epochs: 10_000,
            episodes_per_epoch: 1,
            grad_steps_per_epoch: 50,
            seeds: 3,
        }
    }
}

impl HrlConfig {
    pub fn task_kind(&self) -> Result<TaskKind> {
        self.task
            .parse()
            .map_err(|_| Error::config("hrl.task", format!("unknown task `{}`", self.task)))
    }
}

/// What executes the high-level action.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    /// A frozen skill policy; the action is a skill.
    Skills(&'a SkillModel),
    /// The action goes straight to the environment, one step per decision.
    Primitive,
}

impl Controller<'_> {
    fn action_dim(&self, env: &TaskEnv) -> usize {
        match self {
            Controller::Skills(m) => m.prior.dim(),
            Controller::Primitive => env.env.action_dim(),
        }
    }
}

/// Maps a high-level action in `[-1, 1]` to the executed skill.
pub fn action_to_skill(action: &[f64], model: &SkillModel, bound: f64) -> Result<SkillVector> {
    let (n, d) = (model.prior.n, model.prior.d);
    if action.len() != n * d {
        return Err(Error::dim("high-level action", n * d, action.len()));
    }
    match model.prior.mode {
        SkillMode::Continuous => {
            let v = action.iter().map(|a| (bound * a).clamp(-bound, bound)).collect();
            SkillVector::continuous(n, d, v)
        }
        SkillMode::Discrete => {
            let idx: Vec<usize> = action
                .chunks(d)
                .map(|b| {
                    b.iter()
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                        )
                        .0
                })
                .collect();
            SkillVector::one_hot(d, &idx)
        }
    }
}

/// Result of one high-level decision.
#[derive(Clone, Debug, PartialEq)]
pub struct HrlStep {
    /// The executed skill (empty for primitive control).
    pub z: Vec<f64>,
    pub next_state: Vec<f64>,
    /// Sum of the task rewards over the executed steps.
    pub reward: f64,
    pub steps: usize,
    pub done: bool,
    pub terminal: bool,
}

/// Holds `action` for up to `k` environment steps (one for primitive
/// control), stopping early at episode end.
pub fn hrl_step(
    controller: Controller<'_>,
    env: &mut TaskEnv,
    state: &[f64],
    action: &[f64],
    k: usize,
    bound: f64,
    rng: &mut impl Rng,
) -> Result<HrlStep> {
    let mut s = state.to_vec();
    let mut out = HrlStep {
        z: Vec::new(),
        next_state: Vec::new(),
        reward: 0.0,
        steps: 0,
        done: false,
        terminal: false,
    };
    match controller {
        Controller::Primitive => {
            let st = env.step(action)?;
            out.reward = st.task_reward;
            out.steps = 1;
            out.done = st.done;
            out.terminal = st.done && !st.info.contains_key(INFO_TIME_LIMIT);
            s = st.next_state;
        }
        Controller::Skills(model) => {
            let z = action_to_skill(action, model, bound)?;
            let mut input = Vec::with_capacity(s.len() + z.dim());
            for _ in 0..k {
                input.clear();
                input.extend_from_slice(&s);
                input.extend_from_slice(z.values());
                let a = model.agent.act(&input, false, rng)?;
                let st = env.step(&a)?;
                out.reward += st.task_reward;
                out.steps += 1;
                s = st.next_state;
                if st.done {
                    out.done = true;
                    out.terminal = !st.info.contains_key(INFO_TIME_LIMIT);
                    break;
                }
            }
            out.z = z.values().to_vec();
        }
    }
    out.next_state = s;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub env_steps: u64,
    pub mean_return: f64,
}

/// State plus task instruction.
fn high_obs(env: &TaskEnv, s: &[f64]) -> Vec<f64> {
    let mut o = s.to_vec();
    o.extend(env.instruction());
    o
}

/// A high-level learner and its replay.
pub struct DownstreamRun<'a> {
    controller: Controller<'a>,
    env: TaskEnv,
    agent: SacAgent<f32>,
    buffer: ReplayBuffer<f32>,
    rng: ChaCha8Rng,
    k: usize,
    bound: f64,
    env_steps: u64,
    /// High-level transitions stored by the last episode.
    pub last_episode_decisions: usize,
}

impl<'a> DownstreamRun<'a> {
    pub fn new(cfg: &ExperimentConfig, controller: Controller<'a>, seed: u64) -> Result<Self> {
        let kind = cfg.hrl.task_kind()?;
        let env = TaskEnv::new(kind, &cfg.env)?;
        if let Controller::Skills(m) = controller {
            if m.agent.input_dim() != env.env.obs_dim() + m.prior.dim() {
                return Err(Error::config(
                    "hrl.task",
                    format!("skill policy does not match env `{}`", env.env.id()),
                ));
            }
        }
        let obs_dim = env.env.obs_dim() + env.instruction_dim();
        let act_dim = controller.action_dim(&env);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = SacAgent::new(obs_dim, act_dim, &cfg.sac, &mut rng)?;
        let k = match controller {
            Controller::Skills(_) => cfg.hrl.k,
            Controller::Primitive => 1,
        };
        Ok(DownstreamRun {
            controller,
            env,
            buffer: ReplayBuffer::new(cfg.sac.buffer_capacity, obs_dim, act_dim, 0),
            agent,
            rng,
            k,
            bound: cfg.hrl.skill_bound,
            env_steps: 0,
            last_episode_decisions: 0,
        })
    }

    pub fn agent(&self) -> &SacAgent<f32> {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer<f32> {
        &self.buffer
    }

    /// Collects one episode into the replay and returns its task return.
    pub fn episode(&mut self) -> Result<f64> {
        let seed = self.rng.random::<u64>();
        let mut s = self.env.reset(seed);
        let mut ret = 0.0;
        self.last_episode_decisions = 0;
        loop {
            let obs = high_obs(&self.env, &s);
            let a = self.agent.act(&obs, true, &mut self.rng)?;
            let st = hrl_step(
                self.controller,
                &mut self.env,
                &s,
                &a,
                self.k,
                self.bound,
                &mut self.rng,
            )?;
            let next_obs = high_obs(&self.env, &st.next_state);
            self.buffer.push(&Transition {
                s: obs,
                a,
                s_next: next_obs,
                z: Vec::new(),
                reward: st.reward,
                done: st.terminal,
            })?;
            self.last_episode_decisions += 1;
            self.env_steps += st.steps as u64;
            ret += st.reward;
            s = st.next_state;
            if st.done {
                break;
            }
        }
        Ok(ret)
    }

    /// Runs `epochs` epochs of collection plus SAC updates.
    pub fn train(
        &mut self,
        cfg: &ExperimentConfig,
        epochs: usize,
        mut on_epoch: impl FnMut(&CurvePoint),
    ) -> Result<Vec<CurvePoint>> {
        let mut curve = Vec::with_capacity(epochs);
        let bs = cfg.sac.batch_size;
        let mut stored = |b: &TransitionBatch<f32>| -> Result<Vec<f32>> { Ok(b.reward.clone()) };
        for epoch in 0..epochs {
            let mut total = 0.0;
            for _ in 0..cfg.hrl.episodes_per_epoch {
                total += self.episode()?;
            }
            if self.buffer.len() >= bs {
                self.agent
                    .update(
                        &self.buffer,
                        &mut stored,
                        bs,
                        cfg.hrl.grad_steps_per_epoch,
                        &mut self.rng,
                    )
                    .map_err(|e| match e {
                        Error::Divergence { what, .. } => Error::Divergence {
                            what: format!("{what} (downstream epoch {epoch})"),
                            step: epoch as u64,
                        },
                        other => other,
                    })?;
            }
            let p = CurvePoint {
                epoch,
                env_steps: self.env_steps,
                mean_return: total / cfg.hrl.episodes_per_epoch as f64,
            };
            on_epoch(&p);
            curve.push(p);
        }
        Ok(curve)
    }
}

/// Trains a high-level policy for `cfg.hrl.epochs` epochs.
pub fn train_downstream(cfg: &ExperimentConfig, controller: Controller<'_>, seed: u64) -> Result<Vec<CurvePoint>> {
    DownstreamRun::new(cfg, controller, seed)?.train(cfg, cfg.hrl.epochs, |_| {})
}

/// Per-epoch mean and population std across seed curves.
pub fn aggregate_curves(curves: &[Vec<CurvePoint>]) -> Result<Vec<(usize, f64, f64)>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::contract("no curves to aggregate"))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::contract("curves differ in length"));
    }
    Ok((0..first.len())
        .map(|e| {
            let vals: Vec<f64> = curves.iter().map(|c| c[e].mean_return).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (first[e].epoch, mean, var.sqrt())
        })
        .collect())
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "env_steps", "mean_return"])?;
    for p in curve {
        w.write_record([p.epoch.to_string(), p.env_steps.to_string(), p.mean_return.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_return", "std_return"])?;
    for (e, m, s) in rows {
        w.write_record([e.to_string(), m.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.env.id = "gunner".into();
        cfg.env.episode_len = Some(23);
        cfg.skills.hidden = 8;
        cfg.density.hidden = 8;
        cfg.sac.hidden = 8;
        cfg.sac.batch_size = 4;
        cfg.hrl.epochs = 3;
        cfg.hrl.grad_steps_per_epoch = 2;
        cfg
    }

    fn model(cfg: &ExperimentConfig) -> SkillModel {
        SkillModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn decision_count_is_ceil_t_over_k() {
        let cfg = tiny_cfg();
        let m = model(&cfg);
        let mut run = DownstreamRun::new(&cfg, Controller::Skills(&m), 0).unwrap();
        run.episode().unwrap();
        assert_eq!(run.last_episode_decisions, 5);
        assert_eq!(run.buffer().len(), 5);
    }

    #[test]
    fn k_one_takes_single_steps() {
        let mut cfg = tiny_cfg();
        cfg.hrl.k = 1;
        let m = model(&cfg);
        let mut run = DownstreamRun::new(&cfg, Controller::Skills(&m), 0).unwrap();
        run.episode().unwrap();
        assert_eq!(run.last_episode_decisions, 23);
    }

    #[test]
    fn skills_are_clipped() {
        let cfg = tiny_cfg();
        let m = model(&cfg);
        let z = action_to_skill(&[1.0, -1.0, 0.5, 2.0, -3.0, 0.0], &m, 1.5).unwrap();
        assert_eq!(z.values(), &[1.5, -1.5, 0.75, 1.5, -1.5, 0.0]);
    }

    #[test]
    fn step_reward_is_sum_of_task_rewards() {
        let cfg = tiny_cfg();
        let m = model(&cfg);
        let mut a = TaskEnv::new(TaskKind::GunnerUnlim, &cfg.env).unwrap();
        let mut b = TaskEnv::new(TaskKind::GunnerUnlim, &cfg.env).unwrap();
        let s = a.reset(3);
        b.reset(3);
        let act = [0.3, -0.2, 0.9, 0.1, -0.5, 0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = hrl_step(Controller::Skills(&m), &mut a, &s, &act, 5, 1.5, &mut rng).unwrap();
        let z = action_to_skill(&act, &m, 1.5).unwrap();
        let mut sb = s.clone();
        let mut total = 0.0;
        for _ in 0..5 {
            let mut input = sb.clone();
            input.extend_from_slice(z.values());
            let low = m.agent.act(&input, false, &mut rng).unwrap();
            let r = b.step(&low).unwrap();
            total += r.task_reward;
            sb = r.next_state;
        }
        assert_eq!(st.reward, total);
        assert_eq!(st.next_state, sb);
    }

    #[test]
    fn low_level_is_untouched_and_curve_has_one_row_per_epoch() {
        let cfg = tiny_cfg();
        let m = model(&cfg);
        let before = m.named_arrays();
        let curve = train_downstream(&cfg, Controller::Skills(&m), 0).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(m.named_arrays(), before);
    }

    #[test]
    fn reward_free_curve_is_flat_zero() {
        let mut cfg = tiny_cfg();
        cfg.hrl.task = "reward-free".into();
        let m = model(&cfg);
        let curve = train_downstream(&cfg, Controller::Skills(&m), 0).unwrap();
        assert!(curve.iter().all(|p| p.mean_return == 0.0));
    }

    #[test]
    fn task_env_mismatch_is_config_error() {
        let mut cfg = tiny_cfg();
        cfg.hrl.task = "seq-easy".into();
        let m = model(&cfg);
        let e = DownstreamRun::new(&cfg, Controller::Skills(&m), 0).err().unwrap();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn aggregate_is_mean_over_seeds() {
        let c = |v: f64| {
            vec![CurvePoint {
                epoch: 0,
                env_steps: 1,
                mean_return: v,
            }]
        };
        let agg = aggregate_curves(&[c(1.0), c(2.0), c(6.0)]).unwrap();
        assert_eq!(agg[0].1, 3.0);
    }

    #[test]
    fn primitive_control_runs() {
        let mut cfg = tiny_cfg();
        cfg.env.id = "pointnav".into();
        cfg.hrl.task = "pointnav-dense".into();
        let curve = train_downstream(&cfg, Controller::Primitive, 0).unwrap();
        assert!(curve.iter().all(|p| p.mean_return < 0.0));
    }
}
