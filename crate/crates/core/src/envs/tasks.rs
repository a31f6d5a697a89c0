//! Downstream task rewards layered over the base environments.
//!
//! A [`TaskEnv`] owns a suitably configured base environment and a
//! [`Task`] that turns transitions into task rewards. Tasks that need an
//! instruction (station sequences, food/poison flags, goals) expose it as
//! a fixed-length vector through [`TaskEnv::instruction`].

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gunner::{GunnerConfig, GunnerEnv};
use super::particle::interacted;
use super::pointnav::{PointNavConfig, PointNavEnv};
use super::{make_env, Env, EnvConfig, EnvStep};
use crate::error::{Error, Result};

/// Longest station sequence across the seq variants.
pub const SEQ_MAX_LEN: usize = 4;
pub const SEQ_SUCCESS: f64 = 1.0;
pub const SEQ_PENALTY: f64 = -1.0;
pub const GOAL_REWARD: f64 = 10.0;
pub const GOAL_RADIUS: f64 = 0.5;
/// Goals are drawn from a box of this half-width around the agent.
pub const GOAL_SPAN: f64 = 3.0;
pub const GOAL_TIMEOUT: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    SeqEasy,
    SeqMedium,
    SeqHard,
    FpEasy,
    FpMedium,
    FpHard,
    FpDifficult,
    GunnerUnlim,
    GunnerLim,
    PointNavGoal,
    /// Dense `-distance` to the origin; used for SAC sanity runs.
    PointNavDense,
    /// Always zero.
    RewardFree,
}

impl TaskKind {
    pub const ALL: [TaskKind; 12] = [
        TaskKind::SeqEasy,
        TaskKind::SeqMedium,
        TaskKind::SeqHard,
        TaskKind::FpEasy,
        TaskKind::FpMedium,
        TaskKind::FpHard,
        TaskKind::FpDifficult,
        TaskKind::GunnerUnlim,
        TaskKind::GunnerLim,
        TaskKind::PointNavGoal,
        TaskKind::PointNavDense,
        TaskKind::RewardFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SeqEasy => "seq-easy",
            TaskKind::SeqMedium => "seq-medium",
            TaskKind::SeqHard => "seq-hard",
            TaskKind::FpEasy => "fp-easy",
            TaskKind::FpMedium => "fp-medium",
            TaskKind::FpHard => "fp-hard",
            TaskKind::FpDifficult => "fp-difficult",
            TaskKind::GunnerUnlim => "gunner-unlim",
            TaskKind::GunnerLim => "gunner-lim",
            TaskKind::PointNavGoal => "pointnav-goal",
            TaskKind::PointNavDense => "pointnav-dense",
            TaskKind::RewardFree => "reward-free",
        }
    }

    /// Sequence length for seq tasks, indicator count for fp tasks.
    pub fn instruction_len(self) -> usize {
        match self {
            TaskKind::SeqEasy | TaskKind::FpEasy => 2,
            TaskKind::SeqMedium => 3,
            TaskKind::SeqHard => 4,
            TaskKind::FpMedium => 5,
            TaskKind::FpHard => 8,
            TaskKind::FpDifficult => 10,
            _ => 0,
        }
    }

    fn is_seq(self) -> bool {
        matches!(self, TaskKind::SeqEasy | TaskKind::SeqMedium | TaskKind::SeqHard)
    }

    fn is_fp(self) -> bool {
        matches!(
            self,
            TaskKind::FpEasy | TaskKind::FpMedium | TaskKind::FpHard | TaskKind::FpDifficult
        )
    }

    /// Whether the task can run on environment `env_id`.
    pub fn supports(self, env_id: &str) -> bool {
        match self {
            _ if self.is_seq() || self.is_fp() => env_id.starts_with("multiparticle"),
            TaskKind::GunnerUnlim | TaskKind::GunnerLim => env_id == "gunner",
            TaskKind::PointNavGoal | TaskKind::PointNavDense => env_id == "pointnav",
            _ => true,
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "task",
                name: s.to_string(),
            })
    }
}

/// Per-episode task state.
#[derive(Clone, Debug)]
pub struct Task {
    pub kind: TaskKind,
    agents: usize,
    rng: ChaCha8Rng,
    /// seq: station indices to interact with, in order.
    pub sequence: Vec<usize>,
    pub progress: usize,
    /// fp: +1 food, -1 poison, 0 for stations without an indicator.
    pub indicators: Vec<f64>,
    pub consumed: Vec<bool>,
    pub goal: [f64; 2],
    goal_age: usize,
    bound: f64,
}

impl Task {
    pub fn new(kind: TaskKind, agents: usize) -> Self {
        Task {
            kind,
            agents,
            rng: ChaCha8Rng::seed_from_u64(0),
            sequence: Vec::new(),
            progress: 0,
            indicators: vec![0.0; agents],
            consumed: vec![false; agents],
            goal: [0.0; 2],
            goal_age: 0,
            bound: 10.0,
        }
    }

    /// Samples a fresh instruction for an episode starting at `state`.
    pub fn reset(&mut self, seed: u64, state: &[f64]) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a5c);
        self.progress = 0;
        self.goal_age = 0;
        let len = self.kind.instruction_len();
        self.sequence.clear();
        self.indicators = vec![0.0; self.agents];
        self.consumed = vec![false; self.agents];
        if self.kind.is_seq() {
            self.sequence = (0..len).map(|_| self.rng.random_range(0..self.agents)).collect();
        } else if self.kind.is_fp() {
            for k in 0..len.min(self.agents) {
                self.indicators[k] = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
        match self.kind {
            TaskKind::PointNavGoal => self.sample_goal([state[0], state[1]]),
            TaskKind::PointNavDense => self.goal = [0.0, 0.0],
            _ => {}
        }
    }

    fn sample_goal(&mut self, around: [f64; 2]) {
        let b = self.bound;
        let mut g = [0.0; 2];
        for d in 0..2 {
            let lo = (around[d] - GOAL_SPAN).max(-b);
            let hi = (around[d] + GOAL_SPAN).min(b);
            g[d] = self.rng.random_range(lo..hi);
        }
        self.goal = g;
        self.goal_age = 0;
    }

    /// Overrides the current goal (pointnav tasks).
    pub fn set_goal(&mut self, goal: [f64; 2]) {
        self.goal = goal;
        self.goal_age = 0;
    }

    pub fn instruction_dim(&self) -> usize {
        match self.kind {
            k if k.is_seq() => SEQ_MAX_LEN * self.agents + SEQ_MAX_LEN,
            k if k.is_fp() => 2 * self.agents,
            TaskKind::PointNavGoal | TaskKind::PointNavDense => 2,
            _ => 0,
        }
    }

    /// Fixed-length encoding of the instruction and task progress.
    pub fn instruction(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.instruction_dim()];
        match self.kind {
            k if k.is_seq() => {
                for (slot, &st) in self.sequence.iter().enumerate() {
                    v[slot * self.agents + st] = 1.0;
                }
                for slot in 0..self.progress.min(SEQ_MAX_LEN) {
                    v[SEQ_MAX_LEN * self.agents + slot] = 1.0;
                }
            }
            k if k.is_fp() => {
                for i in 0..self.agents {
                    v[i] = self.indicators[i];
                    v[self.agents + i] = if self.consumed[i] { 1.0 } else { 0.0 };
                }
            }
            TaskKind::PointNavGoal | TaskKind::PointNavDense => {
                v[0] = self.goal[0];
                v[1] = self.goal[1];
            }
            _ => {}
        }
        v
    }
}

/// Task reward for the transition `prev_state -> state` under `action`,
/// advancing the task's internal progress.
///
/// * seq: +1 for interacting with the next station in the sequence, -1
///   for any other interaction (including after completion).
/// * fp: +1 for the first interaction with a food station, -1 for a
///   poison station, 0 otherwise.
/// * gunner: +1 per target hit.
/// * pointnav-goal: +10 on reaching the goal, which is then resampled.
/// * pointnav-dense: minus the distance to the goal.
pub fn downstream_reward(task: &mut Task, state: &[f64], _action: &[f64], prev_state: &[f64]) -> f64 {
    let kind = task.kind;
    if kind.is_seq() {
        let mut r = 0.0;
        for i in 0..task.agents {
            if interacted(state, i) {
                if task.progress < task.sequence.len() && task.sequence[task.progress] == i {
                    task.progress += 1;
                    r += SEQ_SUCCESS;
                } else {
                    r += SEQ_PENALTY;
                }
            }
        }
        return r;
    }
    if kind.is_fp() {
        let mut r = 0.0;
        for i in 0..task.agents {
            if interacted(state, i) && !task.consumed[i] && task.indicators[i] != 0.0 {
                r += task.indicators[i];
                task.consumed[i] = true;
            }
        }
        return r;
    }
    match kind {
        TaskKind::GunnerUnlim | TaskKind::GunnerLim => state[15] - prev_state[15],
        TaskKind::PointNavGoal => {
            task.goal_age += 1;
            let d = ((state[0] - task.goal[0]).powi(2) + (state[1] - task.goal[1]).powi(2)).sqrt();
            if d <= GOAL_RADIUS {
                task.sample_goal([state[0], state[1]]);
                GOAL_REWARD
            } else {
                if task.goal_age >= GOAL_TIMEOUT {
                    task.sample_goal([state[0], state[1]]);
                }
                0.0
            }
        }
        TaskKind::PointNavDense => -((state[0] - task.goal[0]).powi(2) + (state[1] - task.goal[1]).powi(2)).sqrt(),
        _ => 0.0,
    }
}

/// A base environment plus a downstream task.
#[derive(Clone)]
pub struct TaskEnv {
    pub env: Box<dyn Env>,
    pub task: Task,
}

impl TaskEnv {
    /// Builds the task's environment from `env_cfg`, configured for the
    /// task (ammo rules for Gunner, start spread for PointNav).
    pub fn new(kind: TaskKind, env_cfg: &EnvConfig) -> Result<Self> {
        if !kind.supports(&env_cfg.id) {
            return Err(Error::config(
                "hrl.task",
                format!("task `{}` does not run on env `{}`", kind.name(), env_cfg.id),
            ));
        }
        let env: Box<dyn Env> = match kind {
            TaskKind::GunnerUnlim | TaskKind::GunnerLim => {
                let mut c = GunnerConfig {
                    unlimited_ammo: kind == TaskKind::GunnerUnlim,
                    start_ammo: 0,
                    ..Default::default()
                };
                if let Some(t) = env_cfg.episode_len {
                    c.episode_len = t;
                }
                Box::new(GunnerEnv::new(c))
            }
            TaskKind::PointNavDense => {
                let mut c = PointNavConfig {
                    start_range: 5.0,
                    ..Default::default()
                };
                if let Some(t) = env_cfg.episode_len {
                    c.episode_len = t;
                }
                Box::new(PointNavEnv::new(c))
            }
            _ => make_env(env_cfg)?,
        };
        let agents = if env.id().starts_with("multiparticle") {
            env.factor_spec().len()
        } else {
            1
        };
        Ok(TaskEnv {
            env,
            task: Task::new(kind, agents),
        })
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let s = self.env.reset(seed);
        self.task.reset(seed, &s);
        s
    }

    pub fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let prev = self.env.state();
        let mut st = self.env.step(action)?;
        st.task_reward = downstream_reward(&mut self.task, &st.next_state, action, &prev);
        Ok(st)
    }

    pub fn instruction(&self) -> Vec<f64> {
        self.task.instruction()
    }

    pub fn instruction_dim(&self) -> usize {
        self.task.instruction_dim()
    }
}
