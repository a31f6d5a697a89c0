//! Multi-Particle: `M` heterogeneous point-mass agents, each paired with
//! its own station.
//!
//! Each agent–station pair is one 7-dim factor:
//! `(x, y, vx, vy, station activation, station dx, station dy)` where
//! `(dx, dy)` is the station position relative to the agent. Each agent
//! has 5 action dims: 2 accelerations and 3 logits over
//! {interact, hold, idle}.
//!
//! An interaction happens when "interact" is the strict argmax and the agent
//! is within `interact_radius` of its station; the station's activation
//! is then set to exactly 1 and otherwise decays geometrically.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, sanitize_action, Env, EnvStep, Factor, FactorSpec, DAMPING, DT, INFO_TIME_LIMIT};
use crate::error::Result;

pub const PAIR_OBS_DIM: usize = 7;
pub const AGENT_ACTION_DIM: usize = 5;
/// Offset of the station activation inside a pair block.
pub const ACTIVATION_OFFSET: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiParticleConfig {
    pub agents: usize,
    pub episode_len: usize,
    pub interact_radius: f64,
    pub activation_decay: f64,
}

impl Default for MultiParticleConfig {
    fn default() -> Self {
        MultiParticleConfig {
            agents: 10,
            episode_len: 200,
            interact_radius: 0.2,
            activation_decay: 0.9,
        }
    }
}

impl MultiParticleConfig {
    /// Three agents, 50-step episodes.
    pub fn mini() -> Self {
        MultiParticleConfig {
            agents: 3,
            episode_len: 50,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
struct Agent {
    pos: [f64; 2],
    vel: [f64; 2],
    /// Acceleration gain; agents differ so they are not interchangeable.
    gain: f64,
    station: [f64; 2],
    activation: f64,
}

#[derive(Clone, Debug)]
pub struct MultiParticleEnv {
    cfg: MultiParticleConfig,
    id: String,
    spec: FactorSpec,
    rng: ChaCha8Rng,
    t: usize,
    agents: Vec<Agent>,
}

impl MultiParticleEnv {
    pub fn new(cfg: MultiParticleConfig) -> Self {
        let m = cfg.agents;
        let factors = (0..m)
            .map(|i| {
                Factor::new(
                    format!("agent{i}+station{i}"),
                    i * PAIR_OBS_DIM..(i + 1) * PAIR_OBS_DIM,
                    true,
                )
            })
            .collect();
        let spec = FactorSpec::new(factors, m * PAIR_OBS_DIM).expect("static layout");
        let id = if m == 3 && cfg.episode_len == 50 {
            "multiparticle-mini".to_string()
        } else {
            "multiparticle".to_string()
        };
        let agents = (0..m)
            .map(|i| Agent {
                pos: [0.0; 2],
                vel: [0.0; 2],
                gain: 1.0 / (1.0 + 0.1 * i as f64),
                station: [0.0; 2],
                activation: 0.0,
            })
            .collect();
        let mut env = MultiParticleEnv {
            cfg,
            id,
            spec,
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            agents,
        };
        env.reset(0);
        env
    }

    pub fn agents(&self) -> usize {
        self.cfg.agents
    }

    fn observe(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.cfg.agents * PAIR_OBS_DIM);
        for a in &self.agents {
            s.extend_from_slice(&[
                a.pos[0],
                a.pos[1],
                a.vel[0],
                a.vel[1],
                a.activation,
                a.station[0] - a.pos[0],
                a.station[1] - a.pos[1],
            ]);
        }
        s
    }
}

/// Whether agent `i` interacted with its station on the transition into `state`.
pub fn interacted(state: &[f64], i: usize) -> bool {
    state[i * PAIR_OBS_DIM + ACTIVATION_OFFSET] == 1.0
}

impl Env for MultiParticleEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn obs_dim(&self) -> usize {
        self.cfg.agents * PAIR_OBS_DIM
    }

    fn action_dim(&self) -> usize {
        self.cfg.agents * AGENT_ACTION_DIM
    }

    fn factor_spec(&self) -> &FactorSpec {
        &self.spec
    }

    fn episode_len(&self) -> usize {
        self.cfg.episode_len
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        for i in 0..self.agents.len() {
            let pos = [self.rng.random_range(-1.0..1.0), self.rng.random_range(-1.0..1.0)];
            let station = [self.rng.random_range(-0.8..0.8), self.rng.random_range(-0.8..0.8)];
            let a = &mut self.agents[i];
            a.pos = pos;
            a.vel = [0.0; 2];
            a.station = station;
            a.activation = 0.0;
        }
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let act = sanitize_action(action, self.action_dim())?;
        let mut info = BTreeMap::new();
        let mut interactions = 0.0;
        for (i, a) in self.agents.iter_mut().enumerate() {
            let u = &act[i * AGENT_ACTION_DIM..(i + 1) * AGENT_ACTION_DIM];
            for d in 0..2 {
                a.vel[d] = DAMPING * a.vel[d] + a.gain * u[d] * DT;
                a.pos[d] += a.vel[d] * DT;
                if a.pos[d].abs() > 1.0 {
                    a.pos[d] = a.pos[d].clamp(-1.0, 1.0);
                    a.vel[d] = 0.0;
                }
            }
            let dist = ((a.pos[0] - a.station[0]).powi(2) + (a.pos[1] - a.station[1]).powi(2)).sqrt();
            if argmax(&u[2..5]) == Some(0) && dist <= self.cfg.interact_radius {
                a.activation = 1.0;
                interactions += 1.0;
            } else {
                a.activation *= self.cfg.activation_decay;
            }
        }
        if interactions > 0.0 {
            info.insert("interactions".into(), interactions);
        }
        self.t += 1;
        let done = self.t >= self.cfg.episode_len;
        if done {
            info.insert(INFO_TIME_LIMIT.into(), 1.0);
        }
        Ok(EnvStep {
            next_state: self.observe(),
            task_reward: 0.0,
            done,
            info,
        })
    }

    fn state(&self) -> Vec<f64> {
        self.observe()
    }

    fn t(&self) -> usize {
        self.t
    }

    fn agent_positions(&self, state: &[f64]) -> Vec<[f64; 2]> {
        (0..self.cfg.agents)
            .map(|i| [state[i * PAIR_OBS_DIM], state[i * PAIR_OBS_DIM + 1]])
            .collect()
    }

    fn position_bounds(&self) -> ([f64; 2], [f64; 2]) {
        ([-1.0, -1.0], [1.0, 1.0])
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
