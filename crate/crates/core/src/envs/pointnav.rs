//! PointNav: one damped double-integrator point on `[-10, 10]²`.
//!
//! State `(x, y, vx, vy)`, a single factor, 2-dim acceleration action.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sanitize_action, Env, EnvStep, FactorSpec, DAMPING, DT, INFO_TIME_LIMIT};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointNavConfig {
    pub episode_len: usize,
    pub bound: f64,
    /// Start positions are uniform in `[-start_range, start_range]²`.
    pub start_range: f64,
}

impl Default for PointNavConfig {
    fn default() -> Self {
        PointNavConfig {
            episode_len: 200,
            bound: 10.0,
            start_range: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointNavEnv {
    cfg: PointNavConfig,
    spec: FactorSpec,
    rng: ChaCha8Rng,
    t: usize,
    pos: [f64; 2],
    vel: [f64; 2],
}

impl PointNavEnv {
    pub fn new(cfg: PointNavConfig) -> Self {
        let mut env = PointNavEnv {
            cfg,
            spec: FactorSpec::whole(4, true),
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            pos: [0.0; 2],
            vel: [0.0; 2],
        };
        env.reset(0);
        env
    }

    pub fn config(&self) -> &PointNavConfig {
        &self.cfg
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Env for PointNavEnv {
    fn id(&self) -> &str {
        "pointnav"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
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
        let r = self.cfg.start_range;
        self.pos = if r > 0.0 {
            [self.rng.random_range(-r..r), self.rng.random_range(-r..r)]
        } else {
            [0.0, 0.0]
        };
        self.vel = [0.0; 2];
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let a = sanitize_action(action, 2)?;
        let b = self.cfg.bound;
        for d in 0..2 {
            self.vel[d] = DAMPING * self.vel[d] + a[d] * DT;
            self.pos[d] += self.vel[d] * DT;
            if self.pos[d].abs() > b {
                self.pos[d] = self.pos[d].clamp(-b, b);
                self.vel[d] = 0.0;
            }
        }
        self.t += 1;
        let done = self.t >= self.cfg.episode_len;
        let mut info = BTreeMap::new();
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
        vec![[state[0], state[1]]]
    }

    fn position_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let b = self.cfg.bound;
        ([-b, -b], [b, b])
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_action_from_rest_keeps_position() {
        let mut env = PointNavEnv::new(PointNavConfig::default());
        let s = env.reset(8);
        let next = env.step(&[0.0, 0.0]).unwrap().next_state;
        assert_eq!(next, s);
    }

    #[test]
    fn zero_action_while_moving_only_damps() {
        let mut env = PointNavEnv::new(PointNavConfig::default());
        env.reset(8);
        let s1 = env.step(&[1.0, 0.0]).unwrap().next_state;
        let s2 = env.step(&[0.0, 0.0]).unwrap().next_state;
        assert!((s2[2] - 0.9 * s1[2]).abs() < 1e-15);
        assert!((s2[0] - (s1[0] + s2[2] * DT)).abs() < 1e-15);
        assert_eq!(s2[1], s1[1]);
    }

    #[test]
    fn actions_outside_box_are_clipped() {
        let mut a = PointNavEnv::new(PointNavConfig::default());
        let mut b = a.clone();
        a.reset(1);
        b.reset(1);
        assert_eq!(a.step(&[5.0, -3.0]).unwrap(), b.step(&[1.0, -1.0]).unwrap());
    }
}
