//! 2D-Gunner: a point agent on `[-1, 1]²` that picks up ammo and shoots
//! targets.
//!
//! Observation layout (18 dims, three 6-dim factors):
//!
//! | factor | dims |
//! |--------|------|
//! | agent  | x, y, sin(heading), cos(heading), ammo / max_ammo, cooldown / max_cooldown |
//! | ammo   | pickup x, pickup y, available, respawn timer / respawn steps, 0, 0 |
//! | target | x, y, alive, hit count, 0, 0 |
//!
//! Action (6 dims, each in `[-1, 1]`): `[0..2]` velocity, `[2..5]` logits
//! over {pick up, fire, idle} (a tie for the
//! top logit means idle), `[5]` aim heading as a fraction of π.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, sanitize_action, Env, EnvStep, Factor, FactorSpec, DT, INFO_TIME_LIMIT};
use crate::error::Result;

pub const GUNNER_OBS_DIM: usize = 18;
pub const GUNNER_ACTION_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GunnerConfig {
    pub episode_len: usize,
    pub speed: f64,
    pub pickup_radius: f64,
    /// Perpendicular distance within which a shot hits.
    pub hit_width: f64,
    pub shot_range: f64,
    pub max_ammo: u32,
    pub max_cooldown: u32,
    pub ammo_respawn_steps: u32,
    /// Ammo at reset.
    pub start_ammo: u32,
    /// Refill ammo after every step.
    pub unlimited_ammo: bool,
}

impl Default for GunnerConfig {
    fn default() -> Self {
        GunnerConfig {
            episode_len: 200,
            speed: 1.0,
            pickup_radius: 0.15,
            hit_width: 0.1,
            shot_range: 1.5,
            max_ammo: 5,
            max_cooldown: 3,
            ammo_respawn_steps: 20,
            start_ammo: 0,
            unlimited_ammo: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GunnerEnv {
    cfg: GunnerConfig,
    spec: FactorSpec,
    rng: ChaCha8Rng,
    t: usize,
    pos: [f64; 2],
    heading: f64,
    ammo: u32,
    cooldown: u32,
    pickup: [f64; 2],
    pickup_available: bool,
    respawn_timer: u32,
    target: [f64; 2],
    target_alive: bool,
    hits: u32,
}

impl GunnerEnv {
    pub fn new(cfg: GunnerConfig) -> Self {
        let spec = FactorSpec::new(
            vec![
                Factor::new("agent", 0..6, true),
                Factor::new("ammo", 6..12, false),
                Factor::new("target", 12..18, false),
            ],
            GUNNER_OBS_DIM,
        )
        .expect("static layout");
        let mut env = GunnerEnv {
            cfg,
            spec,
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            pos: [0.0; 2],
            heading: 0.0,
            ammo: 0,
            cooldown: 0,
            pickup: [0.0; 2],
            pickup_available: true,
            respawn_timer: 0,
            target: [0.0; 2],
            target_alive: true,
            hits: 0,
        };
        env.reset(0);
        env
    }

    pub fn config(&self) -> &GunnerConfig {
        &self.cfg
    }

    fn random_point(&mut self) -> [f64; 2] {
        [self.rng.random_range(-0.9..0.9), self.rng.random_range(-0.9..0.9)]
    }

    fn observe(&self) -> Vec<f64> {
        let c = &self.cfg;
        vec![
            self.pos[0],
            self.pos[1],
            self.heading.sin(),
            self.heading.cos(),
            self.ammo as f64 / c.max_ammo as f64,
            self.cooldown as f64 / c.max_cooldown.max(1) as f64,
            self.pickup[0],
            self.pickup[1],
            if self.pickup_available { 1.0 } else { 0.0 },
            self.respawn_timer as f64 / c.ammo_respawn_steps.max(1) as f64,
            0.0,
            0.0,
            self.target[0],
            self.target[1],
            if self.target_alive { 1.0 } else { 0.0 },
            self.hits as f64,
            0.0,
            0.0,
        ]
    }

    /// Whether a shot from the agent along its heading hits the target.
    fn shot_hits(&self) -> bool {
        let dir = [self.heading.cos(), self.heading.sin()];
        let rel = [self.target[0] - self.pos[0], self.target[1] - self.pos[1]];
        let along = rel[0] * dir[0] + rel[1] * dir[1];
        let perp = (rel[0] * dir[1] - rel[1] * dir[0]).abs();
        along >= 0.0 && along <= self.cfg.shot_range && perp <= self.cfg.hit_width
    }
}

impl Env for GunnerEnv {
    fn id(&self) -> &str {
        "gunner"
    }

    fn obs_dim(&self) -> usize {
        GUNNER_OBS_DIM
    }

    fn action_dim(&self) -> usize {
        GUNNER_ACTION_DIM
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
        self.pos = self.random_point();
        self.heading = 0.0;
        self.ammo = if self.cfg.unlimited_ammo {
            self.cfg.max_ammo
        } else {
            self.cfg.start_ammo.min(self.cfg.max_ammo)
        };
        self.cooldown = 0;
        self.pickup = self.random_point();
        self.pickup_available = true;
        self.respawn_timer = 0;
        self.target = self.random_point();
        self.target_alive = true;
        self.hits = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let a = sanitize_action(action, GUNNER_ACTION_DIM)?;
        let mut info = BTreeMap::new();
        let step = self.cfg.speed * DT;
        self.pos[0] = (self.pos[0] + step * a[0]).clamp(-1.0, 1.0);
        self.pos[1] = (self.pos[1] + step * a[1]).clamp(-1.0, 1.0);
        self.heading = std::f64::consts::PI * a[5];
        self.cooldown = self.cooldown.saturating_sub(1);

        // a dead target respawns one step after being hit
        if !self.target_alive {
            self.target = self.random_point();
            self.target_alive = true;
        }
        if !self.pickup_available {
            self.respawn_timer = self.respawn_timer.saturating_sub(1);
            if self.respawn_timer == 0 {
                self.pickup = self.random_point();
                self.pickup_available = true;
            }
        }

        match argmax(&a[2..5]) {
            Some(0) => {
                let d = ((self.pos[0] - self.pickup[0]).powi(2) + (self.pos[1] - self.pickup[1]).powi(2)).sqrt();
                if self.pickup_available && d <= self.cfg.pickup_radius {
                    self.ammo = self.cfg.max_ammo;
                    self.pickup_available = false;
                    self.respawn_timer = self.cfg.ammo_respawn_steps;
                    info.insert("pickup".into(), 1.0);
                }
            }
            Some(1) if self.ammo > 0 && self.cooldown == 0 => {
                self.ammo -= 1;
                self.cooldown = self.cfg.max_cooldown;
                info.insert("shot".into(), 1.0);
                if self.target_alive && self.shot_hits() {
                    self.target_alive = false;
                    self.hits += 1;
                    info.insert("hit".into(), 1.0);
                }
            }
            _ => {}
        }
        if self.cfg.unlimited_ammo {
            self.ammo = self.cfg.max_ammo;
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
        vec![[state[0], state[1]]]
    }

    fn position_bounds(&self) -> ([f64; 2], [f64; 2]) {
        ([-1.0, -1.0], [1.0, 1.0])
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
