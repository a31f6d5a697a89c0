//! Factored environments with a shared interface.
//!
//! All dynamics are point-mass style with `dt = 0.1`; environments carry
//! their own RNG stream seeded at `reset`, so `(seed, actions)` fully
//! determines a trajectory.

mod dump;
mod gunner;
mod particle;
mod pointnav;
mod tasks;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use dump::{dump_trajectories, read_trajectory_dump, TrajectoryRecord};
pub use gunner::{GunnerConfig, GunnerEnv};
pub use particle::{MultiParticleConfig, MultiParticleEnv};
pub use pointnav::{PointNavConfig, PointNavEnv};
pub use tasks::{downstream_reward, Task, TaskEnv, TaskKind};

use crate::error::{Error, Result};

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.9;

/// One named factor: a contiguous index range of the flat state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub start: usize,
    pub end: usize,
    /// Whether this factor holds a controllable agent (used by coverage).
    pub agent: bool,
}

impl Factor {
    pub fn new(name: impl Into<String>, range: Range<usize>, agent: bool) -> Self {
        Factor {
            name: name.into(),
            start: range.start,
            end: range.end,
            agent,
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn dim(&self) -> usize {
        self.end - self.start
    }
}

/// Partition of the flat state vector into named factors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    factors: Vec<Factor>,
    state_dim: usize,
}

impl FactorSpec {
    /// Validates that the factors are non-empty, disjoint, and cover
    /// `0..state_dim` exactly.
    pub fn new(factors: Vec<Factor>, state_dim: usize) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::contract("a factor spec needs at least one factor"));
        }
        let mut covered = vec![false; state_dim];
        for f in &factors {
            if f.start >= f.end || f.end > state_dim {
                return Err(Error::contract(format!(
                    "factor `{}` range {}..{} invalid for state dim {state_dim}",
                    f.name, f.start, f.end
                )));
            }
            for c in &mut covered[f.range()] {
                if *c {
                    return Err(Error::contract(format!("factor `{}` overlaps another factor", f.name)));
                }
                *c = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::contract("factors do not cover the whole state"));
        }
        Ok(FactorSpec { factors, state_dim })
    }

    /// A single factor spanning the whole state.
    pub fn whole(state_dim: usize, agent: bool) -> Self {
        FactorSpec {
            factors: vec![Factor::new("state", 0..state_dim, agent)],
            state_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> Result<&Factor> {
        self.factors.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: self.factors.len(),
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Factor::dim).collect()
    }

    pub fn agent_factors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.factors[i].agent).collect()
    }

    /// The sub-vector of `state` belonging to factor `i`.
    pub fn slice<'a, T>(&self, state: &'a [T], i: usize) -> Result<&'a [T]> {
        let f = self.factor(i)?;
        if state.len() != self.state_dim {
            return Err(Error::dim("factor_slice state", self.state_dim, state.len()));
        }
        Ok(&state[f.range()])
    }
}

/// Returns `s^i` for factor `i`.
pub fn factor_slice<'a>(spec: &FactorSpec, state: &'a [f64], i: usize) -> Result<&'a [f64]> {
    spec.slice(state, i)
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    /// Zero in reward-free pretraining.
    pub task_reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

/// Key set in [`EnvStep::info`] when `done` comes from the step limit
/// rather than a terminal state.
pub const INFO_TIME_LIMIT: &str = "time_limit";

pub trait Env: Send {
    fn id(&self) -> &str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn factor_spec(&self) -> &FactorSpec;
    fn episode_len(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
    fn state(&self) -> Vec<f64>;
    /// Steps taken since the last reset.
    fn t(&self) -> usize;
    /// `(x, y)` for each agent factor, in factor order.
    fn agent_positions(&self, state: &[f64]) -> Vec<[f64; 2]>;
    /// Lower and upper corners of the reachable position box.
    fn position_bounds(&self) -> ([f64; 2], [f64; 2]);
    fn box_clone(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Clips to `[-1, 1]` and rejects NaN.
pub(crate) fn sanitize_action(action: &[f64], dim: usize) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(Error::dim("action", dim, action.len()));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::contract("action contains NaN"));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

/// Index of the strictly largest element; `None` on a tie for the top.
pub(crate) fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    let top = xs[best];
    if xs.iter().filter(|&&x| x == top).count() > 1 {
        None
    } else {
        Some(best)
    }
}

/// Environment selection as it appears in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// `gunner`, `multiparticle`, `multiparticle-mini`, or `pointnav`.
    pub id: String,
    /// Agent count override for Multi-Particle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_len: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            id: "multiparticle-mini".into(),
            agents: None,
            episode_len: None,
        }
    }
}

pub const ENV_IDS: &[&str] = &["gunner", "multiparticle", "multiparticle-mini", "pointnav"];

pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Env>> {
    let env: Box<dyn Env> = match cfg.id.as_str() {
        "gunner" => {
            let mut c = GunnerConfig::default();
            if let Some(t) = cfg.episode_len {
                c.episode_len = t;
            }
            Box::new(GunnerEnv::new(c))
        }
        "multiparticle" | "multiparticle-mini" => {
            let mut c = if cfg.id == "multiparticle" {
                MultiParticleConfig::default()
            } else {
                MultiParticleConfig::mini()
            };
            if let Some(m) = cfg.agents {
                if m == 0 {
                    return Err(Error::config("env.agents", "must be at least 1"));
                }
                c.agents = m;
            }
            if let Some(t) = cfg.episode_len {
                c.episode_len = t;
            }
            Box::new(MultiParticleEnv::new(c))
        }
        "pointnav" => {
            let mut c = PointNavConfig::default();
            if let Some(t) = cfg.episode_len {
                c.episode_len = t;
            }
            Box::new(PointNavEnv::new(c))
        }
        other => {
            return Err(Error::Unknown {
                kind: "environment",
                name: other.to_string(),
            })
        }
    };
    Ok(env)
}

pub const FACTORIZATIONS: &[&str] = &[
    "native",
    "whole",
    "gunner-over4",
    "gunner-under2",
    "multiparticle-split",
];

/// Resolves a factorization name against an environment's native spec.
///
/// * `native`: the environment's own factors.
/// * `whole`: one factor over the full state.
/// * `gunner-over4`: Gunner with the agent block cut into two sub-factors
///   (dims 0..3 and 3..6).
/// * `gunner-under2`: Gunner with agent and ammo merged.
/// * `multiparticle-split`: every agent and every station on its own.
pub fn resolve_factorization(env: &dyn Env, name: &str) -> Result<FactorSpec> {
    let native = env.factor_spec();
    let dim = env.obs_dim();
    let wrong_env = || {
        Error::config(
            "skills.factorization",
            format!("`{name}` does not apply to env `{}`", env.id()),
        )
    };
    match name {
        "native" => Ok(native.clone()),
        "whole" => Ok(FactorSpec::whole(dim, true)),
        "gunner-over4" => {
            if env.id() != "gunner" {
                return Err(wrong_env());
            }
            FactorSpec::new(
                vec![
                    Factor::new("agent_a", 0..3, true),
                    Factor::new("agent_b", 3..6, false),
                    Factor::new("ammo", 6..12, false),
                    Factor::new("target", 12..18, false),
                ],
                dim,
            )
        }
        "gunner-under2" => {
            if env.id() != "gunner" {
                return Err(wrong_env());
            }
            FactorSpec::new(
                vec![
                    Factor::new("agent_ammo", 0..12, true),
                    Factor::new("target", 12..18, false),
                ],
                dim,
            )
        }
        "multiparticle-split" => {
            if !env.id().starts_with("multiparticle") {
                return Err(wrong_env());
            }
            let mut fs = Vec::new();
            for (i, f) in native.factors().iter().enumerate() {
                fs.push(Factor::new(format!("agent{i}"), f.start..f.start + 4, true));
                fs.push(Factor::new(format!("station{i}"), f.start + 4..f.end, false));
            }
            FactorSpec::new(fs, dim)
        }
        other => Err(Error::config(
            "skills.factorization",
            format!("unknown factorization `{other}` (expected one of {FACTORIZATIONS:?})"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_or_gappy_specs_are_rejected() {
        assert!(FactorSpec::new(vec![Factor::new("a", 0..3, true), Factor::new("b", 2..4, false)], 4).is_err());
        assert!(FactorSpec::new(vec![Factor::new("a", 0..2, true)], 4).is_err());
        assert!(FactorSpec::new(vec![], 4).is_err());
    }

    #[test]
    fn single_factor_slice_is_whole_state() {
        let spec = FactorSpec::whole(4, true);
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(factor_slice(&spec, &s, 0).unwrap(), &s);
        assert!(matches!(factor_slice(&spec, &s, 1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn slices_reassemble_every_env_state() {
        for id in ENV_IDS {
            let mut env = make_env(&EnvConfig {
                id: id.to_string(),
                ..Default::default()
            })
            .unwrap();
            let s = env.reset(3);
            let spec = env.factor_spec().clone();
            let joined: Vec<f64> = (0..spec.len())
                .flat_map(|i| spec.slice(&s, i).unwrap().to_vec())
                .collect();
            assert_eq!(joined, s, "{id}");
        }
    }

    #[test]
    fn factorization_variants_are_partitions() {
        let gunner = make_env(&EnvConfig {
            id: "gunner".into(),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(resolve_factorization(gunner.as_ref(), "gunner-over4").unwrap().len(), 4);
        assert_eq!(
            resolve_factorization(gunner.as_ref(), "gunner-under2").unwrap().len(),
            2
        );
        assert_eq!(resolve_factorization(gunner.as_ref(), "whole").unwrap().len(), 1);
        assert!(resolve_factorization(gunner.as_ref(), "multiparticle-split").is_err());
        let mp = make_env(&EnvConfig::default()).unwrap();
        assert_eq!(
            resolve_factorization(mp.as_ref(), "multiparticle-split").unwrap().len(),
            6
        );
        assert!(resolve_factorization(mp.as_ref(), "bogus").is_err());
    }

    #[test]
    fn unknown_env_is_an_error() {
        let r = make_env(&EnvConfig {
            id: "ant".into(),
            ..Default::default()
        });
        assert!(matches!(r, Err(Error::Unknown { .. })));
    }
}
