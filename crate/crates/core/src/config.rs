//! Experiment configuration, run directories and manifests.
//!
//! Configs are TOML with one table per section. Every field has a default,
//! unknown keys are rejected with the offending path, and `a.b=value`
//! overrides are applied before deserialization.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::DensityConfig;
use crate::envs::{EnvConfig, ENV_IDS};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::hrl::HrlConfig;
use crate::sac::SacConfig;
use crate::skills::SkillsConfig;
use crate::trainer::TrainerConfig;

pub const OUTPUT_ROOT_VAR: &str = "SUSD_OUTPUT_ROOT";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub skills: SkillsConfig,
    pub density: DensityConfig,
    pub sac: SacConfig,
    pub trainer: TrainerConfig,
    pub hrl: HrlConfig,
    pub eval: EvalConfig,
}

fn de_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let path = e.path().to_string();
    Error::config(
        if path == "." { String::new() } else { path },
        e.into_inner().to_string(),
    )
}

/// Parses `value` as a TOML scalar or array; bare words become strings.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `dotted.path=value` override to a TOML document.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like `section.key=value`"))?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(path, "empty key in override path"));
    }
    let mut table = doc;
    for (depth, key) in keys[..keys.len() - 1].iter().enumerate() {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(keys[..=depth].join("."), "not a table"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::config("", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    fn from_table(doc: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(de_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or the defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => {
                fs::read_to_string(p).map_err(|e| Error::config("", format!("cannot read {}: {e}", p.display())))?
            }
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::contract(format!("config serialization: {e}")))
    }

    /// Hex SHA-256 of the resolved TOML.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    /// Range checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if !ENV_IDS.contains(&self.env.id.as_str()) {
            return Err(Error::config(
                "env.id",
                format!("unknown environment `{}`", self.env.id),
            ));
        }
        if self.env.episode_len == Some(0) {
            return Err(Error::config("env.episode_len", "must be positive"));
        }
        let positive = [
            ("skills.d", self.skills.d),
            ("skills.hidden", self.skills.hidden),
            ("density.hidden", self.density.hidden),
            ("sac.hidden", self.sac.hidden),
            ("sac.batch_size", self.sac.batch_size),
            ("sac.buffer_capacity", self.sac.buffer_capacity),
            ("trainer.episodes_per_epoch", self.trainer.episodes_per_epoch),
            ("hrl.k", self.hrl.k),
            ("hrl.episodes_per_epoch", self.hrl.episodes_per_epoch),
            ("hrl.seeds", self.hrl.seeds),
            ("eval.resample_every", self.eval.resample_every),
            ("eval.bins_per_axis", self.eval.bins_per_axis),
            ("eval.decode_batch", self.eval.decode_batch),
            ("eval.zeroshot_seeds", self.eval.zeroshot_seeds),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if self.skills.n == Some(0) {
            return Err(Error::config("skills.n", "must be positive"));
        }
        if !(self.skills.epsilon > 0.0) {
            return Err(Error::config("skills.epsilon", "must be positive"));
        }
        if !(self.skills.lambda_init >= 0.0) {
            return Err(Error::config("skills.lambda_init", "must be nonnegative"));
        }
        if !(self.density.logvar_min < self.density.logvar_max) {
            return Err(Error::config("density.logvar_min", "must be below logvar_max"));
        }
        if !(0.0..=1.0).contains(&self.sac.gamma) {
            return Err(Error::config("sac.gamma", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.sac.tau) {
            return Err(Error::config("sac.tau", "must lie in [0, 1]"));
        }
        if !(self.sac.init_alpha > 0.0) {
            return Err(Error::config("sac.init_alpha", "must be positive"));
        }
        if !(self.sac.log_std_min < self.sac.log_std_max) {
            return Err(Error::config("sac.log_std_min", "must be below log_std_max"));
        }
        for (path, lr) in [
            ("sac.learning_rate", self.sac.learning_rate),
            ("trainer.learning_rate", self.trainer.learning_rate),
            ("eval.decode_lr", self.eval.decode_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(path, "must be a positive finite number"));
            }
        }
        if !(self.hrl.skill_bound > 0.0) {
            return Err(Error::config("hrl.skill_bound", "must be positive"));
        }
        self.hrl.task_kind()?;
        if let Some(h) = &self.eval.decode_hidden {
            if h.is_empty() || h.contains(&0) {
                return Err(Error::config("eval.decode_hidden", "needs at least one positive size"));
            }
        }
        Ok(())
    }
}

/// Provenance written into every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub start_time: String,
    pub env: String,
    pub ablation: String,
    pub factorization: String,
    pub n_factors: usize,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, seed: u64, n_factors: usize) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            config_hash: cfg.hash()?,
            seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            start_time: chrono::Utc::now().to_rfc3339(),
            env: cfg.env.id.clone(),
            ablation: cfg.trainer.ablation.name().into(),
            factorization: cfg.skills.factorization.clone(),
            n_factors,
            artifacts: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
    }
}

/// The output root: `$SUSD_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates a fresh `root/<prefix>-NNNN` directory, never reusing one.
pub fn create_run_dir(root: &Path, prefix: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    for i in 0.. {
        let dir = root.join(format!("{prefix}-{i:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

/// Writes the resolved config next to a run's outputs.
pub fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, cfg.to_toml_string()?)?;
    Ok(path)
}
