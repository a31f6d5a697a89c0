//! C ABI over the environments and trained skill policies.
//!
//! Every function returns a [`SusdStatus`]. On failure the message is
//! available from [`susd_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use susd::config::{ExperimentConfig, RESOLVED_CONFIG_FILE};
use susd::envs::{make_env, Env, EnvConfig};
use susd::trainer::SkillModel;
use susd::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SusdStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Divergence = 3,
    Dimension = 4,
    Unsupported = 5,
    Io = 6,
    InvalidUtf8 = 7,
    Panic = 8,
    Other = 9,
}

/// An environment instance.
pub struct SusdEnv {
    inner: Box<dyn Env>,
}

/// A trained skill-conditioned policy.
pub struct SusdPolicy {
    model: SkillModel,
    obs_dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SusdStatus {
    match e {
        Error::Config { .. } | Error::Unknown { .. } => SusdStatus::Config,
        Error::Divergence { .. } => SusdStatus::Divergence,
        Error::Dimension { .. } => SusdStatus::Dimension,
        Error::Unsupported(_) => SusdStatus::Unsupported,
        Error::Io(_) | Error::Checkpoint(_) | Error::Json(_) | Error::Csv(_) => SusdStatus::Io,
        _ => SusdStatus::Other,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SusdStatus, String)>) -> SusdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SusdStatus::Ok
        }
        Ok(Err((code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            SusdStatus::Panic
        }
    }
}

fn lift(e: Error) -> (SusdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SusdStatus, String) {
    (SusdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SusdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SusdStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn read_slice<'a>(
    p: *const f64,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a [f64], (SusdStatus, String)> {
    if len != want {
        return Err((
            SusdStatus::Dimension,
            format!("{what}: expected {want} values, got {len}"),
        ));
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_slice(p: *mut f64, len: usize, values: &[f64], what: &str) -> Result<(), (SusdStatus, String)> {
    if len != values.len() {
        return Err((
            SusdStatus::Dimension,
            format!("{what}: buffer holds {len}, need {}", values.len()),
        ));
    }
    if p.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts_mut(p, len).copy_from_slice(values);
    Ok(())
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), (SusdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    *p = v;
    Ok(())
}

/// Message for the last failed call on this thread; empty after a
/// success. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn susd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn susd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates an environment by id (`gunner`, `multiparticle`,
/// `multiparticle-mini`, `pointnav`).
///
/// # Safety
/// `id` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn susd_env_new(id: *const c_char, out: *mut *mut SusdEnv) -> SusdStatus {
    guard(|| {
        let id = read_str(id, "id")?;
        let env = make_env(&EnvConfig {
            id: id.to_string(),
            ..Default::default()
        })
        .map_err(lift)?;
        write_out(out, Box::into_raw(Box::new(SusdEnv { inner: env })), "out")
    })
}

/// # Safety
/// `env` must come from [`susd_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn susd_env_free(env: *mut SusdEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Observation and action widths and factor count.
///
/// # Safety
/// `env` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn susd_env_dims(
    env: *const SusdEnv,
    obs_dim: *mut usize,
    action_dim: *mut usize,
    factors: *mut usize,
) -> SusdStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        write_out(obs_dim, env.inner.obs_dim(), "obs_dim")?;
        write_out(action_dim, env.inner.action_dim(), "action_dim")?;
        write_out(factors, env.inner.factor_spec().len(), "factors")
    })
}

/// Resets with `seed` and writes the first observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn susd_env_reset(env: *mut SusdEnv, seed: u64, obs: *mut f64, obs_len: usize) -> SusdStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let s = env.inner.reset(seed);
        write_slice(obs, obs_len, &s, "obs")
    })
}

/// Advances one step. `done` is set to 1 at episode end.
///
/// # Safety
/// `env` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn susd_env_step(
    env: *mut SusdEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    done: *mut i32,
) -> SusdStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let a = read_slice(action, action_len, env.inner.action_dim(), "action")?;
        let st = env.inner.step(a).map_err(lift)?;
        write_slice(obs, obs_len, &st.next_state, "obs")?;
        write_out(reward, st.task_reward, "reward")?;
        write_out(done, st.done as i32, "done")
    })
}

/// Loads `checkpoint-final` from a pretraining run directory.
///
/// # Safety
/// `run_dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn susd_policy_load(run_dir: *const c_char, out: *mut *mut SusdPolicy) -> SusdStatus {
    guard(|| {
        let dir = Path::new(read_str(run_dir, "run_dir")?);
        let cfg = ExperimentConfig::load(Some(&dir.join(RESOLVED_CONFIG_FILE)), &[]).map_err(lift)?;
        let model = SkillModel::load(&cfg, &dir.join("checkpoint-final")).map_err(lift)?;
        let obs_dim = model.agent.input_dim() - model.prior.dim();
        write_out(out, Box::into_raw(Box::new(SusdPolicy { model, obs_dim })), "out")
    })
}

/// # Safety
/// `policy` must come from [`susd_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn susd_policy_free(policy: *mut SusdPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Observation, skill and action widths the policy expects.
///
/// # Safety
/// `policy` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn susd_policy_dims(
    policy: *const SusdPolicy,
    obs_dim: *mut usize,
    skill_dim: *mut usize,
    action_dim: *mut usize,
) -> SusdStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        write_out(obs_dim, p.obs_dim, "obs_dim")?;
        write_out(skill_dim, p.model.prior.dim(), "skill_dim")?;
        write_out(action_dim, p.model.agent.action_dim(), "action_dim")
    })
}

/// Draws a skill from the prior with `seed`.
///
/// # Safety
/// `policy` must be a live handle; `skill` must hold `skill_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn susd_policy_sample_skill(
    policy: *const SusdPolicy,
    seed: u64,
    skill: *mut f64,
    skill_len: usize,
) -> SusdStatus {
    use susd::skills::sample_skill;
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = sample_skill(&p.model.prior, &mut rng);
        write_slice(skill, skill_len, z.values(), "skill")
    })
}

/// Deterministic action `tanh(mean)` for `obs` under `skill`.
///
/// # Safety
/// `policy` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn susd_policy_act(
    policy: *const SusdPolicy,
    obs: *const f64,
    obs_len: usize,
    skill: *const f64,
    skill_len: usize,
    action: *mut f64,
    action_len: usize,
) -> SusdStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let s = read_slice(obs, obs_len, p.obs_dim, "obs")?;
        let z = read_slice(skill, skill_len, p.model.prior.dim(), "skill")?;
        let mut input = s.to_vec();
        input.extend_from_slice(z);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = p.model.agent.act(&input, false, &mut rng).map_err(lift)?;
        write_slice(action, action_len, &a, "action")
    })
}
