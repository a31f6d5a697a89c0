//! Evaluation: unique-state coverage, grid coverage, factor decoding and
//! zero-shot goal reaching.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{make_env, EnvConfig, FactorSpec, TaskEnv, TaskKind};
use crate::error::{Error, Result};
use crate::skills::{sample_skill, zero_shot_skill, SkillMode};
use crate::tensor::{Activation, Adam, AdamConfig, Mlp, Tape, Tensor};
use crate::trainer::SkillModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub coverage_steps: usize,
    pub resample_every: usize,
    pub bins_per_axis: usize,
    pub decode_steps: usize,
    pub decode_epochs: usize,
    pub decode_batch: usize,
    pub decode_lr: f64,
    /// Decoder hidden sizes to select from; per-environment list when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decode_hidden: Option<Vec<usize>>,
    pub zeroshot_steps: usize,
    pub zeroshot_seeds: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            coverage_steps: 20_000,
            resample_every: 200,
            bins_per_axis: 50,
            decode_steps: 100_000,
            decode_epochs: 100,
            decode_batch: 1024,
            decode_lr: 1e-4,
            decode_hidden: None,
            zeroshot_steps: 20_000,
            zeroshot_seeds: 8,
            seed: 0,
        }
    }
}

/// Smaller decode collection for quick runs.
pub const DESK_DECODE_STEPS: usize = 20_000;

/// Decoder hidden sizes tried for an environment.
pub fn default_decode_hidden(env_id: &str) -> Vec<usize> {
    if env_id.starts_with("multiparticle") {
        (30..=65).step_by(5).collect()
    } else {
        vec![10, 12, 14, 16]
    }
}

/// A coordinate in hundredths, rounded half away from zero.
pub fn round2(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

/// Distinct positions after rounding each coordinate to two decimals.
pub fn unique_state_count(track: &[[f64; 2]]) -> usize {
    track
        .iter()
        .map(|p| (round2(p[0]), round2(p[1])))
        .collect::<HashSet<_>>()
        .len()
}

/// Cell of `x` among `bins` equal cells on `[lo, hi]`, clipped to the edges.
pub fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let f = ((x - lo) / (hi - lo) * bins as f64).floor();
    if f.is_nan() || f < 0.0 {
        0
    } else {
        (f as usize).min(bins - 1)
    }
}

/// Fraction of the `bins x bins` grid visited.
pub fn bin_fraction(track: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2], bins: usize) -> f64 {
    let cells: HashSet<(usize, usize)> = track
        .iter()
        .map(|p| (bin_index(p[0], lo[0], hi[0], bins), bin_index(p[1], lo[1], hi[1], bins)))
        .collect();
    cells.len() as f64 / (bins * bins) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub factors: Vec<String>,
    pub counts: Vec<usize>,
    pub min: usize,
    pub mean: f64,
    pub steps: usize,
    pub resample_every: usize,
}

impl CoverageReport {
    pub fn from_tracks(
        factors: Vec<String>,
        tracks: &[Vec<[f64; 2]>],
        steps: usize,
        resample_every: usize,
    ) -> Result<Self> {
        if tracks.is_empty() || tracks.len() != factors.len() {
            return Err(Error::contract("one track per agent factor required"));
        }
        let counts: Vec<usize> = tracks.iter().map(|t| unique_state_count(t)).collect();
        Ok(CoverageReport {
            min: *counts.iter().min().unwrap(),
            mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
            factors,
            counts,
            steps,
            resample_every,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinReport {
    pub factors: Vec<String>,
    pub fractions: Vec<f64>,
    pub min: f64,
    pub mean: f64,
    pub bins_per_axis: usize,
}

impl BinReport {
    pub fn from_tracks(
        factors: Vec<String>,
        tracks: &[Vec<[f64; 2]>],
        lo: [f64; 2],
        hi: [f64; 2],
        bins: usize,
    ) -> Result<Self> {
        if tracks.is_empty() || tracks.len() != factors.len() {
            return Err(Error::contract("one track per agent factor required"));
        }
        if bins == 0 {
            return Err(Error::config("eval.bins_per_axis", "must be positive"));
        }
        let fractions: Vec<f64> = tracks.iter().map(|t| bin_fraction(t, lo, hi, bins)).collect();
        Ok(BinReport {
            min: fractions.iter().copied().fold(f64::INFINITY, f64::min),
            mean: fractions.iter().sum::<f64>() / fractions.len() as f64,
            factors,
            fractions,
            bins_per_axis: bins,
        })
    }
}

/// Rolls out the skill policy deterministically for `steps` steps, drawing
/// a fresh skill every `resample_every` steps and resetting at episode
/// end. Returns every visited state, the reset state included.
pub fn skill_rollout(
    model: &SkillModel,
    env_cfg: &EnvConfig,
    steps: usize,
    resample_every: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if resample_every == 0 {
        return Err(Error::config("eval.resample_every", "must be positive"));
    }
    let mut env = make_env(env_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.reset(rng.random());
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s.clone());
    let mut z = sample_skill(&model.prior, &mut rng);
    let mut input = Vec::new();
    for t in 0..steps {
        if t > 0 && t % resample_every == 0 {
            z = sample_skill(&model.prior, &mut rng);
        }
        input.clear();
        input.extend_from_slice(&s);
        input.extend_from_slice(z.values());
        let a = model.agent.act(&input, false, &mut rng)?;
        let st = env.step(&a)?;
        s = if st.done {
            states.push(st.next_state);
            env.reset(rng.random())
        } else {
            st.next_state
        };
        states.push(s.clone());
    }
    Ok(states)
}

/// Per agent factor, the agent's `(x, y)` in every state.
fn agent_tracks(env_cfg: &EnvConfig, states: &[Vec<f64>]) -> Result<(Vec<String>, Vec<Vec<[f64; 2]>>)> {
    let env = make_env(env_cfg)?;
    let names: Vec<String> = env
        .factor_spec()
        .factors()
        .iter()
        .filter(|f| f.agent)
        .map(|f| f.name.clone())
        .collect();
    let mut tracks = vec![Vec::with_capacity(states.len()); names.len()];
    for s in states {
        let pos = env.agent_positions(s);
        if pos.len() != names.len() {
            return Err(Error::dim("agent positions", names.len(), pos.len()));
        }
        for (t, p) in tracks.iter_mut().zip(pos) {
            t.push(p);
        }
    }
    Ok((names, tracks))
}

pub fn state_coverage(
    model: &SkillModel,
    env_cfg: &EnvConfig,
    steps: usize,
    resample_every: usize,
    seed: u64,
) -> Result<CoverageReport> {
    let states = skill_rollout(model, env_cfg, steps, resample_every, seed)?;
    let (names, tracks) = agent_tracks(env_cfg, &states)?;
    CoverageReport::from_tracks(names, &tracks, steps, resample_every)
}

pub fn bin_coverage(
    model: &SkillModel,
    env_cfg: &EnvConfig,
    bins: usize,
    steps: usize,
    resample_every: usize,
    seed: u64,
) -> Result<BinReport> {
    let states = skill_rollout(model, env_cfg, steps, resample_every, seed)?;
    let (names, tracks) = agent_tracks(env_cfg, &states)?;
    let (lo, hi) = make_env(env_cfg)?.position_bounds();
    BinReport::from_tracks(names, &tracks, lo, hi, bins)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodeReport {
    pub factors: Vec<String>,
    pub test_mse: Vec<f64>,
    pub mean_mse: f64,
    pub hidden: usize,
    /// Validation MSE per candidate hidden size.
    pub validation: Vec<(usize, f64)>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeSettings {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

/// 80/10/10 split sizes for `n` rows.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

fn mse_rows(pred: &Tensor<f64>, target: &Tensor<f64>, cols: std::ops::Range<usize>) -> f64 {
    let mut sum = 0.0;
    for r in 0..target.rows() {
        let (p, t) = (pred.row_slice(r), target.row_slice(r));
        for c in cols.clone() {
            sum += (p[c] - t[c]).powi(2);
        }
    }
    sum / (target.rows() * cols.len()) as f64
}

fn train_decoder(
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    hidden: usize,
    s: &DecodeSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Mlp<f64>> {
    let mut net = Mlp::new("decoder", &[x.cols(), hidden, y.cols()], Activation::Relu, rng)?;
    let mut opt = Adam::new(AdamConfig::with_lr(s.lr));
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for _ in 0..s.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(s.batch) {
            let (bx, by) = (x.gather_rows(chunk), y.gather_rows(chunk));
            let mut tape = Tape::new();
            let input = tape.constant(bx);
            let out = net.forward(&mut tape, input)?;
            let target = tape.constant(by);
            let diff = tape.sub(out, target)?;
            let sq = tape.square(diff);
            let loss = tape.mean(sq);
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Divergence {
                    what: "decoder loss".into(),
                    step: opt.step_count(),
                });
            }
            let grads = tape.backward(loss)?;
            opt.step(net.params_mut(), &grads)?;
        }
    }
    Ok(net)
}

/// Trains one decoder per candidate hidden size from `features` to
/// `targets`, picks the size with the lowest validation MSE and reports
/// per-factor test MSE under `spec`.
pub fn decode_features(
    features: &Tensor<f64>,
    targets: &Tensor<f64>,
    spec: &FactorSpec,
    candidates: &[usize],
    settings: &DecodeSettings,
) -> Result<DecodeReport> {
    if candidates.is_empty() {
        return Err(Error::config("eval.decode_hidden", "empty candidate list"));
    }
    if features.rows() != targets.rows() {
        return Err(Error::dim("decode rows", targets.rows(), features.rows()));
    }
    if targets.cols() != spec.state_dim() {
        return Err(Error::dim("decode targets", spec.state_dim(), targets.cols()));
    }
    let n = features.rows();
    let (n_train, n_val, n_test) = split_sizes(n);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::contract(format!("{n} rows are too few to split")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (tr, rest) = idx.split_at(n_train);
    let (va, te) = rest.split_at(n_val);
    let (xtr, ytr) = (features.gather_rows(tr), targets.gather_rows(tr));
    let (xva, yva) = (features.gather_rows(va), targets.gather_rows(va));

    let mut best: Option<(f64, usize, Mlp<f64>)> = None;
    let mut validation = Vec::with_capacity(candidates.len());
    for &h in candidates {
        let net = train_decoder(&xtr, &ytr, h, settings, &mut rng)?;
        let v = mse_rows(&net.infer(&xva)?, &yva, 0..targets.cols());
        validation.push((h, v));
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, h, net));
        }
    }
    let (_, hidden, net) = best.expect("nonempty candidates");
    let (xte, yte) = (features.gather_rows(te), targets.gather_rows(te));
    let pred = net.infer(&xte)?;
    let test_mse: Vec<f64> = spec
        .factors()
        .iter()
        .map(|f| mse_rows(&pred, &yte, f.range()))
        .collect();
    Ok(DecodeReport {
        factors: spec.factors().iter().map(|f| f.name.clone()).collect(),
        mean_mse: test_mse.iter().sum::<f64>() / test_mse.len() as f64,
        test_mse,
        hidden,
        validation,
        n_train,
        n_val,
        n_test,
    })
}

/// Concatenated embeddings `[phi_1(s^1), ..., phi_N(s^N)]` per row.
pub fn embedding_features(model: &SkillModel, states: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s32 = states.cast::<f32>();
    let parts: Vec<Tensor<f32>> = (0..model.spec.len())
        .map(|i| model.bank.embed(&model.spec, &s32, i))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor<f32>> = parts.iter().collect();
    Ok(Tensor::hcat(&refs)?.cast::<f64>())
}

/// Decodes full states from a checkpoint's embeddings on skill rollouts.
/// Per-factor errors use the environment's own factorization.
pub fn factor_decode(
    model: &SkillModel,
    env_cfg: &EnvConfig,
    steps: usize,
    resample_every: usize,
    candidates: &[usize],
    settings: &DecodeSettings,
) -> Result<DecodeReport> {
    let states = skill_rollout(model, env_cfg, steps, resample_every, settings.seed)?;
    let targets = Tensor::from_rows(&states)?;
    let features = embedding_features(model, &targets)?;
    let spec = make_env(env_cfg)?.factor_spec().clone();
    decode_features(&features, &targets, &spec, candidates, settings)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroShotReport {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub steps: usize,
}

/// Goal reaching on PointNav: each step the skill points from the current
/// embedding toward the goal state's embedding.
pub fn zero_shot_eval(
    model: &SkillModel,
    env_cfg: &EnvConfig,
    steps: usize,
    seeds: usize,
    base_seed: u64,
) -> Result<ZeroShotReport> {
    if model.prior.mode == SkillMode::Discrete {
        return Err(Error::Unsupported(
            "zero-shot goal reaching needs continuous skills".into(),
        ));
    }
    if env_cfg.id != "pointnav" {
        return Err(Error::config("env.id", "zero-shot evaluation runs on pointnav"));
    }
    let mut per_seed = Vec::with_capacity(seeds);
    for k in 0..seeds {
        let seed = base_seed.wrapping_add(k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = TaskEnv::new(TaskKind::PointNavGoal, env_cfg)?;
        let mut s = env.reset(rng.random());
        let mut total = 0.0;
        let mut input = Vec::new();
        for _ in 0..steps {
            let g = env.task.goal;
            let goal_state = [g[0], g[1], 0.0, 0.0];
            let z = zero_shot_skill(&model.bank, &model.spec, &s, &goal_state)?;
            input.clear();
            input.extend_from_slice(&s);
            input.extend_from_slice(z.values());
            let a = model.agent.act(&input, false, &mut rng)?;
            let st = env.step(&a)?;
            total += st.task_reward;
            s = if st.done {
                env.reset(rng.random())
            } else {
                st.next_state
            };
        }
        per_seed.push(total);
    }
    let n = per_seed.len().max(1) as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    let std = (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ZeroShotReport {
        per_seed,
        mean,
        std,
        steps,
    })
}

pub fn write_coverage_csv(path: &Path, r: &CoverageReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["factor", "unique_states"])?;
    for (f, c) in r.factors.iter().zip(&r.counts) {
        w.write_record([f.clone(), c.to_string()])?;
    }
    w.write_record(["min".into(), r.min.to_string()])?;
    w.write_record(["mean".into(), r.mean.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn write_bins_csv(path: &Path, r: &BinReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["factor", "fraction"])?;
    for (f, c) in r.factors.iter().zip(&r.fractions) {
        w.write_record([f.clone(), c.to_string()])?;
    }
    w.write_record(["min".into(), r.min.to_string()])?;
    w.write_record(["mean".into(), r.mean.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn write_decode_csv(path: &Path, r: &DecodeReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["factor", "test_mse"])?;
    for (f, m) in r.factors.iter().zip(&r.test_mse) {
        w.write_record([f.clone(), m.to_string()])?;
    }
    w.write_record(["mean".into(), r.mean_mse.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn write_zeroshot_csv(path: &Path, r: &ZeroShotReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "reward"])?;
    for (i, v) in r.per_seed.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
