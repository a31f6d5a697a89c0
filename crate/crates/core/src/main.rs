use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use susd::config::{create_run_dir, output_root, write_resolved, ExperimentConfig, RunManifest, RESOLVED_CONFIG_FILE};
use susd::envs::make_env;
use susd::error::{Error, Result};
use susd::eval::{
    bin_coverage, default_decode_hidden, factor_decode, state_coverage, write_bins_csv, write_coverage_csv,
    write_decode_csv, write_zeroshot_csv, zero_shot_eval, DecodeSettings, DESK_DECODE_STEPS,
};
use susd::hrl::{aggregate_curves, train_downstream, write_aggregate, write_curve, Controller};
use susd::skills::SkillMode;
use susd::trainer::{dump_rollouts, Ablation, Pretrainer, SkillModel};

#[derive(Parser)]
#[command(name = "susd", version, about = "Factorized unsupervised skill discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain skills on an environment.
    Pretrain(PretrainArgs),
    /// Train a high-level policy over a pretrained skill policy.
    Downstream(DownstreamArgs),
    /// Evaluate a pretrained checkpoint.
    Eval(EvalArgs),
    /// Write rollouts of a checkpoint as JSON lines.
    DumpTrajectories(DumpArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override such as `trainer.epochs=50`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// full, susd-w or susd-wf.
    #[arg(long)]
    ablation: Option<String>,
    /// Factorization name, e.g. native, whole, gunner-over4.
    #[arg(long)]
    factors: Option<String>,
}

#[derive(Args)]
struct CheckpointArgs {
    /// A pretraining run directory.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint name inside the run directory.
    #[arg(long, default_value = "checkpoint-final")]
    checkpoint: String,
    /// Dotted overrides applied on top of the run's resolved config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct DownstreamArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Use freshly initialized low-level networks instead of the checkpoint.
    #[arg(long)]
    random_low_level: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Coverage,
    Bins,
    Decode,
    Zeroshot,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    #[arg(long, value_enum)]
    kind: EvalKind,
    /// Rollout step budget; the configured default when omitted.
    #[arg(long)]
    steps: Option<usize>,
    /// Collect the smaller decode dataset.
    #[arg(long)]
    desk: bool,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pretrain(a: PretrainArgs) -> Result<PathBuf> {
    let mut set = a.cfg.set.clone();
    if let Some(e) = a.env {
        set.push(format!("env.id={e:?}"));
    }
    if let Some(e) = a.epochs {
        set.push(format!("trainer.epochs={e}"));
    }
    if let Some(s) = a.seed {
        set.push(format!("trainer.seed={s}"));
    }
    if let Some(ab) = a.ablation {
        let ab: Ablation = ab
            .parse()
            .map_err(|_| Error::config("trainer.ablation", format!("unknown ablation `{ab}`")))?;
        set.push(format!("trainer.ablation={:?}", ab.name()));
    }
    if let Some(f) = a.factors {
        set.push(format!("skills.factorization={f:?}"));
    }
    let cfg = ExperimentConfig::load(a.cfg.config.as_deref(), &set)?;
    let mut trainer = Pretrainer::new(&cfg)?;
    let dir = create_run_dir(&output_root(), "pretrain")?;
    write_resolved(&cfg, &dir)?;
    let mut manifest = RunManifest::new("pretrain", &cfg, cfg.trainer.seed, trainer.spec().len())?;
    manifest.write(&dir)?;
    let every = (cfg.trainer.epochs / 10).max(1);
    trainer.run(Some(&dir), |m| {
        if (m.epoch + 1) % every == 0 {
            eprintln!(
                "epoch {:>5}  reward {:+.4}  |dphi| {:.3?}  lambda {:.1?}",
                m.epoch + 1,
                m.mean_reward,
                m.delta_norm,
                m.lambda
            );
        }
    })?;
    manifest.artifacts = list_artifacts(&dir)?;
    manifest.write(&dir)?;
    Ok(dir)
}

fn list_artifacts(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    Ok(names)
}

fn load_run(c: &CheckpointArgs, extra: &[String]) -> Result<(ExperimentConfig, SkillModel)> {
    let cfg_path = c.run.join(RESOLVED_CONFIG_FILE);
    if !cfg_path.exists() {
        return Err(Error::config(
            "--run",
            format!("{} has no {RESOLVED_CONFIG_FILE}", c.run.display()),
        ));
    }
    let mut set = c.set.clone();
    set.extend_from_slice(extra);
    let cfg = ExperimentConfig::load(Some(&cfg_path), &set)?;
    let stem = c.run.join(&c.checkpoint);
    if !stem.with_extension("json").exists() {
        return Err(Error::config(
            "--checkpoint",
            format!("missing checkpoint {}", stem.display()),
        ));
    }
    let model = SkillModel::load(&cfg, &stem)?;
    Ok((cfg, model))
}

fn downstream(a: DownstreamArgs) -> Result<PathBuf> {
    let mut extra = Vec::new();
    if let Some(t) = &a.task {
        extra.push(format!("hrl.task={t:?}"));
    }
    if let Some(s) = a.seeds {
        extra.push(format!("hrl.seeds={s}"));
    }
    if let Some(e) = a.epochs {
        extra.push(format!("hrl.epochs={e}"));
    }
    let (cfg, mut model) = load_run(&a.ckpt, &extra)?;
    if a.random_low_level {
        use rand::SeedableRng;
        model = SkillModel::init(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(cfg.trainer.seed))?;
    }
    // fail on a task/env mismatch before creating the run directory
    susd::envs::TaskEnv::new(cfg.hrl.task_kind()?, &cfg.env)?;
    let dir = create_run_dir(&output_root(), "downstream")?;
    write_resolved(&cfg, &dir)?;
    let mut manifest = RunManifest::new("downstream", &cfg, cfg.trainer.seed, model.spec.len())?;
    manifest.write(&dir)?;
    let mut curves = Vec::new();
    for k in 0..cfg.hrl.seeds {
        let curve = train_downstream(&cfg, Controller::Skills(&model), k as u64)?;
        let last = curve.last().map(|p| p.mean_return).unwrap_or(0.0);
        eprintln!("seed {k}: final return {last:.3}");
        write_curve(&dir.join(format!("curve-seed{k}.csv")), &curve)?;
        curves.push(curve);
    }
    write_aggregate(&dir.join("curve-aggregate.csv"), &aggregate_curves(&curves)?)?;
    manifest.artifacts = list_artifacts(&dir)?;
    manifest.write(&dir)?;
    Ok(dir)
}

fn eval(a: EvalArgs) -> Result<PathBuf> {
    let (cfg, model) = load_run(&a.ckpt, &[])?;
    let e = &cfg.eval;
    if matches!(a.kind, EvalKind::Zeroshot) && model.prior.mode == SkillMode::Discrete {
        return Err(Error::Unsupported(
            "zero-shot goal reaching needs a continuous-skill checkpoint".into(),
        ));
    }
    let dir = create_run_dir(&output_root(), "eval")?;
    write_resolved(&cfg, &dir)?;
    let mut manifest = RunManifest::new("eval", &cfg, e.seed, model.spec.len())?;
    manifest.write(&dir)?;
    match a.kind {
        EvalKind::Coverage => {
            let r = state_coverage(
                &model,
                &cfg.env,
                a.steps.unwrap_or(e.coverage_steps),
                e.resample_every,
                e.seed,
            )?;
            write_coverage_csv(&dir.join("coverage.csv"), &r)?;
            println!(
                "unique states per agent: {:?}  worst {}  mean {:.1}",
                r.counts, r.min, r.mean
            );
        }
        EvalKind::Bins => {
            let steps = a.steps.unwrap_or(e.coverage_steps);
            let r = bin_coverage(&model, &cfg.env, e.bins_per_axis, steps, e.resample_every, e.seed)?;
            write_bins_csv(&dir.join("bins.csv"), &r)?;
            println!(
                "cell fractions per agent: {:.4?}  worst {:.4}  mean {:.4}",
                r.fractions, r.min, r.mean
            );
        }
        EvalKind::Decode => {
            let steps = a
                .steps
                .unwrap_or(if a.desk { DESK_DECODE_STEPS } else { e.decode_steps });
            let candidates = e
                .decode_hidden
                .clone()
                .unwrap_or_else(|| default_decode_hidden(&cfg.env.id));
            let settings = DecodeSettings {
                epochs: e.decode_epochs,
                batch: e.decode_batch,
                lr: e.decode_lr,
                seed: e.seed,
            };
            let r = factor_decode(&model, &cfg.env, steps, e.resample_every, &candidates, &settings)?;
            write_decode_csv(&dir.join("decode.csv"), &r)?;
            for (f, m) in r.factors.iter().zip(&r.test_mse) {
                println!("{f:>12}  test mse {m:.6}");
            }
            println!("hidden {}  mean mse {:.6}", r.hidden, r.mean_mse);
        }
        EvalKind::Zeroshot => {
            let r = zero_shot_eval(
                &model,
                &cfg.env,
                a.steps.unwrap_or(e.zeroshot_steps),
                e.zeroshot_seeds,
                e.seed,
            )?;
            write_zeroshot_csv(&dir.join("zeroshot.csv"), &r)?;
            println!(
                "goal reward {:.2} +/- {:.2} over {} seeds",
                r.mean,
                r.std,
                r.per_seed.len()
            );
        }
    }
    manifest.artifacts = list_artifacts(&dir)?;
    manifest.write(&dir)?;
    Ok(dir)
}

fn dump(a: DumpArgs) -> Result<()> {
    let (cfg, model) = load_run(&a.ckpt, &[])?;
    let mut env = make_env(&cfg.env)?;
    match &a.out {
        Some(p) => {
            let mut w = BufWriter::new(fs::File::create(p)?);
            dump_rollouts(&model, env.as_mut(), a.episodes, a.seed, &mut w)?;
        }
        None => {
            let stdout = std::io::stdout();
            dump_rollouts(&model, env.as_mut(), a.episodes, a.seed, &mut stdout.lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => pretrain(a).map(|d| println!("{}", d.display())),
        Command::Downstream(a) => downstream(a).map(|d| println!("{}", d.display())),
        Command::Eval(a) => eval(a).map(|d| println!("{}", d.display())),
        Command::DumpTrajectories(a) => dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
