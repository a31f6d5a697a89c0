use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use susd::config::{RunManifest, OUTPUT_ROOT_VAR};

const TINY: &[&str] = &[
    "env.episode_len=10",
    "skills.hidden=16",
    "density.hidden=16",
    "sac.hidden=16",
    "sac.batch_size=32",
    "trainer.episodes_per_epoch=4",
    "trainer.grad_steps_per_epoch=3",
];

fn susd(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_susd"))
        .env(OUTPUT_ROOT_VAR, root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_tiny(mut args: Vec<&str>) -> Vec<&str> {
    for s in TINY {
        args.push("--set");
        args.push(s);
    }
    args
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(
        String::from_utf8(out.stdout.clone())
            .unwrap()
            .lines()
            .last()
            .unwrap()
            .trim(),
    )
}

/// First column of every row after the header.
fn row_keys(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect()
}

fn entries(root: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(root)
        .map(|d| {
            d.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn pretrain(root: &Path, extra: &[&str]) -> PathBuf {
    let mut args = with_tiny(vec!["pretrain", "--epochs", "2", "--seed", "5"]);
    args.extend_from_slice(extra);
    run_dir(&susd(root, &args))
}

#[test]
fn pretrain_writes_a_complete_run_directory() {
    let root = tempfile::tempdir().unwrap();
    let dir = pretrain(root.path(), &[]);
    assert_eq!(dir.file_name().unwrap(), "pretrain-0000");
    for f in [
        "config.resolved.toml",
        "manifest.json",
        "metrics.csv",
        "checkpoint-final.json",
        "checkpoint-final.bin",
    ] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,env_steps,mean_reward"));

    let m = RunManifest::read(&dir).unwrap();
    assert_eq!(m.command, "pretrain");
    assert_eq!(m.seed, 5);
    assert_eq!(m.env, "multiparticle-mini");
    assert_eq!(m.ablation, "full");
    assert_eq!(m.n_factors, 3);
    assert_eq!(m.config_hash.len(), 64);
    assert!(m.artifacts.contains(&"checkpoint-final.bin".to_string()));

    let resolved = fs::read_to_string(dir.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("episode_len = 10"));
    assert!(resolved.contains("seed = 5"));

    let again = pretrain(root.path(), &[]);
    assert_eq!(again.file_name().unwrap(), "pretrain-0001");
}

#[test]
fn ablation_and_factorization_flags_reach_the_manifest() {
    let root = tempfile::tempdir().unwrap();
    let wf = pretrain(root.path(), &["--ablation", "susd-wf"]);
    let m = RunManifest::read(&wf).unwrap();
    assert_eq!((m.ablation.as_str(), m.n_factors), ("susd-wf", 1));

    let over = pretrain(root.path(), &["--env", "gunner", "--factors", "gunner-over4"]);
    let m = RunManifest::read(&over).unwrap();
    assert_eq!(
        (m.env.as_str(), m.factorization.as_str(), m.n_factors),
        ("gunner", "gunner-over4", 4)
    );
}

#[test]
fn eval_kinds_write_their_tables() {
    let root = tempfile::tempdir().unwrap();
    let dir = pretrain(root.path(), &[]);
    let run = dir.to_str().unwrap();

    let cov = run_dir(&susd(
        root.path(),
        &["eval", "--run", run, "--kind", "coverage", "--steps", "300"],
    ));
    assert_eq!(
        row_keys(&cov.join("coverage.csv")),
        ["agent0+station0", "agent1+station1", "agent2+station2", "min", "mean"]
    );
    assert_eq!(RunManifest::read(&cov).unwrap().command, "eval");

    let bins = run_dir(&susd(
        root.path(),
        &["eval", "--run", run, "--kind", "bins", "--steps", "300"],
    ));
    assert_eq!(
        row_keys(&bins.join("bins.csv")),
        ["agent0+station0", "agent1+station1", "agent2+station2", "min", "mean"]
    );

    let dec = run_dir(&susd(
        root.path(),
        &[
            "eval",
            "--run",
            run,
            "--kind",
            "decode",
            "--steps",
            "300",
            "--set",
            "eval.decode_epochs=2",
            "--set",
            "eval.decode_hidden=[8]",
        ],
    ));
    assert_eq!(
        row_keys(&dec.join("decode.csv")),
        ["agent0+station0", "agent1+station1", "agent2+station2", "mean"]
    );

    let pn = pretrain(root.path(), &["--env", "pointnav"]);
    let zs = run_dir(&susd(
        root.path(),
        &[
            "eval",
            "--run",
            pn.to_str().unwrap(),
            "--kind",
            "zeroshot",
            "--steps",
            "50",
            "--set",
            "eval.zeroshot_seeds=2",
        ],
    ));
    assert_eq!(row_keys(&zs.join("zeroshot.csv"))[..2], ["0", "1"]);
}

#[test]
fn downstream_writes_per_seed_and_aggregate_curves() {
    let root = tempfile::tempdir().unwrap();
    let dir = pretrain(root.path(), &[]);
    let out = susd(
        root.path(),
        &[
            "downstream",
            "--run",
            dir.to_str().unwrap(),
            "--task",
            "seq-easy",
            "--seeds",
            "2",
            "--epochs",
            "3",
        ],
    );
    let ds = run_dir(&out);
    for f in [
        "curve-seed0.csv",
        "curve-seed1.csv",
        "curve-aggregate.csv",
        "manifest.json",
    ] {
        assert!(ds.join(f).exists(), "missing {f}");
    }
    let agg = fs::read_to_string(ds.join("curve-aggregate.csv")).unwrap();
    assert_eq!(agg.lines().next().unwrap(), "epoch,mean_return,std_return");
    assert_eq!(agg.lines().count(), 4);

    let random = susd(
        root.path(),
        &[
            "downstream",
            "--run",
            dir.to_str().unwrap(),
            "--task",
            "seq-easy",
            "--seeds",
            "1",
            "--epochs",
            "2",
            "--random-low-level",
        ],
    );
    assert!(random.status.success());
}

#[test]
fn dump_trajectories_writes_one_line_per_step() {
    let root = tempfile::tempdir().unwrap();
    let dir = pretrain(root.path(), &[]);
    let file = root.path().join("dump.jsonl");
    let out = susd(
        root.path(),
        &[
            "dump-trajectories",
            "--run",
            dir.to_str().unwrap(),
            "--episodes",
            "2",
            "--out",
            file.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = susd::envs::read_trajectory_dump(std::io::BufReader::new(fs::File::open(&file).unwrap())).unwrap();
    assert_eq!(recs.len(), 20);
    assert_eq!((recs[10].episode, recs[10].t), (1, 0));
    assert!(recs.iter().all(|r| r.z.len() == 6 && r.s.len() == 21));
}

#[test]
fn configuration_errors_exit_with_two_and_leave_no_run() {
    let root = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["pretrain", "--set", "trainer.nonsense=1"],
        vec!["pretrain", "--set", "trainer.epochs=\"many\""],
        vec!["pretrain", "--env", "atari"],
        vec!["pretrain", "--ablation", "susd-x"],
        vec!["pretrain", "--factors", "quartered"],
    ];
    for args in cases {
        let out = susd(root.path(), &args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    assert!(entries(root.path()).is_empty(), "{:?}", entries(root.path()));

    let missing = susd(root.path(), &["eval", "--run", "/nonexistent", "--kind", "coverage"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn mismatched_or_unsupported_requests_exit_with_two() {
    let root = tempfile::tempdir().unwrap();
    let dir = pretrain(root.path(), &[]);
    let before = entries(root.path());
    let out = susd(
        root.path(),
        &["downstream", "--run", dir.to_str().unwrap(), "--task", "gunner-unlim"],
    );
    assert_eq!(out.status.code(), Some(2));

    let discrete = pretrain(
        root.path(),
        &[
            "--env",
            "pointnav",
            "--set",
            "skills.mode=\"discrete\"",
            "--set",
            "skills.d=4",
        ],
    );
    let before_eval = entries(root.path());
    let out = susd(
        root.path(),
        &["eval", "--run", discrete.to_str().unwrap(), "--kind", "zeroshot"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(entries(root.path()), before_eval);
    assert_eq!(before.len() + 1, before_eval.len());
}

#[test]
fn divergence_exits_with_three() {
    let root = tempfile::tempdir().unwrap();
    let out = susd(
        root.path(),
        &with_tiny(vec!["pretrain", "--epochs", "3", "--set", "sac.init_alpha=1e300"]),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn help_and_version_succeed() {
    let root = tempfile::tempdir().unwrap();
    let out = susd(root.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["pretrain", "downstream", "eval", "dump-trajectories"] {
        assert!(text.contains(cmd));
    }
    assert!(susd(root.path(), &["--version"]).status.success());
}
