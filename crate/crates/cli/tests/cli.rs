use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn swarmrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmrace"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A configuration small enough to train in well under a second. `trainer`
/// entries replace the defaults below; `tail` is appended verbatim.
fn write_config(dir: &Path, trainer: &[(&str, &str)], tail: &str) -> String {
    let mut entries = vec![
        ("n_envs", "2"),
        ("rollout_steps", "16"),
        ("total_env_steps", "96"),
        ("hidden_units", "8"),
        ("epochs", "2"),
        ("minibatches", "2"),
        ("checkpoint_every", "2"),
    ];
    for (k, v) in trainer {
        match entries.iter_mut().find(|e| e.0 == *k) {
            Some(e) => e.1 = *v,
            None => entries.push((*k, *v)),
        }
    }
    let mut text = format!(
        "seed = 5\noutput_dir = {:?}\ntrack = \"builtin:loop\"\n\n[trainer]\n",
        dir.join("run").to_str().unwrap()
    );
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    text.push_str(tail);
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Metrics log with the wall-clock column removed.
fn metrics_without_wall_time(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let wall = header.iter().position(|c| *c == "wall_time").unwrap();
    text.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(k, _)| *k != wall)
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

#[test]
fn train_writes_config_metrics_and_checkpoints() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[], "");
    let o = swarmrace(&["train", "--config", &cfg, "--set", "trainer.gamma=0.99", "--workers", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let resolved = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(resolved.contains("gamma = 0.99"), "{resolved}");
    assert!(run.join("metrics.csv").exists());
    assert!(run.join("policy.ckpt").exists());
    assert!(run.join("policy_000002.ckpt").exists());
    let rows = fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let cfg = write_config(d.path(), &[], "");
        let o = swarmrace(&["train", "--config", &cfg, "--workers", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ma = metrics_without_wall_time(&a.path().join("run/metrics.csv"));
    let mb = metrics_without_wall_time(&b.path().join("run/metrics.csv"));
    assert_eq!(ma, mb);
    assert_eq!(
        fs::read(a.path().join("run/policy.ckpt")).unwrap(),
        fs::read(b.path().join("run/policy.ckpt")).unwrap()
    );
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[("learning_rate", "1e-3")], "");
    assert!(swarmrace(&["train", "--config", &cfg, "--seed", "9"]).status.success());
    let run = dir.path().join("run");
    let resolved = run.join("config.toml");
    let rerun = dir.path().join("rerun");
    let o = swarmrace(&[
        "train",
        "--config",
        resolved.to_str().unwrap(),
        "--set",
        &format!("output_dir={:?}", rerun.to_str().unwrap()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        metrics_without_wall_time(&run.join("metrics.csv")),
        metrics_without_wall_time(&rerun.join("metrics.csv"))
    );
}

#[test]
fn zero_budget_writes_only_the_initial_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[], "");
    let o = swarmrace(&["train", "--config", &cfg, "--set", "trainer.total_env_steps=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let ckpts: Vec<_> = fs::read_dir(&run)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 1);
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 1);
}

#[test]
fn missing_track_file_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[], "");
    let o = swarmrace(&["train", "--config", &cfg, "--set", "track=\"no/such/track.toml\""]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no/such/track.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_range_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[], "");
    let o = swarmrace(&["train", "--config", &cfg, "--set", "trainer.gama=0.9"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("trainer.gama"), "{}", stderr(&o));
    let o = swarmrace(&["train", "--config", &cfg, "--set", "trainer.clip_eps=-1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("clip_eps"), "{}", stderr(&o));
}

fn fresh_checkpoint(dir: &Path, n_drones: usize, hidden: usize) -> String {
    let hidden = hidden.to_string();
    let cfg = write_config(
        dir,
        &[("total_env_steps", "0"), ("hidden_units", &hidden)],
        &format!("\n[env]\nn_drones = {n_drones}\n"),
    );
    let o = swarmrace(&["train", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("run/policy.ckpt").to_str().unwrap().to_string()
}

#[test]
fn inspect_reports_shapes() {
    let dir = TempDir::new().unwrap();
    let ckpt = fresh_checkpoint(dir.path(), 2, 128);
    let o = swarmrace(&["inspect", "--ckpt", &ckpt]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    for line in [
        "version: 1",
        "obs_len: 25",
        "n_drones: 2",
        "window: 2",
        "actor.l0.weight: 25x128",
        "actor.l1.weight: 128x128",
        "actor.l2.weight: 128x4",
        "critic.l2.weight: 128x1",
    ] {
        assert!(s.contains(line), "missing `{line}` in\n{s}");
    }
}

#[test]
fn inspect_rejects_truncated_checkpoints() {
    let dir = TempDir::new().unwrap();
    let ckpt = fresh_checkpoint(dir.path(), 1, 8);
    let bytes = fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    let o = swarmrace(&["inspect", "--ckpt", cut.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}

#[test]
fn eval_prints_summary_and_exports_trajectories() {
    let dir = TempDir::new().unwrap();
    let ckpt = fresh_checkpoint(dir.path(), 1, 8);
    let out = dir.path().join("eval");
    let o = swarmrace(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--track",
        "builtin:loop",
        "--trials",
        "3",
        "--seed",
        "4",
        "--export-trajectories",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    for key in ["lap_time_mean", "collision_rate", "success_rate"] {
        assert!(s.contains(key), "{s}");
    }
    let trajectories = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("trajectory_"))
        .count();
    assert_eq!(trajectories, 2);
    assert!(out.join("trials.csv").exists());
    assert!(out.join("summary.toml").exists());
}

#[test]
fn eval_rejects_zero_trials() {
    let o = swarmrace(&["eval", "--ckpt", "x.ckpt", "--track", "builtin:loop", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_rejects_drone_count_mismatch() {
    let dir = TempDir::new().unwrap();
    let ckpt = fresh_checkpoint(dir.path(), 1, 8);
    let cfg = dir.path().join("two.toml");
    fs::write(&cfg, "[env]\nn_drones = 2\n").unwrap();
    let o = swarmrace(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--track",
        "builtin:loop",
        "--trials",
        "1",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_drones"), "{}", stderr(&o));
}
