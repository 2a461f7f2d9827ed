use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swarmrace::env::EnvConfig;
use swarmrace::eval::{evaluate, read_records, run_trial, summarize, EvalOptions, Trajectory};
use swarmrace::policy::PolicyParams;
use swarmrace::track::TrackSpec;

fn setup(n_drones: usize) -> (PolicyParams, TrackSpec, EnvConfig) {
    let cfg = EnvConfig {
        n_drones,
        t_max: 300,
        ..Default::default()
    };
    let params = PolicyParams::new(cfg.layout().len(), 16, &mut ChaCha8Rng::seed_from_u64(2));
    (params, TrackSpec::resolve("builtin:loop").unwrap(), cfg)
}

#[test]
fn trials_are_deterministic_in_their_seed() {
    let (params, track, cfg) = setup(2);
    let a = run_trial(&params, &track, &cfg, 17, true).unwrap();
    let b = run_trial(&params, &track, &cfg, 17, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_drone_never_collides() {
    let (params, track, cfg) = setup(1);
    for seed in 0..5 {
        let r = run_trial(&params, &track, &cfg, seed, false).unwrap();
        assert_eq!(r.collisions, 0);
        assert!(r.min_distance.is_infinite());
    }
}

#[test]
fn trajectory_has_one_row_per_control_step() {
    let (params, track, cfg) = setup(2);
    let r = run_trial(&params, &track, &cfg, 3, true).unwrap();
    let traj = r.trajectory.unwrap();
    assert_eq!(traj.rows.len(), r.steps);
    assert_eq!(traj.rows[0].time, cfg.dt_control);
    assert_eq!(traj.meta.n_drones, 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    traj.save(&path).unwrap();
    let back = Trajectory::load(&path).unwrap();
    for i in 0..2 {
        let (p, q) = (traj.positions(i), back.positions(i));
        assert!(p.iter().zip(&q).all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())));
    }
}

#[test]
fn summary_is_reproduced_from_exported_records() {
    let (params, track, cfg) = setup(2);
    let out = evaluate(
        &params,
        &track,
        &cfg,
        &EvalOptions {
            trials: 12,
            base_seed: 5,
            workers: 2,
            record_trajectories: 0,
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trials.csv");
    swarmrace::eval::write_records(&path, &out.records).unwrap();
    let records = read_records(&path).unwrap();
    assert_eq!(records.len(), 12);
    let again = summarize(&records, 2);
    assert_eq!(again.to_toml_string(), out.summary.to_toml_string());
    assert!((0.0..=100.0).contains(&out.summary.success_rate));
    assert!((0.0..=100.0).contains(&out.summary.collision_rate));
}

#[test]
fn worker_count_does_not_change_results() {
    let (params, track, cfg) = setup(2);
    let run = |workers| {
        evaluate(
            &params,
            &track,
            &cfg,
            &EvalOptions {
                trials: 6,
                base_seed: 1,
                workers,
                record_trajectories: 0,
            },
        )
        .unwrap()
        .records
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}
