//! Trains a policy on the builtin loop track, printing one line per update,
//! then evaluates it.
//!
//! cargo run --release -p swarmrace --example desk_train -- [seed] [env_steps] [n_drones] [no-safety]

use swarmrace::env::EnvConfig;
use swarmrace::eval::{evaluate, EvalOptions};
use swarmrace::track::TrackSpec;
use swarmrace::trainer::{TrainConfig, Trainer};

fn main() -> swarmrace::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500_000);
    let track = TrackSpec::resolve("builtin:loop")?;
    let n_drones: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut env = EnvConfig {
        n_drones,
        ..Default::default()
    };
    if args.get(4).map(String::as_str) == Some("no-safety") {
        env.reward.lambda3 = 0.0;
        env.reward.lambda4 = 0.0;
        env.reward.r_collision = 0.0;
    }
    let cfg = TrainConfig {
        n_envs: 8,
        rollout_steps: 256,
        total_env_steps: steps,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&track, &env, &cfg, seed)?;
    trainer.run(None, |r| {
        println!(
            "{:4} {:8} {:7.1}s eps {:3} wp {:6.2} len {:7.1} ret {:8.2} ent {:6.3} kl {:.4} ev {:.3}",
            r.update,
            r.env_steps,
            r.wall_time,
            r.episodes,
            r.mean_waypoints,
            r.mean_episode_length,
            r.mean_episode_reward,
            r.entropy,
            r.approx_kl,
            r.explained_variance
        )
    })?;
    let out = evaluate(
        &trainer.params,
        &track,
        &env,
        &EvalOptions {
            trials: if n_drones > 1 { 200 } else { 50 },
            base_seed: 1000 + seed,
            workers: 1,
            record_trajectories: 0,
        },
    )?;
    println!("{}", out.summary.to_toml_string());
    let laps_ok = out.records.iter().filter(|r| r.min_laps >= 1).count();
    println!("trials with >= 1 lap: {laps_ok}/{}", out.records.len());
    Ok(())
}
