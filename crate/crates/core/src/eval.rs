//! Batch evaluation of a trained policy and the trajectory file format.
//!
//! Trials run the deterministic policy (mean action) from independent seeds.
//! A lap time is the interval between consecutive completions of the last
//! waypoint, the first lap starting at t = 0. A collision is one pair of
//! drones closer than `2R`, counted once per contiguous interval of contact.
//!
//! # Trajectory files
//!
//! Comma-separated text. Leading lines starting with `#` form the header:
//!
//! ```text
//! # swarmrace trajectory v1
//! # track = loop
//! # n_drones = 2
//! # laps = 3
//! # d_w = 1
//! # dt = 0.01
//! # seed = 42
//! # workspace = -20,-20,0,20,20,10
//! # waypoints = 2.5,0,2;0,2.5,2;...
//! time,d0_px,d0_py,...
//! ```
//!
//! `waypoints` are the noisy positions used in this trial. After the column
//! line comes one row per control step, recorded after the step. Per drone
//! the columns are `px py pz vx vy vz qw qx qy qz thrust wx wy wz waypoint
//! passed lap collision terminated`, prefixed `d<i>_`; `waypoint` is the
//! number of waypoints passed so far and the last four are 0/1 flags.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Quat, Vec3};
use crate::env::{clip_action, Action, CollisionTracker, EnvConfig, RaceEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::policy::{Checkpoint, PolicyParams};
use crate::seeding::derive_seed;
use crate::track::TrackSpec;

const TRIAL_STREAM: u64 = 20;
pub const TRAJECTORY_MAGIC: &str = "# swarmrace trajectory v1";
const DRONE_FIELDS: [&str; 19] = [
    "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "thrust", "wx", "wy", "wz", "waypoint", "passed",
    "lap", "collision", "terminated",
];

/// State of one drone at one recorded step.
#[derive(Clone, Debug, PartialEq)]
pub struct DroneSample {
    pub p: [f64; 3],
    pub v: [f64; 3],
    pub q: [f64; 4],
    pub thrust: f64,
    pub omega: [f64; 3],
    pub waypoint: usize,
    pub passed: bool,
    pub lap: bool,
    pub collision: bool,
    pub terminated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub drones: Vec<DroneSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryMeta {
    pub track: String,
    pub n_drones: usize,
    pub laps: usize,
    pub d_w: f64,
    pub dt: f64,
    pub seed: u64,
    pub workspace: [f64; 6],
    pub waypoints: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub rows: Vec<TrajectoryRow>,
}

/// Outcome of one evaluation trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    /// Per-drone lap times, s (at most `laps` each).
    pub lap_times: Vec<Vec<f64>>,
    pub collisions: usize,
    /// Every drone completed the lap target.
    pub success: bool,
    /// Smallest distance between any two drones over the trial; infinite for one drone.
    pub min_distance: f64,
    pub max_speed: f64,
    pub max_body_rate: f64,
    pub steps: usize,
    pub trajectory: Option<Trajectory>,
}

impl TrialResult {
    /// Mean over all recorded lap times of all drones; NaN when there are none.
    pub fn mean_lap_time(&self) -> f64 {
        let all: Vec<f64> = self.lap_times.iter().flatten().copied().collect();
        if all.is_empty() {
            f64::NAN
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        }
    }

    pub fn record(&self, trial: usize) -> TrialRecord {
        TrialRecord {
            trial,
            seed: self.seed,
            success: self.success,
            min_laps: self.lap_times.iter().map(Vec::len).min().unwrap_or(0),
            mean_lap_time: self.mean_lap_time(),
            collisions: self.collisions,
            min_distance: self.min_distance,
            max_speed: self.max_speed,
            max_body_rate: self.max_body_rate,
            steps: self.steps,
            lap_times: self
                .lap_times
                .iter()
                .map(|d| d.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

/// Flat per-trial record, one CSV row per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub min_laps: usize,
    pub mean_lap_time: f64,
    pub collisions: usize,
    pub min_distance: f64,
    pub max_speed: f64,
    pub max_body_rate: f64,
    pub steps: usize,
    /// Lap times per drone: drones separated by `;`, laps by spaces.
    pub lap_times: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub trials: usize,
    pub n_drones: usize,
    pub successes: usize,
    /// Percent of trials in which every drone completed the lap target.
    pub success_rate: f64,
    pub collisions: usize,
    /// Mean collision events per drone per trial, percent.
    pub collision_rate: f64,
    /// Mean of per-trial mean lap times over successful trials, s.
    pub lap_time_mean: f64,
    /// Population standard deviation matching `lap_time_mean`, s.
    pub lap_time_std: f64,
    pub lap_time_scope: String,
    pub median_min_distance: f64,
    pub mean_max_speed: f64,
    pub action_selection: String,
}

impl EvalSummary {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("summary is always representable")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            line: e.span().map(|sp| s[..sp.start].lines().count().max(1)).unwrap_or(0),
            reason: e.message().to_string(),
        })
    }
}

/// Aggregates per-trial records.
pub fn summarize(records: &[TrialRecord], n_drones: usize) -> EvalSummary {
    let trials = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let collisions: usize = records.iter().map(|r| r.collisions).sum();
    let pct = |num: f64, den: f64| if den > 0.0 { num / den * 100.0 } else { f64::NAN };
    let laps: Vec<f64> = records
        .iter()
        .filter(|r| r.success && r.mean_lap_time.is_finite())
        .map(|r| r.mean_lap_time)
        .collect();
    let (lap_mean, lap_std) = if laps.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = laps.iter().sum::<f64>() / laps.len() as f64;
        let v = laps.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / laps.len() as f64;
        (m, v.sqrt())
    };
    let mut dists: Vec<f64> = records.iter().map(|r| r.min_distance).collect();
    dists.sort_by(f64::total_cmp);
    let median = match dists.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => dists[n / 2],
        n => 0.5 * (dists[n / 2 - 1] + dists[n / 2]),
    };
    EvalSummary {
        trials,
        n_drones,
        successes,
        success_rate: pct(successes as f64, trials as f64),
        collisions,
        collision_rate: pct(collisions as f64, (n_drones * trials) as f64),
        lap_time_mean: lap_mean,
        lap_time_std: lap_std,
        lap_time_scope: "successful trials only".into(),
        median_min_distance: median,
        mean_max_speed: if trials > 0 {
            records.iter().map(|r| r.max_speed).sum::<f64>() / trials as f64
        } else {
            f64::NAN
        },
        action_selection: "deterministic policy mean".into(),
    }
}

fn check_compatible(params: &PolicyParams, cfg: &EnvConfig) -> Result<()> {
    let want = cfg.layout().len();
    if params.obs_len() != want {
        return Err(Error::config(format!(
            "policy expects observations of length {} but n_drones = {}, window = {} give {}",
            params.obs_len(),
            cfg.n_drones,
            cfg.window,
            want
        )));
    }
    Ok(())
}

/// Checks that a checkpoint was trained for the drone count and window of `cfg`.
pub fn check_checkpoint(ckpt: &Checkpoint, cfg: &EnvConfig) -> Result<()> {
    if ckpt.n_drones != cfg.n_drones || ckpt.window != cfg.window {
        return Err(Error::config(format!(
            "checkpoint was trained with n_drones = {}, window = {} but the evaluation uses n_drones = {}, window = {}",
            ckpt.n_drones, ckpt.window, cfg.n_drones, cfg.window
        )));
    }
    check_compatible(&ckpt.params, cfg)
}

/// Runs one deterministic-policy trial.
pub fn run_trial(params: &PolicyParams, track: &TrackSpec, cfg: &EnvConfig, seed: u64, record: bool) -> Result<TrialResult> {
    let n = cfg.n_drones;
    if track.laps == 0 {
        return Ok(TrialResult {
            seed,
            lap_times: vec![Vec::new(); n],
            collisions: 0,
            success: true,
            min_distance: f64::INFINITY,
            max_speed: 0.0,
            max_body_rate: 0.0,
            steps: 0,
            trajectory: None,
        });
    }
    check_compatible(params, cfg)?;
    let mut env = RaceEnv::new(track.clone(), cfg.clone())?;
    let mut obs = env.reset(seed)?;
    let obs_len = cfg.layout().len();
    let dt = cfg.dt_control;
    let n_wp = track.waypoints.len();

    let mut lap_times = vec![Vec::new(); n];
    let mut last_lap = vec![0.0; n];
    let mut tracker = CollisionTracker::new(n);
    let mut min_distance = f64::INFINITY;
    let (mut max_speed, mut max_body_rate) = (0.0f64, 0.0f64);
    let mut trajectory = record.then(|| Trajectory {
        meta: TrajectoryMeta {
            track: track.name.clone(),
            n_drones: n,
            laps: track.laps,
            d_w: track.d_w,
            dt,
            seed,
            workspace: [
                track.workspace.min[0],
                track.workspace.min[1],
                track.workspace.min[2],
                track.workspace.max[0],
                track.workspace.max[1],
                track.workspace.max[2],
            ],
            waypoints: env.state().waypoints.iter().map(|w| [w.x, w.y, w.z]).collect(),
        },
        rows: Vec::new(),
    });
    let update_min_distance = |env: &RaceEnv, min_distance: &mut f64| {
        let d = &env.state().drones;
        for i in 0..n {
            for j in i + 1..n {
                *min_distance = min_distance.min((d[i].state.p - d[j].state.p).norm());
            }
        }
    };
    update_min_distance(&env, &mut min_distance);

    let mut flat = vec![0.0; n * obs_len];
    loop {
        for (i, o) in obs.iter().enumerate() {
            flat[i * obs_len..(i + 1) * obs_len].copy_from_slice(o);
        }
        let means = params.actor_mean_batch(&flat, n)?;
        let actions: Vec<Action> = (0..n)
            .map(|i| {
                let mut a = [0.0; ACTION_DIM];
                a.copy_from_slice(&means[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
                clip_action(&a)
            })
            .collect();
        let out = env.step(&actions)?;
        let t_now = env.state().t as f64 * dt;
        tracker.observe(&out.info);
        update_min_distance(&env, &mut min_distance);
        for (i, d) in env.state().drones.iter().enumerate() {
            if out.info[i].lap_completed && lap_times[i].len() < track.laps {
                lap_times[i].push(t_now - last_lap[i]);
                last_lap[i] = t_now;
            }
            if !d.terminated {
                max_speed = max_speed.max(d.state.v.norm());
                max_body_rate = max_body_rate.max(d.state.omega.norm());
            }
        }
        if let Some(tr) = trajectory.as_mut() {
            let st = env.state();
            tr.rows.push(TrajectoryRow {
                time: t_now,
                drones: st
                    .drones
                    .iter()
                    .enumerate()
                    .map(|(i, d)| DroneSample {
                        p: d.state.p.into(),
                        v: d.state.v.into(),
                        q: d.state.q.to_array(),
                        thrust: d.state.thrust,
                        omega: d.state.omega.into(),
                        waypoint: d.progress,
                        passed: out.info[i].waypoint_passed,
                        lap: out.info[i].lap_completed,
                        collision: !out.info[i].collision_partners.is_empty(),
                        terminated: d.terminated,
                    })
                    .collect(),
            });
        }
        obs = out.obs;
        if out.done {
            break;
        }
    }
    let success = env
        .state()
        .drones
        .iter()
        .all(|d| d.laps_completed(n_wp) >= track.laps);
    Ok(TrialResult {
        seed,
        lap_times,
        collisions: tracker.events,
        success,
        min_distance,
        max_speed,
        max_body_rate,
        steps: env.state().t,
        trajectory,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub trials: usize,
    pub base_seed: u64,
    pub workers: usize,
    /// Keep full trajectories of the first this many trials.
    pub record_trajectories: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub summary: EvalSummary,
    pub records: Vec<TrialRecord>,
    pub trajectories: Vec<Trajectory>,
}

/// Seed of trial `k` under `base_seed`.
pub fn trial_seed(base_seed: u64, k: usize) -> u64 {
    derive_seed(base_seed, TRIAL_STREAM, k as u64)
}

/// Runs `opts.trials` independent trials and aggregates them.
pub fn evaluate(params: &PolicyParams, track: &TrackSpec, cfg: &EnvConfig, opts: &EvalOptions) -> Result<EvalOutput> {
    if opts.trials == 0 {
        return Err(Error::config("trials: must be >= 1"));
    }
    let run = |k: usize| run_trial(params, track, cfg, trial_seed(opts.base_seed, k), k < opts.record_trajectories);
    let results: Vec<TrialResult> = if opts.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(|| (0..opts.trials).into_par_iter().map(run).collect::<Result<_>>())?
    } else {
        (0..opts.trials).map(run).collect::<Result<_>>()?
    };
    let records: Vec<TrialRecord> = results.iter().enumerate().map(|(k, r)| r.record(k)).collect();
    let trajectories = results.into_iter().filter_map(|r| r.trajectory).collect();
    Ok(EvalOutput {
        summary: summarize(&records, cfg.n_drones),
        records,
        trajectories,
    })
}

pub fn write_records(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|e: csv::Error| Error::Parse {
                line: k + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Column names of a trajectory file with `n_drones` drones.
pub fn trajectory_columns(n_drones: usize) -> Vec<String> {
    let mut cols = vec!["time".to_string()];
    for i in 0..n_drones {
        cols.extend(DRONE_FIELDS.iter().map(|f| format!("d{i}_{f}")));
    }
    cols
}

impl Trajectory {
    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "{TRAJECTORY_MAGIC}");
        let _ = writeln!(s, "# track = {}", m.track);
        let _ = writeln!(s, "# n_drones = {}", m.n_drones);
        let _ = writeln!(s, "# laps = {}", m.laps);
        let _ = writeln!(s, "# d_w = {}", m.d_w);
        let _ = writeln!(s, "# dt = {}", m.dt);
        let _ = writeln!(s, "# seed = {}", m.seed);
        let _ = writeln!(s, "# workspace = {}", join(&m.workspace));
        let wps: Vec<String> = m.waypoints.iter().map(|w| join(w)).collect();
        let _ = writeln!(s, "# waypoints = {}", wps.join(";"));
        let _ = writeln!(s, "{}", trajectory_columns(m.n_drones).join(","));
        for row in &self.rows {
            s.push_str(&row.time.to_string());
            for d in &row.drones {
                for x in d.p.iter().chain(&d.v).chain(&d.q) {
                    let _ = write!(s, ",{x}");
                }
                let _ = write!(s, ",{}", d.thrust);
                for x in &d.omega {
                    let _ = write!(s, ",{x}");
                }
                let _ = write!(
                    s,
                    ",{},{},{},{},{}",
                    d.waypoint,
                    flag(d.passed),
                    flag(d.lap),
                    flag(d.collision),
                    flag(d.terminated)
                );
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse { line, reason };
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == TRAJECTORY_MAGIC => {}
            Some((k, l)) => return Err(err(k, format!("expected `{TRAJECTORY_MAGIC}`, found `{l}`"))),
            None => return Err(err(1, "empty file".into())),
        }

        let mut fields: Vec<(usize, String, String)> = Vec::new();
        let mut column_line = None;
        for (k, l) in lines.by_ref() {
            if let Some(rest) = l.strip_prefix('#') {
                let (key, value) = rest
                    .split_once('=')
                    .ok_or_else(|| err(k, format!("header line is not `# key = value`: `{l}`")))?;
                fields.push((k, key.trim().to_string(), value.trim().to_string()));
            } else {
                column_line = Some((k, l));
                break;
            }
        }
        let get = |key: &str| -> Result<(usize, &str)> {
            fields
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(line, _, v)| (*line, v.as_str()))
                .ok_or_else(|| err(fields.last().map_or(1, |f| f.0), format!("header is missing `{key}`")))
        };
        fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("`{key}`: cannot parse `{v}`"),
            })
        }
        fn floats(line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',').map(|x| num(line, key, x.trim())).collect()
        }

        let (l, v) = get("track")?;
        let track = v.to_string();
        let _ = l;
        let (l, v) = get("n_drones")?;
        let n_drones: usize = num(l, "n_drones", v)?;
        let (l, v) = get("laps")?;
        let laps = num(l, "laps", v)?;
        let (l, v) = get("d_w")?;
        let d_w = num(l, "d_w", v)?;
        let (l, v) = get("dt")?;
        let dt = num(l, "dt", v)?;
        let (l, v) = get("seed")?;
        let seed = num(l, "seed", v)?;
        let (l, v) = get("workspace")?;
        let ws = floats(l, "workspace", v)?;
        let workspace: [f64; 6] = ws
            .try_into()
            .map_err(|_| err(l, "`workspace` needs 6 numbers".into()))?;
        let (l, v) = get("waypoints")?;
        let mut waypoints = Vec::new();
        if !v.is_empty() {
            for w in v.split(';') {
                let xs = floats(l, "waypoints", w)?;
                let w: [f64; 3] = xs
                    .try_into()
                    .map_err(|_| err(l, "each waypoint needs 3 numbers".into()))?;
                waypoints.push(w);
            }
        }

        let (k, cols) = column_line.ok_or_else(|| err(fields.len() + 2, "missing column line".into()))?;
        let expected = trajectory_columns(n_drones);
        let got: Vec<&str> = cols.split(',').map(str::trim).collect();
        if got != expected {
            let missing = expected.iter().find(|c| !got.contains(&c.as_str()));
            return Err(err(
                k,
                match missing {
                    Some(c) => format!("column `{c}` is missing"),
                    None => "columns do not match the documented order".into(),
                },
            ));
        }

        let mut rows = Vec::new();
        for (k, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != expected.len() {
                return Err(err(k, format!("expected {} fields, found {}", expected.len(), cells.len())));
            }
            let f = |c: usize| -> Result<f64> { num(k, &expected[c], cells[c]) };
            let b = |c: usize| -> Result<bool> {
                match cells[c] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(err(k, format!("`{}`: expected 0 or 1, found `{other}`", expected[c]))),
                }
            };
            let mut drones = Vec::with_capacity(n_drones);
            for i in 0..n_drones {
                let o = 1 + i * DRONE_FIELDS.len();
                drones.push(DroneSample {
                    p: [f(o)?, f(o + 1)?, f(o + 2)?],
                    v: [f(o + 3)?, f(o + 4)?, f(o + 5)?],
                    q: [f(o + 6)?, f(o + 7)?, f(o + 8)?, f(o + 9)?],
                    thrust: f(o + 10)?,
                    omega: [f(o + 11)?, f(o + 12)?, f(o + 13)?],
                    waypoint: num(k, &expected[o + 14], cells[o + 14])?,
                    passed: b(o + 15)?,
                    lap: b(o + 16)?,
                    collision: b(o + 17)?,
                    terminated: b(o + 18)?,
                });
            }
            rows.push(TrajectoryRow { time: f(0)?, drones });
        }
        Ok(Trajectory {
            meta: TrajectoryMeta {
                track,
                n_drones,
                laps,
                d_w,
                dt,
                seed,
                workspace,
                waypoints,
            },
            rows,
        })
    }

    /// Positions of drone `i` over time.
    pub fn positions(&self, i: usize) -> Vec<Vec3> {
        self.rows.iter().map(|r| Vec3::from(r.drones[i].p)).collect()
    }

    /// Attitude of drone `i` at row `k`.
    pub fn attitude(&self, k: usize, i: usize) -> Quat {
        Quat::from_array(self.rows[k].drones[i].q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(success: bool, collisions: usize, lap: f64) -> TrialRecord {
        TrialRecord {
            trial: 0,
            seed: 0,
            success,
            min_laps: 3,
            mean_lap_time: lap,
            collisions,
            min_distance: 1.0,
            max_speed: 5.0,
            max_body_rate: 1.0,
            steps: 100,
            lap_times: String::new(),
        }
    }

    #[test]
    fn rates_follow_the_definitions() {
        let mut recs: Vec<TrialRecord> = (0..1000).map(|k| record(k < 832, 0, 4.0)).collect();
        for r in recs.iter_mut().take(4) {
            r.collisions = 1;
        }
        let s = summarize(&recs, 2);
        assert_eq!(s.success_rate, 83.2);
        assert_eq!(s.collision_rate, 0.2);
        assert_eq!(s.lap_time_mean, 4.0);
        assert_eq!(s.lap_time_std, 0.0);
    }

    #[test]
    fn failed_trials_are_excluded_from_lap_times() {
        let recs = vec![record(true, 0, 4.0), record(true, 0, 6.0), record(false, 0, 100.0)];
        let s = summarize(&recs, 1);
        assert_eq!(s.lap_time_mean, 5.0);
        assert_eq!(s.lap_time_std, 1.0);
    }

    #[test]
    fn zero_lap_track_succeeds_immediately() {
        let cfg = EnvConfig::default();
        let params = PolicyParams::zeros(cfg.layout().len(), 8);
        let mut track = TrackSpec::builtin("loop").unwrap();
        track.laps = 0;
        let r = run_trial(&params, &track, &cfg, 1, false).unwrap();
        assert!(r.success);
        assert!(r.lap_times.iter().all(Vec::is_empty));
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let cfg = EnvConfig::default();
        let params = PolicyParams::zeros(cfg.layout().len() + 7, 8);
        let track = TrackSpec::builtin("loop").unwrap();
        let e = run_trial(&params, &track, &cfg, 1, false).unwrap_err();
        assert!(e.to_string().contains("n_drones"));
    }

    fn tiny_trajectory() -> Trajectory {
        let sample = |x: f64| DroneSample {
            p: [x, 0.1 + x / 3.0, 2.0],
            v: [1.0 / 3.0, 0.0, -0.0],
            q: [1.0, 0.0, 0.0, 0.0],
            thrust: 9.81,
            omega: [0.0, 0.1, 0.2],
            waypoint: 1,
            passed: true,
            lap: false,
            collision: false,
            terminated: false,
        };
        Trajectory {
            meta: TrajectoryMeta {
                track: "t".into(),
                n_drones: 2,
                laps: 1,
                d_w: 1.0,
                dt: 0.01,
                seed: 9,
                workspace: [-1.0, -1.0, 0.0, 1.0, 1.0, 3.0],
                waypoints: vec![[0.5, 0.0, 2.0], [0.0, 0.5, 2.0]],
            },
            rows: (1..4)
                .map(|k| TrajectoryRow {
                    time: k as f64 * 0.01,
                    drones: vec![sample(k as f64 * 0.1), sample(-0.7)],
                })
                .collect(),
        }
    }

    #[test]
    fn trajectory_round_trips_exactly() {
        let t = tiny_trajectory();
        let back = Trajectory::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_header_reports_its_line() {
        let text = tiny_trajectory().to_text().replace("# laps = 1", "# laps = one");
        match Trajectory::parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let text = tiny_trajectory().to_text().replace("# seed = 9", "# seed 9");
        match Trajectory::parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text = tiny_trajectory().to_text().replace(",d1_thrust", "");
        let e = Trajectory::parse(&text).unwrap_err();
        assert!(e.to_string().contains("d1_thrust"), "{e}");
    }
}
