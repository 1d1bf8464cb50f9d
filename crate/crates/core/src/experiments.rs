//! Closed-loop experiments: episode runner, hover and tracking checks and the
//! five-task regression.

use std::path::Path;

use serde::Serialize;

use crate::config::Config;
use crate::control::ControlMode;
use crate::env::VecEnv;
use crate::error::Result;
use crate::pilot::CascadePilot;
use crate::policy::{mlp_forward_batch, PolicyWeights};
use crate::tasks::{lemniscate_lap_length, EpisodeOutcome, TaskKind};
use crate::trace::{read_trace, time_monotone, write_trace, TraceRecord};

/// Hover tolerance around the target, m.
pub const HOVER_TOLERANCE: f64 = 0.1;
/// Tracking bound on MED relative to the 3 m half-span.
pub const TRACK_RELATIVE_BOUND: f64 = 0.05;
pub const LEMNISCATE_HALF_SPAN: f64 = 3.0;

/// Source of actions for [`run_episodes`].
#[derive(Debug, Clone)]
pub enum Driver {
    Pilot,
    Policy(PolicyWeights),
}

/// Outcome counted as success for each task.
pub fn success_outcome(task: TaskKind) -> EpisodeOutcome {
    match task {
        TaskKind::Hovering | TaskKind::Tracking | TaskKind::Avoidance => EpisodeOutcome::TimedOut,
        TaskKind::TargetHitting => EpisodeOutcome::Hit,
        TaskKind::Planning => EpisodeOutcome::GoalReached,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub task: String,
    pub mode: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over all recorded steps of the distance to the task reference, m.
    pub mean_position_error: f64,
    /// Mean Euclidean distance to the time-aligned reference (tracking only), m.
    pub med: Option<f64>,
    pub mean_step_reward: f64,
    pub steps: usize,
}

/// Steps `env` until `episodes` episodes have finished, recording every step.
pub fn run_episodes(env: &mut VecEnv, driver: &Driver, episodes: usize) -> Result<(Vec<TraceRecord>, RunSummary)> {
    let n = env.n_envs();
    let task = env.config().sim.task;
    let mut pilot = CascadePilot::new(n);
    let mut records = Vec::new();
    let (mut finished, mut successes, mut steps) = (0, 0, 0);
    let (mut err_sum, mut rew_sum) = (0.0, 0.0);
    let mut obs = env.observations();
    while finished < episodes {
        let actions = match driver {
            Driver::Pilot => pilot.act(env),
            Driver::Policy(w) => mlp_forward_batch(w, &obs)?,
        };
        let r = env.step(&actions)?;
        pilot.observe_dones(&r.done);
        let act_dim = env.act_dim();
        for (i, info) in r.info.iter().enumerate() {
            records.push(TraceRecord::from_step(i, &actions[i * act_dim..(i + 1) * act_dim], info));
            err_sum += info.position_error;
            rew_sum += info.reward.total;
            steps += 1;
            if r.done[i] && finished < episodes {
                finished += 1;
                successes += (info.outcome == success_outcome(task)) as usize;
            }
        }
        obs = r.obs;
    }
    let mean_position_error = err_sum / steps.max(1) as f64;
    let summary = RunSummary {
        task: task.name().into(),
        mode: env.config().sim.mode.name().into(),
        episodes: finished,
        successes,
        success_rate: successes as f64 / finished.max(1) as f64,
        mean_position_error,
        med: (task == TaskKind::Tracking).then_some(mean_position_error),
        mean_step_reward: rew_sum / steps.max(1) as f64,
        steps,
    };
    Ok((records, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoverReport {
    /// Per episode: largest distance to the target over the final 0.5 s.
    pub settled_errors: Vec<f64>,
    pub final_errors: Vec<f64>,
    pub horizon_s: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Classical PY hover from random starts in the init cube; every episode must
/// be within tolerance over the last 0.5 s of a 5 s flight.
pub fn hover_test(base: &Config, episodes: usize, seed: u64) -> Result<HoverReport> {
    let mut cfg = base.clone();
    cfg.sim.task = TaskKind::Hovering;
    cfg.sim.mode = ControlMode::PY;
    cfg.sim.n_envs = episodes.max(1);
    cfg.sim.seed = seed;
    let horizon_s = 5.0;
    let steps = (horizon_s / cfg.sim.dt).round() as usize;
    cfg.sim.max_episode_steps = cfg.sim.max_episode_steps.max(steps + 1);
    let settle_from = steps - ((0.5 / cfg.sim.dt).round() as usize).min(steps);
    let mut env = VecEnv::new(cfg)?;
    let mut pilot = CascadePilot::new(env.n_envs());
    let mut settled = vec![0.0f64; env.n_envs()];
    let mut last = vec![0.0; env.n_envs()];
    let mut failed = vec![false; env.n_envs()];
    for k in 1..=steps {
        let a = pilot.act(&env);
        let r = env.step(&a)?;
        pilot.observe_dones(&r.done);
        for (i, info) in r.info.iter().enumerate() {
            failed[i] |= r.done[i];
            last[i] = info.position_error;
            if k >= settle_from {
                settled[i] = settled[i].max(info.position_error);
            }
        }
    }
    for (s, f) in settled.iter_mut().zip(&failed) {
        if *f {
            *s = f64::INFINITY;
        }
    }
    let passed = settled.iter().all(|e| *e <= HOVER_TOLERANCE);
    Ok(HoverReport { settled_errors: settled, final_errors: last, horizon_s, tolerance: HOVER_TOLERANCE, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackReport {
    pub speed: f64,
    pub mode: String,
    pub duration_s: f64,
    pub med: f64,
    pub relative_med: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Classical figure-eight tracking over one full lap (plus a second of margin).
pub fn track_test(base: &Config, speed: f64, mode: ControlMode, seed: u64) -> Result<TrackReport> {
    let mut cfg = base.clone();
    cfg.sim.task = TaskKind::Tracking;
    cfg.sim.mode = mode;
    cfg.sim.seed = seed;
    cfg.task.tracking.speed = speed;
    let duration_s = lemniscate_lap_length() / speed + 1.0;
    let steps = (duration_s / cfg.sim.dt).round() as usize;
    cfg.sim.max_episode_steps = cfg.sim.max_episode_steps.max(steps + 1);
    let mut env = VecEnv::new(cfg)?;
    let mut pilot = CascadePilot::new(env.n_envs());
    let (mut sum, mut count) = (0.0, 0usize);
    let mut crashed = false;
    for _ in 0..steps {
        let a = pilot.act(&env);
        let r = env.step(&a)?;
        pilot.observe_dones(&r.done);
        crashed |= r.done.iter().any(|d| *d);
        for info in &r.info {
            sum += info.position_error;
            count += 1;
        }
    }
    let med = if crashed { f64::INFINITY } else { sum / count.max(1) as f64 };
    let relative_med = med / LEMNISCATE_HALF_SPAN;
    Ok(TrackReport {
        speed,
        mode: mode.name().into(),
        duration_s,
        med,
        relative_med,
        bound: TRACK_RELATIVE_BOUND,
        passed: relative_med <= TRACK_RELATIVE_BOUND,
    })
}

/// Task and control mode pairs flown by the regression; together they
/// exercise every task and every mode.
pub const REGRESSION_CASES: [(TaskKind, ControlMode); 5] = [
    (TaskKind::Hovering, ControlMode::SRT),
    (TaskKind::Tracking, ControlMode::LV),
    (TaskKind::TargetHitting, ControlMode::PY),
    (TaskKind::Avoidance, ControlMode::CTA),
    (TaskKind::Planning, ControlMode::CTBR),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionCase {
    pub summary: RunSummary,
    pub trace_file: String,
    pub finite: bool,
    pub time_monotone: bool,
    pub round_trip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub seed: u64,
    pub cases: Vec<RegressionCase>,
    pub passed: bool,
    /// Serialized traces, in case order; not part of the JSON summary.
    #[serde(skip)]
    pub traces: Vec<Vec<u8>>,
}

/// Runs every regression case with the pilot and checks its trace. When
/// `out_dir` is given, traces are written there as `<task>.csv`.
pub fn regress(base: &Config, seed: u64, episodes: usize, out_dir: Option<&Path>) -> Result<RegressionReport> {
    let mut cases = Vec::new();
    let mut traces = Vec::new();
    for (task, mode) in REGRESSION_CASES {
        let mut cfg = base.clone();
        cfg.sim.task = task;
        cfg.sim.mode = mode;
        cfg.sim.seed = seed;
        cfg.sim.n_envs = 2;
        cfg.sim.max_episode_steps = 300;
        let mut env = VecEnv::new(cfg)?;
        let (records, summary) = run_episodes(&mut env, &Driver::Pilot, episodes)?;
        let mut bytes = Vec::new();
        write_trace(&mut bytes, &records)?;
        let round_trip = read_trace(bytes.as_slice()).map(|r| r == records).unwrap_or(false);
        let finite = records.iter().all(|r| {
            r.position.iter().chain(r.velocity.iter()).chain(r.body_rate.iter()).all(|x| x.is_finite())
                && r.attitude.is_finite()
                && r.reward.is_finite()
        });
        let trace_file = format!("{}.csv", task.name());
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(&trace_file), &bytes)?;
        }
        cases.push(RegressionCase { summary, trace_file, finite, time_monotone: time_monotone(&records), round_trip });
        traces.push(bytes);
    }
    let passed = cases.iter().all(|c| c.finite && c.time_monotone && c.round_trip);
    Ok(RegressionReport { seed, cases, passed, traces })
}
