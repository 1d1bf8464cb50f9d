//! Batched environment manager: N independent vehicles stepped in lockstep
//! with per-env random streams, domain randomization and auto-reset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::Config;
use crate::control::{run_command, Command, ControlMode, ControllerState};
use crate::dynamics::{self, hover_speed, ExternalWrench, QuadState};
use crate::error::{Error, Result};
use crate::frames::{
    depth_feature_pool, obs_dim, obs_ego, obs_hover, obs_track, ref_window, FEATURE_DIM,
};
use crate::math::{Quat, Vec3};
use crate::tasks::{
    lemniscate, lemniscate_k_for_speed, reward_avoid, reward_hit, reward_hover, reward_plan,
    reward_term_names, reward_track, spawn_balloon, spawn_projectile, termination, trajectory_playback,
    EpisodeOutcome, FullPoseTarget, PoseTarget, Reward, StepContext, TaskKind, TerminationInput,
};
use crate::world::{advance_scene, dr_depth, min_depth, raycast, scene_forest, DepthImage, Primitive, Scene};

/// Per-env random stream: the master seed selects the key, the env id the stream.
pub fn env_rng(master: u64, env_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(env_id as u64);
    rng
}

/// Maps a raw action in `[-1, 1]^d` (clamped first) to the mode's command encoding.
///
/// PY: position `a·arena_half`, yaw `a·π`. LV: velocity `a·max_vel`, yaw `a·π`.
/// CTA: thrust `(a+1)/2 · 4·f_max`, attitude `normalize(1+a1, a2, a3, a4)`.
/// CTBR: thrust as CTA, rates `a·max_rate`. SRT: throttle `(a+1)/2`.
pub fn squash_action(mode: ControlMode, raw: &[f64], cfg: &Config) -> Result<Command> {
    let dim = mode.command_dim();
    if raw.len() != dim {
        return Err(Error::Shape { expected: dim, got: raw.len() });
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::RejectedCommand("non-finite action".into()));
    }
    let a: Vec<f64> = raw.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    let pi = std::f64::consts::PI;
    let g = &cfg.controller;
    let pos_limit = cfg.task.termination.arena_half;
    let max_thrust = 4.0 * cfg.sim.vehicle.f_rotor_max;
    let unit = |x: f64| 0.5 * (x + 1.0);
    let data: Vec<f64> = match mode {
        ControlMode::PY => vec![
            a[0] * pos_limit,
            a[1] * pos_limit,
            a[2] * pos_limit,
            a[3] * pi,
        ],
        ControlMode::LV => vec![a[0] * g.max_vel, a[1] * g.max_vel, a[2] * g.max_vel, a[3] * pi],
        ControlMode::CTA => vec![unit(a[0]) * max_thrust, 1.0 + a[1], a[2], a[3], a[4]],
        ControlMode::CTBR => vec![
            unit(a[0]) * max_thrust,
            a[1] * g.max_rate,
            a[2] * g.max_rate,
            a[3] * g.max_rate,
        ],
        ControlMode::SRT => a.iter().map(|x| unit(*x)).collect(),
    };
    Command::from_slice(mode, &data)
}

/// Analytic derivatives of the figure-eight reference: `(velocity, acceleration)`.
pub fn lemniscate_derivatives(t: f64, k: f64) -> (Vec3, Vec3) {
    let h = 1e-4;
    let p0 = lemniscate(t - h, k);
    let p1 = lemniscate(t, k);
    let p2 = lemniscate(t + h, k);
    ((p2 - p0) / (2.0 * h), (p2 - 2.0 * p1 + p0) / (h * h))
}

/// Record describing one env's step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub outcome: EpisodeOutcome,
    /// Steps taken in the episode, including this one.
    pub episode_step: usize,
    pub reward: Reward,
    /// Simulated time of the episode after this step, s.
    pub t: f64,
    /// Vehicle state after this step (before any auto-reset).
    pub state: QuadState,
    /// Distance to the task's reference point after this step, m.
    pub position_error: f64,
    /// Observation at the terminal state, present when the env was reset.
    pub terminal_obs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Row-major `n_envs × obs_dim`.
    pub obs: Vec<f64>,
    pub obs_dim: usize,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub info: Vec<StepInfo>,
}

/// State of one environment. Read-only outside this module.
#[derive(Debug, Clone)]
pub struct EnvSlot {
    pub id: usize,
    pub state: QuadState,
    pub ctrl: ControllerState,
    pub rng: ChaCha8Rng,
    pub episode_step: usize,
    pub t: f64,
    pub prev_action: Vec<f64>,
    /// Hover target, avoidance hold point, balloon or planning goal.
    pub target: Vec3,
    pub wind: Vec3,
    /// Reference-timing lag for tracking, s.
    pub time_offset: f64,
    pub scene: Scene,
    pub depth: Option<DepthImage>,
    pub feature: [f64; FEATURE_DIM],
    pub x_esdf: f64,
    pub episodes_done: u64,
}

impl EnvSlot {
    fn new(id: usize, master: u64, act_dim: usize) -> Self {
        Self {
            id,
            state: QuadState::default(),
            ctrl: ControllerState::default(),
            rng: env_rng(master, id),
            episode_step: 0,
            t: 0.0,
            prev_action: vec![0.0; act_dim],
            target: Vec3::zeros(),
            wind: Vec3::zeros(),
            time_offset: 0.0,
            scene: Scene::empty(),
            depth: None,
            feature: [0.0; FEATURE_DIM],
            x_esdf: f64::INFINITY,
            episodes_done: 0,
        }
    }

    /// Reference playback time for tracking.
    pub fn t_ref(&self) -> f64 {
        trajectory_playback(self.t, self.time_offset)
    }
}

fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn normal3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("positive std-dev");
        Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    } else {
        Vec3::zeros()
    }
}

/// Shared per-batch constants.
#[derive(Debug, Clone)]
struct Shared {
    cfg: Config,
    track_k: f64,
    obs_dim: usize,
    act_dim: usize,
}

impl Shared {
    fn reset_slot(&self, slot: &mut EnvSlot) {
        let cfg = &self.cfg;
        let dr = &cfg.dr;
        let params = &cfg.sim.vehicle;
        let rng = &mut slot.rng;
        slot.ctrl.reset();
        slot.episode_step = 0;
        slot.t = 0.0;
        slot.prev_action = vec![0.0; self.act_dim];
        slot.scene = Scene::empty();
        slot.depth = None;
        slot.feature = [0.0; FEATURE_DIM];
        slot.x_esdf = f64::INFINITY;
        slot.time_offset = 0.0;

        let mut s = QuadState { rotor_speed: [hover_speed(params); 4], ..QuadState::default() };
        let perturb_attitude = |rng: &mut ChaCha8Rng, yaw: f64| {
            let a = dr.init_attitude;
            Quat::from_euler(uniform_sym(rng, a), uniform_sym(rng, a), yaw + uniform_sym(rng, a))
        };
        let perturb_velocity =
            |rng: &mut ChaCha8Rng| Vec3::from_fn(|_, _| uniform_sym(rng, dr.init_velocity));
        let cube = |rng: &mut ChaCha8Rng| Vec3::from_fn(|_, _| uniform_sym(rng, 0.5 * dr.init_cube));

        match cfg.sim.task {
            TaskKind::Hovering => {
                let t = &cfg.task.hovering;
                slot.target = Vec3::from(t.target);
                s.position = slot.target + cube(rng);
                s.attitude = perturb_attitude(rng, 0.0);
                s.velocity = perturb_velocity(rng);
            }
            TaskKind::Tracking => {
                slot.time_offset = dr.temporal_margin.draw(rng);
                let t_ref = trajectory_playback(0.0, slot.time_offset);
                s.position = lemniscate(t_ref, self.track_k);
                s.velocity = lemniscate_derivatives(t_ref, self.track_k).0;
                slot.target = s.position;
            }
            TaskKind::TargetHitting => {
                let t = &cfg.task.target_hitting;
                s.position = Vec3::from(t.start);
                s.attitude = perturb_attitude(rng, 0.0);
                s.velocity = perturb_velocity(rng);
                slot.target = spawn_balloon(rng, &t.balloon_bounds);
            }
            TaskKind::Avoidance => {
                let t = &cfg.task.avoidance;
                slot.target = Vec3::from(t.start);
                s.position = slot.target + cube(rng);
                s.attitude = perturb_attitude(rng, 0.0);
                s.velocity = perturb_velocity(rng);
                let (p0, v0) = spawn_projectile(rng, &slot.target, &t.projectile);
                let r = t.projectile.radius;
                let body = if t.projectile.cube {
                    Primitive::cuboid(p0, Vec3::new(r, r, r), 0.0)
                } else {
                    Primitive::sphere(p0, r)
                };
                slot.scene = Scene { primitives: vec![body.moving(v0)] };
            }
            TaskKind::Planning => {
                let t = &cfg.task.planning;
                s.position = Vec3::from(t.start);
                slot.target = Vec3::from(t.goal);
                let d = slot.target - s.position;
                s.attitude = perturb_attitude(rng, d.y.atan2(d.x));
                s.velocity = perturb_velocity(rng);
                slot.scene = scene_forest(rng, &t.forest, &[s.position, slot.target]);
            }
        }
        slot.wind = normal3(rng, dr.wind_sigma);
        slot.state = s;
        if cfg.sim.task.uses_depth() {
            self.refresh_depth(slot);
        }
    }

    fn refresh_depth(&self, slot: &mut EnvSlot) {
        let cam = &self.cfg.camera;
        let pose = cam.pose_for(&slot.state.position, &slot.state.attitude);
        let clean = raycast(&slot.scene, &pose, cam);
        let noise = &self.cfg.dr.depth;
        let img = if noise.enabled {
            dr_depth(&clean, &mut slot.rng, noise, cam.near, cam.max_range)
        } else {
            clean
        };
        slot.feature = depth_feature_pool(&img);
        slot.x_esdf = min_depth(&img);
        slot.depth = Some(img);
    }

    fn reference_point(&self, slot: &EnvSlot) -> Vec3 {
        match self.cfg.sim.task {
            TaskKind::Tracking => lemniscate(slot.t_ref(), self.track_k),
            _ => slot.target,
        }
    }

    fn observe(&self, slot: &EnvSlot) -> Vec<f64> {
        let s = &slot.state;
        let obs = match self.cfg.sim.task {
            TaskKind::Hovering | TaskKind::TargetHitting => {
                let target = QuadState { position: slot.target, ..QuadState::default() };
                obs_hover(s, &target)
            }
            TaskKind::Tracking => {
                let k = self.track_k;
                let window = ref_window(|t| lemniscate(t, k), slot.t_ref(), self.cfg.task.tracking.ref_spacing);
                obs_track(s, &window)
            }
            task => obs_ego(s, &slot.target, &slot.prev_action, &slot.feature, task),
        };
        obs.values
    }

    /// One env step; returns `(obs, reward, done, info)`.
    fn step_slot(&self, slot: &mut EnvSlot, raw: &[f64]) -> (Vec<f64>, f64, bool, StepInfo) {
        let cfg = &self.cfg;
        let params = &cfg.sim.vehicle;
        let dt = cfg.sim.dt;
        let task = cfg.sim.task;
        let mode = cfg.sim.mode;
        let prev_pos = slot.state.position;
        slot.episode_step += 1;

        let stepped = squash_action(mode, raw, cfg).and_then(|cmd| {
            let act = run_command(&cmd, &slot.state, &mut slot.ctrl, &cfg.controller, params, dt);
            let force = slot.wind + normal3(&mut slot.rng, cfg.dr.wind_jitter_sigma);
            let next = dynamics::step(&slot.state, &act.omega_cmd, params, &ExternalWrench::force(force), dt)?;
            Ok((act, next))
        });

        let (outcome, reward) = match stepped {
            Err(_) => {
                let terms = reward_term_names(task).iter().map(|n| (*n, 0.0)).collect();
                (EpisodeOutcome::Crashed, Reward { total: 0.0, terms })
            }
            Ok((act, next)) => {
                slot.state = next;
                slot.t += dt;
                if !slot.scene.is_empty() {
                    advance_scene(&mut slot.scene, dt, &params.gravity_vec());
                }
                if task.uses_depth() && slot.episode_step % cfg.sim.sensor_decimation == 0 {
                    self.refresh_depth(slot);
                }
                let term_cfg = &cfg.task.termination;
                let collided = !slot.scene.is_empty() && slot.scene.sdf(&slot.state.position) < term_cfg.body_radius;
                let crash_distance = match task {
                    TaskKind::Avoidance => cfg.task.avoidance.crash_distance,
                    TaskKind::Planning => cfg.task.planning.rewards.crash_distance,
                    _ => 0.0,
                };
                let input = TerminationInput {
                    x_esdf: task.uses_depth().then_some(slot.x_esdf),
                    crash_distance,
                    collided,
                    target: matches!(task, TaskKind::TargetHitting | TaskKind::Planning).then_some(slot.target),
                    step: slot.episode_step,
                    max_steps: cfg.sim.max_episode_steps,
                };
                let outcome = termination(&slot.state, task, &input, term_cfg);

                let rotor_norm = slot.state.rotor_speed.map(|w| w / params.omega_max);
                let ctx = StepContext {
                    state: &slot.state,
                    action: raw,
                    prev_action: &slot.prev_action,
                    rotor_norm,
                    collective: act.collective(),
                    mode,
                };
                let reward = match task {
                    TaskKind::Hovering => {
                        let t = &cfg.task.hovering;
                        reward_hover(&ctx, &PoseTarget { position: slot.target, yaw: t.yaw }, &t.rewards)
                    }
                    TaskKind::Tracking => {
                        reward_track(&ctx, &self.reference_point(slot), 0.0, &cfg.task.tracking.rewards)
                    }
                    TaskKind::TargetHitting => reward_hit(
                        &ctx,
                        &prev_pos,
                        &slot.target,
                        &cfg.task.target_hitting.rewards,
                        outcome == EpisodeOutcome::Hit,
                    ),
                    TaskKind::Avoidance => reward_avoid(
                        &ctx,
                        &FullPoseTarget { position: slot.target, euler: [0.0; 3] },
                        &cfg.task.avoidance.rewards,
                        outcome != EpisodeOutcome::Crashed,
                    ),
                    TaskKind::Planning => reward_plan(
                        &ctx,
                        &prev_pos,
                        &slot.target,
                        slot.x_esdf.min(cfg.camera.max_range),
                        &cfg.task.planning.rewards,
                        outcome == EpisodeOutcome::GoalReached,
                    ),
                };
                (outcome, reward)
            }
        };
        slot.prev_action = raw.to_vec();

        let done = outcome.is_terminal();
        let mut info = StepInfo {
            outcome,
            episode_step: slot.episode_step,
            reward,
            t: slot.t,
            state: slot.state,
            position_error: (self.reference_point(slot) - slot.state.position).norm(),
            terminal_obs: None,
        };
        let rew = info.reward.total;
        if done {
            info.terminal_obs = Some(self.observe(slot));
            slot.episodes_done += 1;
            self.reset_slot(slot);
        }
        (self.observe(slot), rew, done, info)
    }
}

/// Vectorized environment.
#[derive(Debug, Clone)]
pub struct VecEnv {
    shared: Shared,
    envs: Vec<EnvSlot>,
}

impl VecEnv {
    /// Validates `cfg`, seeds every env from `cfg.sim.seed` and resets all envs.
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let act_dim = cfg.sim.mode.command_dim();
        let shared = Shared {
            track_k: lemniscate_k_for_speed(cfg.task.tracking.speed),
            obs_dim: obs_dim(cfg.sim.task),
            act_dim,
            cfg,
        };
        let mut env = Self { envs: Vec::new(), shared };
        env.seed(env.shared.cfg.sim.seed);
        Ok(env)
    }

    /// Re-derives every env's random stream from `master` and resets all envs.
    pub fn seed(&mut self, master: u64) {
        self.shared.cfg.sim.seed = master;
        let act_dim = self.shared.act_dim;
        self.envs = (0..self.shared.cfg.sim.n_envs).map(|i| EnvSlot::new(i, master, act_dim)).collect();
        let shared = &self.shared;
        self.envs.par_iter_mut().for_each(|slot| shared.reset_slot(slot));
    }

    pub fn config(&self) -> &Config {
        &self.shared.cfg
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.shared.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.shared.act_dim
    }

    /// Rate of the tracking reference, rad/s of lemniscate parameter.
    pub fn track_k(&self) -> f64 {
        self.shared.track_k
    }

    pub fn envs(&self) -> &[EnvSlot] {
        &self.envs
    }

    /// Current reference point of env `id` (tracking: playback reference; others: task target).
    pub fn reference_point(&self, id: usize) -> Vec3 {
        self.shared.reference_point(&self.envs[id])
    }

    /// Resets the listed envs and returns their observations, row-major in `ids` order.
    pub fn reset(&mut self, ids: &[usize]) -> Result<Vec<f64>> {
        let n = self.envs.len();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("env id {bad} out of range 0..{n}")));
        }
        let mut seen = vec![false; n];
        for &i in ids {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("duplicate env id {i}")));
            }
        }
        let shared = &self.shared;
        self.envs
            .par_iter_mut()
            .filter(|s| seen[s.id])
            .for_each(|slot| shared.reset_slot(slot));
        Ok(ids.iter().flat_map(|&i| shared.observe(&self.envs[i])).collect())
    }

    pub fn reset_all(&mut self) -> Vec<f64> {
        let ids: Vec<usize> = (0..self.envs.len()).collect();
        self.reset(&ids).expect("all ids valid")
    }

    /// Current observations, row-major `n_envs × obs_dim`.
    pub fn observations(&self) -> Vec<f64> {
        self.envs.iter().flat_map(|s| self.shared.observe(s)).collect()
    }

    /// Steps every env with its row of `actions` (row-major `n_envs × act_dim`).
    pub fn step(&mut self, actions: &[f64]) -> Result<StepResult> {
        let act_dim = self.shared.act_dim;
        let expected = self.envs.len() * act_dim;
        if actions.len() != expected {
            return Err(Error::Shape { expected, got: actions.len() });
        }
        let shared = &self.shared;
        let rows: Vec<_> = self
            .envs
            .par_iter_mut()
            .zip(actions.par_chunks(act_dim))
            .map(|(slot, a)| shared.step_slot(slot, a))
            .collect();
        let mut out = StepResult {
            obs: Vec::with_capacity(self.envs.len() * shared.obs_dim),
            obs_dim: shared.obs_dim,
            reward: Vec::with_capacity(rows.len()),
            done: Vec::with_capacity(rows.len()),
            info: Vec::with_capacity(rows.len()),
        };
        for (obs, r, d, info) in rows {
            out.obs.extend(obs);
            out.reward.push(r);
            out.done.push(d);
            out.info.push(info);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DrConfig;

    fn cfg(task: TaskKind, mode: ControlMode, n: usize) -> Config {
        let mut c = Config::for_task(task, mode);
        c.sim.n_envs = n;
        c
    }

    #[test]
    fn shapes_follow_config() {
        for task in TaskKind::ALL {
            for mode in ControlMode::ALL {
                let mut env = VecEnv::new(cfg(task, mode, 3)).unwrap();
                assert_eq!(env.observations().len(), 3 * obs_dim(task));
                let r = env.step(&vec![0.0; 3 * mode.command_dim()]).unwrap();
                assert_eq!(r.obs.len(), 3 * obs_dim(task));
                assert_eq!((r.reward.len(), r.done.len(), r.info.len()), (3, 3, 3));
                assert!(r.reward.iter().all(|x| x.is_finite()));
                assert!(env.step(&vec![0.0; 3 * mode.command_dim() + 1]).is_err());
            }
        }
    }

    #[test]
    fn dr_off_gives_nominal_start() {
        let mut c = cfg(TaskKind::Hovering, ControlMode::PY, 4);
        c.dr = DrConfig::off();
        let env = VecEnv::new(c).unwrap();
        for s in env.envs() {
            assert_eq!(s.state.position, Vec3::new(0.0, 0.0, 1.0));
            assert_eq!(s.state.attitude, Quat::IDENTITY);
            assert_eq!(s.state.velocity, Vec3::zeros());
            assert_eq!(s.wind, Vec3::zeros());
        }
    }

    #[test]
    fn tracking_starts_on_reference() {
        let c = cfg(TaskKind::Tracking, ControlMode::LV, 6);
        let env = VecEnv::new(c).unwrap();
        for s in env.envs() {
            let expected = lemniscate(trajectory_playback(0.0, s.time_offset), env.track_k());
            assert_eq!(s.state.position, expected);
        }
    }

    #[test]
    fn reset_position_mean_matches_cube_center() {
        let mut c = cfg(TaskKind::Hovering, ControlMode::PY, 100);
        c.dr.init_cube = 2.0;
        let mut env = VecEnv::new(c).unwrap();
        let mut sum = Vec3::zeros();
        let n = 10_000;
        for _ in 0..n / 100 {
            env.reset_all();
            for s in env.envs() {
                sum += s.state.position;
            }
        }
        let mean = sum / n as f64;
        // Uniform on [-1, 1]: std-dev 1/sqrt(3).
        let se = (1.0 / 3.0f64).sqrt() / (n as f64).sqrt();
        let center = Vec3::new(0.0, 0.0, 1.0);
        for i in 0..3 {
            assert!((mean[i] - center[i]).abs() < 3.0 * se, "axis {i}: {}", mean[i]);
        }
    }

    #[test]
    fn zero_velocity_holds_hover() {
        let mut c = cfg(TaskKind::Hovering, ControlMode::LV, 2);
        c.dr = DrConfig::off();
        let mut env = VecEnv::new(c).unwrap();
        let start: Vec<Vec3> = env.envs().iter().map(|s| s.state.position).collect();
        for _ in 0..100 {
            env.step(&[0.0; 8]).unwrap();
        }
        for (s, p0) in env.envs().iter().zip(start) {
            assert!((s.state.position - p0).norm() < 0.01);
        }
    }

    #[test]
    fn auto_reset_matches_fresh_reset() {
        let mut c = cfg(TaskKind::Hovering, ControlMode::PY, 3);
        c.sim.max_episode_steps = 5;
        c.dr.wind_jitter_sigma = 0.0;
        let mut env = VecEnv::new(c).unwrap();
        let mut pinned = env.clone();
        let action = [0.0, 0.0, 0.2, 0.0].repeat(3);
        let mut last = None;
        for i in 0..5 {
            let r = env.step(&action).unwrap();
            assert!(r.info.iter().all(|x| x.episode_step == i + 1));
            assert_eq!(r.done.iter().all(|d| *d), i == 4);
            last = Some(r);
        }
        let last = last.unwrap();
        assert!(last.info.iter().all(|x| x.outcome == EpisodeOutcome::TimedOut));
        assert!(last.info.iter().all(|x| x.terminal_obs.is_some()));
        let fresh = pinned.reset_all();
        assert_eq!(last.obs, fresh);
        assert!(env.envs().iter().all(|s| s.episode_step == 0));
    }

    #[test]
    fn non_finite_action_crashes_only_that_env() {
        let mut env = VecEnv::new(cfg(TaskKind::Hovering, ControlMode::CTBR, 2)).unwrap();
        let r = env.step(&[f64::NAN, 0.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(r.done[0] && !r.done[1]);
        assert_eq!(r.info[0].outcome, EpisodeOutcome::Crashed);
        assert!(r.obs.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |seed: u64| {
            let mut c = cfg(TaskKind::Avoidance, ControlMode::CTBR, 3);
            c.sim.seed = seed;
            c.dr.wind_jitter_sigma = 0.02;
            let mut env = VecEnv::new(c).unwrap();
            (0..60).map(|_| env.step(&[-0.5, 0.0, 0.0, 0.0].repeat(3)).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn env_streams_differ() {
        let a: u64 = env_rng(3, 0).random();
        let b: u64 = env_rng(3, 1).random();
        assert_ne!(a, b);
    }

    #[test]
    fn independent_of_thread_count() {
        let c = cfg(TaskKind::Planning, ControlMode::LV, 4);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut env = VecEnv::new(c.clone()).unwrap();
                (0..20).map(|_| env.step(&[0.3, 0.0, 0.0, 0.0].repeat(4)).unwrap()).collect::<Vec<_>>()
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn permuting_actions_permutes_outputs() {
        let mut c = cfg(TaskKind::Hovering, ControlMode::LV, 3);
        c.dr = DrConfig::off();
        let rows = [[0.1, 0.0, 0.0, 0.0], [0.0, -0.2, 0.1, 0.0], [0.0, 0.0, 0.0, 0.3]];
        let perm = [2, 0, 1];
        let mut a = VecEnv::new(c.clone()).unwrap();
        let mut b = VecEnv::new(c).unwrap();
        let ra = a.step(&rows.concat()).unwrap();
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| rows[i]).collect();
        let rb = b.step(&permuted).unwrap();
        let d = ra.obs_dim;
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(rb.obs[j * d..(j + 1) * d], ra.obs[i * d..(i + 1) * d]);
            assert_eq!(rb.reward[j], ra.reward[i]);
        }
    }

    #[test]
    fn reset_rejects_bad_ids() {
        let mut env = VecEnv::new(cfg(TaskKind::Hovering, ControlMode::PY, 2)).unwrap();
        assert!(env.reset(&[2]).is_err());
        assert!(env.reset(&[0, 0]).is_err());
        assert_eq!(env.reset(&[1]).unwrap().len(), obs_dim(TaskKind::Hovering));
    }

    #[test]
    fn episode_length_bounded() {
        let mut c = cfg(TaskKind::Hovering, ControlMode::PY, 2);
        c.sim.max_episode_steps = 7;
        let mut env = VecEnv::new(c).unwrap();
        for _ in 0..30 {
            let r = env.step(&[0.0, 0.0, 0.2, 0.0].repeat(2)).unwrap();
            assert!(r.info.iter().all(|x| x.episode_step <= 7));
        }
    }

    #[test]
    fn depth_refreshes_on_decimation() {
        let mut env = VecEnv::new(cfg(TaskKind::Avoidance, ControlMode::LV, 1)).unwrap();
        let mut prev = env.envs()[0].depth.clone();
        for i in 1..=8 {
            env.step(&[0.0; 4]).unwrap();
            let now = env.envs()[0].depth.clone();
            if i % 4 == 0 {
                assert_ne!(now, prev, "step {i}");
            } else {
                assert_eq!(now, prev, "step {i}");
            }
            prev = now;
        }
    }
}
