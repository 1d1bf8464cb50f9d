//! Task definitions: reward functions, reference trajectory, spawners and termination.
//!
//! Every reward returns a [`Reward`] whose `terms` are the additive pieces of
//! the total (the coupled products appear as a single term), so the terms
//! always sum to `total`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::ControlMode;
use crate::dynamics::QuadState;
use crate::error::{Error, Result};
use crate::frames::{euler_zyx, world_to_ego};
use crate::math::{rotate_vec, wrap_angle, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Hovering,
    Tracking,
    TargetHitting,
    Avoidance,
    Planning,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Hovering,
        TaskKind::Tracking,
        TaskKind::TargetHitting,
        TaskKind::Avoidance,
        TaskKind::Planning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Hovering => "hovering",
            TaskKind::Tracking => "tracking",
            TaskKind::TargetHitting => "target_hitting",
            TaskKind::Avoidance => "avoidance",
            TaskKind::Planning => "planning",
        }
    }

    pub fn uses_depth(self) -> bool {
        matches!(self, TaskKind::Avoidance | TaskKind::Planning)
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == norm || (norm == "hitting" && *t == TaskKind::TargetHitting))
            .ok_or_else(|| Error::Parse(format!("unknown task `{s}`")))
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Running,
    Crashed,
    Hit,
    TimedOut,
    GoalReached,
}

impl EpisodeOutcome {
    pub fn is_terminal(self) -> bool {
        self != EpisodeOutcome::Running
    }

    pub fn code(self) -> u8 {
        match self {
            EpisodeOutcome::Running => 0,
            EpisodeOutcome::Crashed => 1,
            EpisodeOutcome::Hit => 2,
            EpisodeOutcome::TimedOut => 3,
            EpisodeOutcome::GoalReached => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EpisodeOutcome::Running => "running",
            EpisodeOutcome::Crashed => "crashed",
            EpisodeOutcome::Hit => "hit",
            EpisodeOutcome::TimedOut => "timed_out",
            EpisodeOutcome::GoalReached => "goal_reached",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            EpisodeOutcome::Running,
            EpisodeOutcome::Crashed,
            EpisodeOutcome::Hit,
            EpisodeOutcome::TimedOut,
            EpisodeOutcome::GoalReached,
        ]
        .into_iter()
        .find(|o| o.name() == s)
    }

    /// Terminal outcomes are absorbing.
    pub fn advance(self, next: EpisodeOutcome) -> EpisodeOutcome {
        if self.is_terminal() {
            self
        } else {
            next
        }
    }
}

/// Reward total plus its additive decomposition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reward {
    pub total: f64,
    pub terms: Vec<(&'static str, f64)>,
}

impl Reward {
    fn from_terms(terms: Vec<(&'static str, f64)>) -> Self {
        let total = terms.iter().map(|(_, v)| v).sum();
        Self { total, terms }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Names of the additive reward terms per task, in the order they are reported.
pub fn reward_term_names(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Hovering => &["smooth", "effort", "pos", "throttle", "pos_coupled"],
        TaskKind::Tracking => &["smooth", "effort", "dist", "throttle", "dist_coupled"],
        TaskKind::TargetHitting => &["smooth", "effort", "guidance", "ups", "heading", "hit"],
        TaskKind::Avoidance => &["smooth", "effort", "throttle", "pose", "alive", "pose_coupled"],
        TaskKind::Planning => &[
            "smooth", "effort", "throttle", "guidance", "speed", "height", "heading", "ups",
            "guidance_coupled", "goal",
        ],
    }
}

/// Per-step quantities shared by all reward functions.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub state: &'a QuadState,
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    /// Rotor speeds divided by `omega_max`.
    pub rotor_norm: [f64; 4],
    /// Normalized collective throttle actually commanded.
    pub collective: f64,
    pub mode: ControlMode,
}

impl StepContext<'_> {
    fn action_delta(&self) -> f64 {
        self.action
            .iter()
            .zip(self.prev_action.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn action_energy(&self) -> f64 {
        self.action.iter().map(|a| a * a).sum()
    }

    fn throttle_term(&self, gain: f64, hover_throttle: f64) -> f64 {
        match self.mode {
            ControlMode::PY | ControlMode::LV => 0.0,
            _ => gain * (1.0 - (hover_throttle - self.collective).abs()),
        }
    }

    fn uprightness(&self) -> f64 {
        rotate_vec(&self.state.attitude, &Vec3::z()).z
    }

    fn yaw(&self) -> f64 {
        self.state.attitude.yaw()
    }
}

fn ups(gain: f64, z_up: f64) -> f64 {
    gain * (z_up + 1.0).powi(2)
}

fn rational(gain: f64, scale: f64, err_sq: f64) -> f64 {
    gain / (1.0 + scale * err_sq)
}

fn heading_to(from: &Vec3, to: &Vec3, fallback: f64) -> f64 {
    let d = to - from;
    if d.x.hypot(d.y) > 1e-9 {
        d.y.atan2(d.x)
    } else {
        fallback
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoverRewardGains {
    pub smooth: f64,
    pub effort: f64,
    pub pos: f64,
    pub pos_scale: f64,
    pub throttle: f64,
    pub ups: f64,
    pub spin: f64,
    pub heading: f64,
    pub vel_dir: f64,
    pub hover_throttle: f64,
}

impl Default for HoverRewardGains {
    fn default() -> Self {
        Self {
            smooth: 0.2,
            effort: 0.05,
            pos: 1.0,
            pos_scale: 1.0,
            throttle: 0.2,
            ups: 0.1,
            spin: 0.2,
            heading: 0.2,
            vel_dir: 0.1,
            hover_throttle: 0.25,
        }
    }
}

/// Position and heading the hovering / tracking tasks regulate to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTarget {
    pub position: Vec3,
    pub yaw: f64,
}

pub fn reward_hover(ctx: &StepContext, target: &PoseTarget, g: &HoverRewardGains) -> Reward {
    let s = ctx.state;
    let dp = target.position - s.position;
    let smooth = g.smooth * (-ctx.action_delta()).exp();
    let effort = g.effort * ctx.rotor_norm.iter().map(|w| 1.0 - w).sum::<f64>();
    let pos = rational(g.pos, g.pos_scale, dp.norm_squared());
    let throttle = ctx.throttle_term(g.throttle, g.hover_throttle);
    let r_ups = ups(g.ups, ctx.uprightness());
    let spin = g.spin / (1.0 + s.body_rate.z * s.body_rate.z);
    let dpsi = wrap_angle(target.yaw - ctx.yaw());
    let heading = g.heading / (1.0 + dpsi * dpsi);
    let d = if dp.norm() > 1e-9 { dp.normalize() } else { Vec3::zeros() };
    let vel_dir = g.vel_dir * (-s.velocity.dot(&d) / std::f64::consts::PI).exp();
    Reward::from_terms(vec![
        ("smooth", smooth),
        ("effort", effort),
        ("pos", pos),
        ("throttle", throttle),
        ("pos_coupled", pos * (r_ups + spin + heading + vel_dir)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackRewardGains {
    pub smooth: f64,
    pub effort: f64,
    pub dist: f64,
    pub dist_scale: f64,
    pub throttle: f64,
    pub ups: f64,
    pub spin: f64,
    pub heading: f64,
    pub hover_throttle: f64,
}

impl Default for TrackRewardGains {
    fn default() -> Self {
        Self {
            smooth: 0.2,
            effort: 0.05,
            dist: 1.0,
            dist_scale: 4.0,
            throttle: 0.2,
            ups: 0.1,
            spin: 0.2,
            heading: 0.2,
            hover_throttle: 0.25,
        }
    }
}

/// `expected` is the reference point for the current (playback) time.
pub fn reward_track(ctx: &StepContext, expected: &Vec3, yaw_sp: f64, g: &TrackRewardGains) -> Reward {
    let s = ctx.state;
    let smooth = g.smooth * (-ctx.action_delta()).exp();
    let effort = g.effort * ctx.rotor_norm.iter().map(|w| 1.0 - w).sum::<f64>();
    let dist = rational(g.dist, g.dist_scale, (expected - s.position).norm_squared());
    let throttle = ctx.throttle_term(g.throttle, g.hover_throttle);
    let r_ups = ups(g.ups, ctx.uprightness());
    let spin = g.spin / (1.0 + s.body_rate.z * s.body_rate.z);
    let dpsi = wrap_angle(yaw_sp - ctx.yaw());
    let heading = g.heading / (1.0 + dpsi * dpsi);
    Reward::from_terms(vec![
        ("smooth", smooth),
        ("effort", effort),
        ("dist", dist),
        ("throttle", throttle),
        ("dist_coupled", dist * (r_ups + spin + heading)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitRewardGains {
    pub smooth: f64,
    pub effort: f64,
    pub guidance: f64,
    pub ups: f64,
    pub heading: f64,
    pub hit: f64,
}

impl Default for HitRewardGains {
    fn default() -> Self {
        Self { smooth: 0.2, effort: 0.1, guidance: 1.0, ups: 0.1, heading: 0.1, hit: 20.0 }
    }
}

/// Heading is measured against the horizontal direction to the balloon.
pub fn reward_hit(
    ctx: &StepContext,
    prev_pos: &Vec3,
    balloon: &Vec3,
    g: &HitRewardGains,
    hit: bool,
) -> Reward {
    let s = ctx.state;
    let smooth = g.smooth * (-ctx.action_delta()).exp();
    let effort = g.effort * (-ctx.action_energy()).exp();
    let guidance = g.guidance * ((balloon - prev_pos).norm() - (balloon - s.position).norm());
    let r_ups = ups(g.ups, ctx.uprightness());
    let yaw = ctx.yaw();
    let dpsi = wrap_angle(heading_to(&s.position, balloon, yaw) - yaw);
    let heading = g.heading / (1.0 + dpsi * dpsi);
    let bonus = if hit { g.hit } else { 0.0 };
    Reward::from_terms(vec![
        ("smooth", smooth),
        ("effort", effort),
        ("guidance", guidance),
        ("ups", r_ups),
        ("heading", heading),
        ("hit", bonus),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvoidRewardGains {
    pub smooth: f64,
    pub effort: f64,
    pub throttle: f64,
    pub pose: f64,
    pub ups: f64,
    pub spin: f64,
    pub alive: f64,
    /// Negative penalty applied on the step the vehicle is hit.
    pub crash: f64,
    pub hover_throttle: f64,
}

impl Default for AvoidRewardGains {
    fn default() -> Self {
        Self {
            smooth: 0.2,
            effort: 0.1,
            throttle: 0.2,
            pose: 1.0,
            ups: 0.1,
            spin: 0.2,
            alive: 0.1,
            crash: -10.0,
            hover_throttle: 0.25,
        }
    }
}

/// Position plus `(roll, pitch, yaw)` target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullPoseTarget {
    pub position: Vec3,
    pub euler: [f64; 3],
}

pub fn reward_avoid(ctx: &StepContext, target: &FullPoseTarget, g: &AvoidRewardGains, alive: bool) -> Reward {
    let s = ctx.state;
    let smooth = g.smooth * (-ctx.action_delta()).exp();
    let effort = g.effort * (-ctx.action_energy()).exp();
    let throttle = ctx.throttle_term(g.throttle, g.hover_throttle);
    let e = euler_zyx(&s.attitude, ctx.yaw());
    let mut err_sq = (target.position - s.position).norm_squared();
    for i in 0..3 {
        let d = wrap_angle(target.euler[i] - e[i]);
        err_sq += d * d;
    }
    let pose = g.pose / (1.0 + err_sq);
    let r_ups = ups(g.ups, ctx.uprightness());
    let spin = g.spin / (1.0 + s.body_rate.z * s.body_rate.z);
    let alive_term = if alive { g.alive } else { g.crash };
    Reward::from_terms(vec![
        ("smooth", smooth),
        ("effort", effort),
        ("throttle", throttle),
        ("pose", pose),
        ("alive", alive_term),
        ("pose_coupled", pose * (r_ups + spin)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanRewardGains {
    /// Penalty gain on `‖Δa‖ + ‖ω_E‖`; negative.
    pub smooth: f64,
    pub effort: f64,
    pub throttle: f64,
    pub guidance: f64,
    pub speed: f64,
    pub speed_width: f64,
    /// Maximum expected forward speed, m/s.
    pub cruise_speed: f64,
    pub min_height: f64,
    pub max_height: f64,
    pub esdf: f64,
    pub esdf_scale: f64,
    pub ups: f64,
    pub alive: f64,
    /// Minimum clearance below which the vehicle counts as crashed, m.
    pub crash_distance: f64,
    pub goal: f64,
    pub heading: f64,
    pub hover_throttle: f64,
}

impl Default for PlanRewardGains {
    fn default() -> Self {
        Self {
            smooth: -0.05,
            effort: 0.05,
            throttle: 0.1,
            guidance: 1.0,
            speed: 0.2,
            speed_width: 1.0,
            cruise_speed: 2.0,
            min_height: 0.5,
            max_height: 3.0,
            esdf: 0.5,
            esdf_scale: 1.0,
            ups: 0.1,
            alive: 0.1,
            crash_distance: 0.3,
            goal: 20.0,
            heading: 0.1,
            hover_throttle: 0.25,
        }
    }
}

pub fn esdf_reward(gain: f64, scale: f64, x_esdf: f64) -> f64 {
    gain * (1.0 - (-scale * x_esdf * x_esdf).exp())
}

pub fn height_reward(pz: f64, min_height: f64, max_height: f64) -> f64 {
    (pz - min_height).min(0.0).min(max_height - pz)
}

pub fn speed_reward(g: &PlanRewardGains, forward_speed: f64) -> f64 {
    let d = forward_speed.abs() - g.cruise_speed;
    -g.speed * (1.0 - (-g.speed_width * d * d).exp())
}

pub fn reward_plan(
    ctx: &StepContext,
    prev_pos: &Vec3,
    goal: &Vec3,
    x_esdf: f64,
    g: &PlanRewardGains,
    goal_reached: bool,
) -> Reward {
    let s = ctx.state;
    let w_e = world_to_ego(&s.attitude, &rotate_vec(&s.attitude, &s.body_rate));
    let smooth = g.smooth * (ctx.action_delta() + w_e.norm());
    let effort = g.effort * (-ctx.action_energy()).exp();
    let throttle = ctx.throttle_term(g.throttle, g.hover_throttle);
    let guidance = g.guidance * ((goal - prev_pos).norm() - (goal - s.position).norm());
    let v_e = world_to_ego(&s.attitude, &s.velocity);
    let speed = speed_reward(g, v_e.x);
    let height = height_reward(s.position.z, g.min_height, g.max_height);
    let yaw = ctx.yaw();
    let dpsi = wrap_angle(heading_to(&s.position, goal, yaw) - yaw);
    let heading = g.heading / (1.0 + dpsi * dpsi);
    let r_ups = ups(g.ups, ctx.uprightness());
    let esdf = esdf_reward(g.esdf, g.esdf_scale, x_esdf);
    let alive = if x_esdf > g.crash_distance { g.alive } else { 0.0 };
    let bonus = if goal_reached { g.goal } else { 0.0 };
    Reward::from_terms(vec![
        ("smooth", smooth),
        ("effort", effort),
        ("throttle", throttle),
        ("guidance", guidance),
        ("speed", speed),
        ("height", height),
        ("heading", heading),
        ("ups", r_ups),
        ("guidance_coupled", guidance * (esdf + alive)),
        ("goal", bonus),
    ])
}

/// Figure-eight reference with half-span 3 m at height 1 m.
pub fn lemniscate(t: f64, k: f64) -> Vec3 {
    let (s, c) = (k * t).sin_cos();
    let den = 1.0 + c * c;
    Vec3::new(3.0 * s / den, 3.0 * s * c / den, 1.0)
}

/// Length of one lap of [`lemniscate`], by fine polyline summation.
pub fn lemniscate_lap_length() -> f64 {
    const N: usize = 200_000;
    let mut prev = lemniscate(0.0, 1.0);
    let mut len = 0.0;
    for i in 1..=N {
        let p = lemniscate(std::f64::consts::TAU * i as f64 / N as f64, 1.0);
        len += (p - prev).norm();
        prev = p;
    }
    len
}

/// Rate `k` giving the requested mean path speed (m/s).
pub fn lemniscate_k_for_speed(speed: f64) -> f64 {
    std::f64::consts::TAU * speed / lemniscate_lap_length()
}

/// Axis-aligned spawn box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vec3 {
        (Vec3::from(self.min) + Vec3::from(self.max)) * 0.5
    }
}

pub fn spawn_balloon<R: Rng + ?Sized>(rng: &mut R, bounds: &Bounds) -> Vec3 {
    Vec3::from_fn(|i, _| {
        let (lo, hi) = (bounds.min[i], bounds.max[i]);
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectileConfig {
    /// Horizontal launch distance from the aim point, m.
    pub distance: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Half-width of the launch azimuth sector around the +x axis, rad.
    pub azimuth_spread: f64,
    /// Std-dev of the angular noise added to the launch direction, rad.
    pub angle_noise: f64,
    pub radius: f64,
    /// Throw a cube instead of a ball.
    pub cube: bool,
    pub gravity: f64,
}

impl Default for ProjectileConfig {
    fn default() -> Self {
        Self {
            distance: 6.0,
            speed_min: 4.0,
            speed_max: 8.0,
            azimuth_spread: 0.3,
            angle_noise: 0.02,
            radius: 0.15,
            cube: false,
            gravity: crate::dynamics::GRAVITY,
        }
    }
}

/// Launch state `(position, velocity)` of a ballistic projectile aimed at
/// `aim`. When the nominal distance is out of ballistic reach for the drawn
/// speed, the launch point is pulled in to 95% of the maximum range.
pub fn spawn_projectile<R: Rng + ?Sized>(rng: &mut R, aim: &Vec3, cfg: &ProjectileConfig) -> (Vec3, Vec3) {
    let speed = if cfg.speed_max > cfg.speed_min {
        rng.random_range(cfg.speed_min..=cfg.speed_max)
    } else {
        cfg.speed_min
    }
    .clamp(cfg.speed_min, cfg.speed_max);
    let azimuth = if cfg.azimuth_spread > 0.0 {
        rng.random_range(-cfg.azimuth_spread..=cfg.azimuth_spread)
    } else {
        0.0
    };
    let g = cfg.gravity;
    let max_range = speed * speed / g;
    let dist = cfg.distance.min(0.95 * max_range);
    let elevation = 0.5 * (g * dist / (speed * speed)).clamp(-1.0, 1.0).asin();

    let outward = Vec3::new(azimuth.cos(), azimuth.sin(), 0.0);
    let launch = aim + outward * dist;

    let (mut el, mut az) = (elevation, azimuth + std::f64::consts::PI);
    if cfg.angle_noise > 0.0 {
        let n = Normal::new(0.0, cfg.angle_noise).expect("positive std-dev");
        el += n.sample(rng);
        az += n.sample(rng);
    }
    let vel = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * speed;
    (launch, vel)
}

/// Per-episode reference-timing randomization: a lag drawn from `N(mean, std²)`,
/// negative draws meaning no lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalMargin {
    pub enabled: bool,
    pub mean: f64,
    pub std: f64,
}

impl Default for TemporalMargin {
    fn default() -> Self {
        Self { enabled: true, mean: 0.3, std: 0.5 }
    }
}

impl TemporalMargin {
    /// Draws the episode offset; `0.0` when disabled.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        if self.std > 0.0 {
            Normal::new(self.mean, self.std).expect("finite std-dev").sample(rng)
        } else {
            self.mean
        }
    }
}

pub fn trajectory_playback(t_sim: f64, offset: f64) -> f64 {
    t_sim - offset.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    /// Half-width of the arena box, m.
    pub arena_half: f64,
    pub tilt_max: f64,
    pub hit_radius: f64,
    pub goal_radius: f64,
    /// Body radius used for geometric collision checks, m.
    pub body_radius: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            arena_half: 10.0,
            tilt_max: 80f64.to_radians(),
            hit_radius: 0.2,
            goal_radius: 0.5,
            body_radius: 0.1,
        }
    }
}

/// Inputs to [`termination`] beyond the vehicle state.
#[derive(Debug, Clone, Copy, Default)]
pub struct TerminationInput {
    /// Minimum depth, when the task uses depth.
    pub x_esdf: Option<f64>,
    /// Clearance below which the depth-based crash triggers.
    pub crash_distance: f64,
    /// Geometric collision with a scene primitive.
    pub collided: bool,
    /// Balloon (hitting) or goal (planning) position.
    pub target: Option<Vec3>,
    /// Steps taken in this episode, counting the current one.
    pub step: usize,
    pub max_steps: usize,
}

pub fn termination(
    state: &QuadState,
    task: TaskKind,
    input: &TerminationInput,
    cfg: &TerminationConfig,
) -> EpisodeOutcome {
    if !state.is_finite() {
        return EpisodeOutcome::Crashed;
    }
    let p = state.position;
    let outside = p.iter().any(|x| x.abs() > cfg.arena_half);
    let tilt = rotate_vec(&state.attitude, &Vec3::z()).z.clamp(-1.0, 1.0).acos();
    let depth_crash = task.uses_depth()
        && input.x_esdf.map(|x| x < input.crash_distance).unwrap_or(false);
    if outside || tilt > cfg.tilt_max || depth_crash || input.collided {
        return EpisodeOutcome::Crashed;
    }
    match (task, input.target) {
        (TaskKind::TargetHitting, Some(b)) if (b - p).norm() <= cfg.hit_radius => {
            return EpisodeOutcome::Hit
        }
        (TaskKind::Planning, Some(goal)) if (goal - p).norm() <= cfg.goal_radius => {
            return EpisodeOutcome::GoalReached
        }
        _ => {}
    }
    if input.step >= input.max_steps {
        return EpisodeOutcome::TimedOut;
    }
    EpisodeOutcome::Running
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Quat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx<'a>(state: &'a QuadState, a: &'a [f64], prev: &'a [f64], mode: ControlMode) -> StepContext<'a> {
        StepContext { state, action: a, prev_action: prev, rotor_norm: [0.5; 4], collective: 0.25, mode }
    }

    #[test]
    fn lemniscate_examples() {
        assert_eq!(lemniscate(0.0, 1.3), Vec3::new(0.0, 0.0, 1.0));
        let p = lemniscate(std::f64::consts::FRAC_PI_2, 1.0);
        assert!((p - Vec3::new(3.0, 0.0, 1.0)).norm() < 1e-12);
        let max_x = (0..1_000_000)
            .map(|i| lemniscate(i as f64 * std::f64::consts::TAU / 1e6, 1.0).x.abs())
            .fold(0.0, f64::max);
        assert!((max_x - 3.0).abs() < 1e-6);
    }

    #[test]
    fn lemniscate_speed_calibration() {
        let k = lemniscate_k_for_speed(1.6);
        let period = std::f64::consts::TAU / k;
        let n = 100_000;
        let mut len = 0.0;
        for i in 0..n {
            let t0 = period * i as f64 / n as f64;
            let t1 = period * (i + 1) as f64 / n as f64;
            len += (lemniscate(t1, k) - lemniscate(t0, k)).norm();
        }
        assert!((len / period - 1.6).abs() < 1e-6);
    }

    #[test]
    fn perfect_hover_terms() {
        let g = HoverRewardGains::default();
        let target = PoseTarget { position: Vec3::new(0.0, 0.0, 1.0), yaw: 0.0 };
        let s = QuadState::at(target.position);
        let a = [0.1, 0.2, 0.3, 0.4];
        let c = StepContext { collective: g.hover_throttle, ..ctx(&s, &a, &a, ControlMode::CTBR) };
        let r = reward_hover(&c, &target, &g);
        assert_eq!(r.term("smooth"), Some(g.smooth));
        assert_eq!(r.term("effort"), Some(4.0 * g.effort * 0.5));
        assert_eq!(r.term("pos"), Some(g.pos));
        assert_eq!(r.term("throttle"), Some(g.throttle));
        let coupled = g.pos * (4.0 * g.ups + g.spin + g.heading + g.vel_dir);
        assert!((r.term("pos_coupled").unwrap() - coupled).abs() < 1e-15);
        let expected = g.smooth + 4.0 * g.effort * 0.5 + g.pos + g.throttle + coupled;
        assert!((r.total - expected).abs() < 1e-12);
    }

    #[test]
    fn throttle_term_zero_for_outer_loop_modes() {
        let g = HoverRewardGains::default();
        let target = PoseTarget { position: Vec3::zeros(), yaw: 0.0 };
        let s = QuadState::default();
        for mode in [ControlMode::PY, ControlMode::LV] {
            let r = reward_hover(&ctx(&s, &[0.0; 4], &[0.0; 4], mode), &target, &g);
            assert_eq!(r.term("throttle"), Some(0.0));
        }
    }

    #[test]
    fn unit_position_error_halves_pos_reward() {
        let g = HoverRewardGains { pos: 1.0, pos_scale: 1.0, ..Default::default() };
        let target = PoseTarget { position: Vec3::new(0.0, 0.0, 1.0), yaw: 0.0 };
        let s = QuadState::at(Vec3::new(1.0, 0.0, 1.0));
        let r = reward_hover(&ctx(&s, &[0.0; 4], &[0.0; 4], ControlMode::CTBR), &target, &g);
        assert_eq!(r.term("pos"), Some(0.5));
    }

    #[test]
    fn velocity_direction_term_orders_by_sign_of_approach() {
        let g = HoverRewardGains::default();
        let target = PoseTarget { position: Vec3::new(0.0, 0.0, 1.0), yaw: 0.0 };
        let vel_dir = |v: f64| {
            let s = QuadState { velocity: Vec3::new(v, 0.0, 0.0), ..QuadState::at(Vec3::new(1.0, 0.0, 1.0)) };
            let d = (target.position - s.position).normalize();
            let direct = g.vel_dir * (-s.velocity.dot(&d) / std::f64::consts::PI).exp();
            let r = reward_hover(&ctx(&s, &[0.0; 4], &[0.0; 4], ControlMode::CTBR), &target, &g);
            let pos = r.term("pos").unwrap();
            let rest = 4.0 * g.ups + g.spin + g.heading;
            let from_total = r.term("pos_coupled").unwrap() / pos - rest;
            assert!((from_total - direct).abs() < 1e-12);
            direct
        };
        // As printed, the exponent decreases when moving toward the target.
        let toward = vel_dir(-1.0);
        let away = vel_dir(1.0);
        assert!(toward < away);
    }

    #[test]
    fn moving_away_lowers_position_reward() {
        let g = HoverRewardGains::default();
        let target = PoseTarget { position: Vec3::new(0.0, 0.0, 1.0), yaw: 0.0 };
        let base = QuadState::at(Vec3::new(0.3, 0.0, 1.0));
        let h = 1e-6;
        let moved = QuadState::at(base.position + Vec3::new(h, 0.0, 0.0));
        let r0 = reward_hover(&ctx(&base, &[0.0; 4], &[0.0; 4], ControlMode::PY), &target, &g);
        let r1 = reward_hover(&ctx(&moved, &[0.0; 4], &[0.0; 4], ControlMode::PY), &target, &g);
        let fd = (r1.term("pos").unwrap() - r0.term("pos").unwrap()) / h;
        // Observation reports target − current = −0.3 along x; reward slope must be negative.
        assert!(fd < 0.0);
        let o = crate::frames::obs_hover(&base, &QuadState::at(target.position));
        assert!(o.values[9] < 0.0);
    }

    #[test]
    fn tracking_terms() {
        let g = TrackRewardGains::default();
        let p = Vec3::new(1.0, 0.5, 1.0);
        let s = QuadState::at(p);
        let r = reward_track(&ctx(&s, &[0.0; 4], &[0.1; 4], ControlMode::CTBR), &p, 0.0, &g);
        assert_eq!(r.term("dist"), Some(g.dist));
        let sum: f64 = r.terms.iter().map(|(_, v)| v).sum();
        assert!((sum - r.total).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for i in 0..100 {
            let s = QuadState::at(p + Vec3::new(0.05 * i as f64, 0.0, 0.0));
            let r = reward_track(&ctx(&s, &[0.0; 4], &[0.0; 4], ControlMode::CTBR), &p, 0.0, &g);
            let d = r.term("dist").unwrap();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn hitting_terms() {
        let g = HitRewardGains { guidance: 1.0, ..Default::default() };
        let balloon = Vec3::new(5.0, 0.0, 1.0);
        let p = Vec3::new(1.0, 0.0, 1.0);
        let s = QuadState::at(p);
        let c = ctx(&s, &[0.0; 4], &[0.0; 4], ControlMode::LV);
        assert_eq!(reward_hit(&c, &p, &balloon, &g, false).term("guidance"), Some(0.0));
        let prev = Vec3::new(0.0, 0.0, 1.0);
        assert!((reward_hit(&c, &prev, &balloon, &g, false).term("guidance").unwrap() - 1.0).abs() < 1e-12);
        let miss = reward_hit(&c, &prev, &balloon, &g, false);
        let hit = reward_hit(&c, &prev, &balloon, &g, true);
        assert_eq!(hit.total - miss.total, g.hit);
        let tcfg = TerminationConfig::default();
        let at_balloon = QuadState::at(balloon);
        let input = TerminationInput { target: Some(balloon), max_steps: 100, step: 1, ..Default::default() };
        assert_eq!(termination(&at_balloon, TaskKind::TargetHitting, &input, &tcfg), EpisodeOutcome::Hit);
    }

    #[test]
    fn guidance_telescopes() {
        let g = HitRewardGains { guidance: 1.0, ..Default::default() };
        let balloon = Vec3::new(3.0, 2.0, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut prev = Vec3::new(-1.0, 0.5, 1.0);
        let start = prev;
        let mut sum = 0.0;
        for _ in 0..200 {
            let next = prev + Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let s = QuadState::at(next);
            sum += reward_hit(&ctx(&s, &[0.0; 4], &[0.0; 4], ControlMode::LV), &prev, &balloon, &g, false)
                .term("guidance")
                .unwrap();
            prev = next;
        }
        let exact = (balloon - start).norm() - (balloon - prev).norm();
        assert!((sum - exact).abs() < 1e-12);
    }

    #[test]
    fn avoidance_terms() {
        let g = AvoidRewardGains::default();
        let target = FullPoseTarget { position: Vec3::new(0.0, 0.0, 1.0), euler: [0.0; 3] };
        let s = QuadState::at(target.position);
        let c = ctx(&s, &[0.0; 4], &[0.0; 4], ControlMode::CTBR);
        let alive = reward_avoid(&c, &target, &g, true);
        assert_eq!(alive.term("pose"), Some(g.pose));
        assert_eq!(alive.term("alive"), Some(g.alive));
        let hit = reward_avoid(&c, &target, &g, false);
        assert_eq!(hit.term("alive"), Some(g.crash));
        assert!(g.crash < 0.0);
        assert!((alive.total - hit.total - (g.alive - g.crash)).abs() < 1e-12);
    }

    #[test]
    fn planning_terms() {
        let g = PlanRewardGains::default();
        assert_eq!(esdf_reward(g.esdf, g.esdf_scale, 0.0), 0.0);
        let mut last = -1.0;
        for i in 0..1000 {
            let r = esdf_reward(g.esdf, g.esdf_scale, i as f64 * 0.005);
            assert!(r > last);
            assert!(r < g.esdf);
            last = r;
        }
        assert_eq!(speed_reward(&g, g.cruise_speed), 0.0);
        assert!(speed_reward(&g, g.cruise_speed + 0.5) < 0.0);
        assert_eq!(height_reward(1.5, g.min_height, g.max_height), 0.0);
        assert!(height_reward(0.2, g.min_height, g.max_height) < 0.0);
        assert!(height_reward(3.5, g.min_height, g.max_height) < 0.0);

        let goal = Vec3::new(8.0, 0.0, 1.5);
        let s = QuadState { velocity: Vec3::new(2.0, 0.0, 0.0), ..QuadState::at(Vec3::new(0.0, 0.0, 1.5)) };
        let c = ctx(&s, &[0.1; 4], &[0.0; 4], ControlMode::CTBR);
        let r = reward_plan(&c, &Vec3::new(-0.02, 0.0, 1.5), &goal, 2.0, &g, false);
        assert_eq!(r.term("speed"), Some(0.0));
        assert_eq!(r.term("height"), Some(0.0));
        let sum: f64 = r.terms.iter().map(|(_, v)| v).sum();
        assert!((sum - r.total).abs() < 1e-12);
        let with_goal = reward_plan(&c, &Vec3::new(-0.02, 0.0, 1.5), &goal, 2.0, &g, true);
        assert!((with_goal.total - r.total - g.goal).abs() < 1e-12);
        let crowded = reward_plan(&c, &Vec3::new(-0.02, 0.0, 1.5), &goal, 0.1, &g, false);
        assert_eq!(crowded.term("guidance_coupled").unwrap(), r.term("guidance").unwrap() * esdf_reward(g.esdf, g.esdf_scale, 0.1));
    }

    #[test]
    fn termination_examples() {
        let cfg = TerminationConfig::default();
        let s = QuadState::at(Vec3::new(0.0, 0.0, 1.0));
        let input = TerminationInput { step: 10, max_steps: 10, ..Default::default() };
        assert_eq!(termination(&s, TaskKind::Hovering, &input, &cfg), EpisodeOutcome::TimedOut);
        let input = TerminationInput { step: 1, max_steps: 10, ..Default::default() };
        assert_eq!(termination(&s, TaskKind::Hovering, &input, &cfg), EpisodeOutcome::Running);
        let k14 = 0.3;
        let input = TerminationInput { x_esdf: Some(k14 / 2.0), crash_distance: k14, step: 1, max_steps: 10, ..Default::default() };
        assert_eq!(termination(&s, TaskKind::Planning, &input, &cfg), EpisodeOutcome::Crashed);
        let far = QuadState::at(Vec3::new(11.0, 0.0, 1.0));
        let input = TerminationInput { step: 1, max_steps: 10, ..Default::default() };
        assert_eq!(termination(&far, TaskKind::Hovering, &input, &cfg), EpisodeOutcome::Crashed);
        let flipped = QuadState { attitude: Quat::from_euler(1.5, 0.0, 0.0), ..s };
        assert_eq!(termination(&flipped, TaskKind::Hovering, &input, &cfg), EpisodeOutcome::Crashed);
        let goal = Vec3::new(0.2, 0.0, 1.0);
        let input = TerminationInput { target: Some(goal), x_esdf: Some(4.5), crash_distance: k14, step: 1, max_steps: 10, ..Default::default() };
        assert_eq!(termination(&s, TaskKind::Planning, &input, &cfg), EpisodeOutcome::GoalReached);
    }

    #[test]
    fn outcomes_are_absorbing() {
        assert_eq!(EpisodeOutcome::Crashed.advance(EpisodeOutcome::Running), EpisodeOutcome::Crashed);
        assert_eq!(EpisodeOutcome::Running.advance(EpisodeOutcome::Hit), EpisodeOutcome::Hit);
    }

    #[test]
    fn balloon_inside_bounds() {
        let b = Bounds { min: [2.0, -3.0, 0.5], max: [6.0, 3.0, 2.5] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(b.contains(&spawn_balloon(&mut rng, &b)));
        }
    }

    #[test]
    fn projectile_speed_within_range() {
        let cfg = ProjectileConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (_, v) = spawn_projectile(&mut rng, &Vec3::new(0.0, 0.0, 1.0), &cfg);
            let s = v.norm();
            assert!((cfg.speed_min - 1e-12..=cfg.speed_max + 1e-12).contains(&s));
        }
    }

    #[test]
    fn noiseless_projectile_passes_through_aim() {
        let cfg = ProjectileConfig { angle_noise: 0.0, ..Default::default() };
        let aim = Vec3::new(0.5, -0.2, 1.0);
        let g = Vec3::new(0.0, 0.0, -cfg.gravity);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (p0, v0) = spawn_projectile(&mut rng, &aim, &cfg);
            let horiz = Vec3::new(aim.x - p0.x, aim.y - p0.y, 0.0);
            let t = horiz.norm() / v0.xy().norm();
            let p = p0 + v0 * t + 0.5 * g * t * t;
            assert!((p - aim).norm() < 1e-9, "{}", (p - aim).norm());
        }
    }

    #[test]
    fn playback_examples() {
        let off = TemporalMargin { enabled: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(trajectory_playback(2.5, off.draw(&mut rng)), 2.5);
        assert!((trajectory_playback(2.5, 0.3) - 2.2).abs() < 1e-15);
        assert_eq!(trajectory_playback(2.5, -0.4), 2.5);
    }

    #[test]
    fn playback_offset_mean_matches_rectified_normal() {
        let m = TemporalMargin::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let lags: Vec<f64> = (0..n).map(|_| m.draw(&mut rng).max(0.0)).collect();
        let mean = lags.iter().sum::<f64>() / n as f64;
        let var = lags.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

        // E[max(0, X)] for X ~ N(μ, σ²), by Simpson quadrature over [0, μ + 10σ].
        let pdf = |x: f64| {
            (-(x - m.mean).powi(2) / (2.0 * m.std * m.std)).exp() / (m.std * (std::f64::consts::TAU).sqrt())
        };
        let (a, b, k) = (0.0, m.mean + 10.0 * m.std, 20_000);
        let h = (b - a) / k as f64;
        let mut acc = 0.0;
        for i in 0..=k {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * x * pdf(x);
        }
        let expected = acc * h / 3.0;
        let se = (var / n as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn task_names_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(t.name().parse::<TaskKind>().unwrap(), t);
        }
        assert!("flying".parse::<TaskKind>().is_err());
    }
}
