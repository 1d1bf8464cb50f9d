//! Classical cascade pilot: scripted guidance per task, expressed as raw
//! actions for whichever control mode the environment runs.

use crate::control::{attitude_loop, mixer, position_loop, rate_loop, velocity_loop, ControlMode, ControllerState};
use crate::env::{lemniscate_derivatives, EnvSlot, VecEnv};
use crate::math::Vec3;
use crate::tasks::{lemniscate, TaskKind};

/// Position and velocity feed-forward setpoint with heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guidance {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
}

/// Prediction horizon and miss distance used to trigger an avoidance manoeuvre.
const THREAT_HORIZON: f64 = 2.0;
const THREAT_RADIUS: f64 = 1.0;
const DODGE_DISTANCE: f64 = 1.5;
/// Obstacle influence distance and gain for planning.
const REPULSE_RANGE: f64 = 1.5;
const REPULSE_GAIN: f64 = 2.0;
const CRUISE_SPEED: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct CascadePilot {
    ctrl: Vec<ControllerState>,
}

impl CascadePilot {
    pub fn new(n_envs: usize) -> Self {
        Self { ctrl: vec![ControllerState::default(); n_envs] }
    }

    /// Clears the pilot's loop memory for envs that just finished an episode.
    pub fn observe_dones(&mut self, done: &[bool]) {
        for (c, d) in self.ctrl.iter_mut().zip(done) {
            if *d {
                c.reset();
            }
        }
    }

    /// Raw actions in `[-1, 1]`, row-major `n_envs × act_dim`.
    pub fn act(&mut self, env: &VecEnv) -> Vec<f64> {
        let mut out = Vec::with_capacity(env.n_envs() * env.act_dim());
        for (slot, ctrl) in env.envs().iter().zip(self.ctrl.iter_mut()) {
            let g = guidance(env, slot);
            out.extend(encode(env, slot, &g, ctrl));
        }
        out
    }
}

/// Task-level setpoint for one env.
pub fn guidance(env: &VecEnv, slot: &EnvSlot) -> Guidance {
    let cfg = env.config();
    let p = slot.state.position;
    match cfg.sim.task {
        TaskKind::Hovering => Guidance { position: slot.target, velocity: Vec3::zeros(), yaw: cfg.task.hovering.yaw },
        TaskKind::Tracking => {
            let k = env.track_k();
            let t = slot.t_ref() + cfg.sim.dt;
            let (v, a) = lemniscate_derivatives(t, k);
            let vel_p = Vec3::from(cfg.controller.vel_p);
            Guidance { position: lemniscate(t, k), velocity: v + a.component_div(&vel_p), yaw: 0.0 }
        }
        TaskKind::TargetHitting => {
            let d = slot.target - p;
            Guidance { position: slot.target, velocity: Vec3::zeros(), yaw: d.y.atan2(d.x) }
        }
        TaskKind::Avoidance => Guidance { position: dodge_point(env, slot), velocity: Vec3::zeros(), yaw: 0.0 },
        TaskKind::Planning => {
            let v = planning_velocity(slot);
            let yaw = if v.xy().norm() > 0.2 { v.y.atan2(v.x) } else { slot.state.attitude.yaw() };
            Guidance { position: Vec3::new(p.x, p.y, slot.target.z), velocity: v, yaw }
        }
    }
}

/// Hold point, or a sidestep when a thrown body is predicted to pass close.
fn dodge_point(env: &VecEnv, slot: &EnvSlot) -> Vec3 {
    let p = slot.state.position;
    let g = env.config().sim.vehicle.gravity_vec();
    let mut best: Option<(f64, Vec3, Vec3)> = None;
    for body in &slot.scene.primitives {
        let Some(v0) = body.velocity else { continue };
        let c0 = body.center();
        let steps = (THREAT_HORIZON / 0.02) as usize;
        for i in 0..=steps {
            let t = i as f64 * 0.02;
            let c = c0 + v0 * t + 0.5 * g * t * t;
            let d = (c - p).norm();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, c, v0 + g * t));
            }
        }
    }
    match best {
        Some((d, c, v)) if d < THREAT_RADIUS => {
            let v_dir = v.try_normalize(1e-9).unwrap_or(Vec3::x());
            let away = p - c;
            let mut perp = away - v_dir * away.dot(&v_dir);
            perp.z = 0.0;
            let dir = perp.try_normalize(1e-6).unwrap_or_else(|| Vec3::new(-v_dir.y, v_dir.x, 0.0).normalize());
            p + dir * DODGE_DISTANCE
        }
        _ => slot.target,
    }
}

/// Attraction to the goal plus horizontal repulsion from nearby scene bodies.
fn planning_velocity(slot: &EnvSlot) -> Vec3 {
    let p = slot.state.position;
    let to_goal = slot.target - p;
    let dist = to_goal.norm();
    let mut v = if dist > 1e-9 { to_goal / dist * CRUISE_SPEED.min(dist) } else { Vec3::zeros() };
    for body in &slot.scene.primitives {
        let d = body.sdf(&p).max(0.05);
        if d >= REPULSE_RANGE {
            continue;
        }
        let mut away = p - body.center();
        away.z = 0.0;
        let Some(away) = away.try_normalize(1e-9) else { continue };
        let push = REPULSE_GAIN * (1.0 / d - 1.0 / REPULSE_RANGE);
        // Slide around the obstacle on the side the goal lies on.
        let tangent = Vec3::new(-away.y, away.x, 0.0);
        let side = if tangent.dot(&to_goal) >= 0.0 { 1.0 } else { -1.0 };
        v += away * push + tangent * (side * 0.5 * push);
    }
    v.z += slot.target.z - p.z;
    // Slow down in clutter.
    let clearance = slot.scene.sdf(&p);
    let limit = CRUISE_SPEED * ((clearance - 0.3) / 0.7).clamp(0.3, 1.0);
    let n = v.norm();
    if n > limit {
        v * (limit / n)
    } else {
        v
    }
}

/// Inverse of the environment's action squash, running the cascade loops the
/// mode leaves to the policy.
fn encode(env: &VecEnv, slot: &EnvSlot, g: &Guidance, ctrl: &mut ControllerState) -> Vec<f64> {
    let cfg = env.config();
    let gains = &cfg.controller;
    let params = &cfg.sim.vehicle;
    let dt = cfg.sim.dt;
    let s = &slot.state;
    let pi = std::f64::consts::PI;
    let yaw = crate::math::wrap_angle(g.yaw);
    let pos_p = Vec3::from(gains.pos_p);
    let clamp = |x: f64| x.clamp(-1.0, 1.0);
    let max_thrust = 4.0 * params.f_rotor_max;
    let to_unit = |x: f64| clamp(2.0 * x - 1.0);

    let mode = cfg.sim.mode;
    if mode == ControlMode::PY {
        let limit = cfg.task.termination.arena_half;
        let p = g.position + g.velocity.component_div(&pos_p);
        return vec![clamp(p.x / limit), clamp(p.y / limit), clamp(p.z / limit), yaw / pi];
    }
    let v_sp = g.velocity + position_loop(&(g.position - s.position), gains);
    let v_sp = {
        let n = v_sp.norm();
        if n > gains.max_vel {
            v_sp * (gains.max_vel / n)
        } else {
            v_sp
        }
    };
    if mode == ControlMode::LV {
        let m = gains.max_vel;
        return vec![clamp(v_sp.x / m), clamp(v_sp.y / m), clamp(v_sp.z / m), yaw / pi];
    }
    let (thrust, q_sp) = velocity_loop(&v_sp, &s.velocity, yaw, ctrl, gains, params, dt);
    let a_thrust = to_unit(thrust / max_thrust);
    if mode == ControlMode::CTA {
        let q = if q_sp.w < 0.0 { q_sp.neg() } else { q_sp };
        return vec![a_thrust, q.w - 1.0, q.x, q.y, q.z];
    }
    let rate_sp = attitude_loop(&s.attitude, &q_sp, gains);
    if mode == ControlMode::CTBR {
        let m = gains.max_rate;
        return vec![a_thrust, clamp(rate_sp.x / m), clamp(rate_sp.y / m), clamp(rate_sp.z / m)];
    }
    let torque = rate_loop(&s.body_rate, &rate_sp, ctrl, gains, dt);
    mixer(thrust, &torque, params).throttle.iter().map(|u| to_unit(*u)).collect()
}
