//! PX4-style cascade controller: position → velocity → attitude → rate → mixer.
//!
//! Each [`ControlMode`] enters the cascade at a different level and runs only
//! the loops below it. Thrust handling follows the hover-throttle convention:
//! collective throttle is the hover throttle scaled by the demanded specific
//! force over gravity, and per-rotor thrust is linear in throttle.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{QuadParams, QuadState};
use crate::error::{Error, Result};
use crate::math::{quat_from_rot, quat_mul, Mat3, Quat, Vec3};

/// Level at which an external command enters the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ControlMode {
    /// Position + yaw.
    PY,
    /// Linear velocity + yaw.
    LV,
    /// Collective thrust + attitude quaternion.
    CTA,
    /// Collective thrust + body rates.
    CTBR,
    /// Single-rotor throttles.
    SRT,
}

impl ControlMode {
    pub const ALL: [ControlMode; 5] =
        [ControlMode::PY, ControlMode::LV, ControlMode::CTA, ControlMode::CTBR, ControlMode::SRT];

    pub fn command_dim(self) -> usize {
        match self {
            ControlMode::CTA => 5,
            _ => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlMode::PY => "PY",
            ControlMode::LV => "LV",
            ControlMode::CTA => "CTA",
            ControlMode::CTBR => "CTBR",
            ControlMode::SRT => "SRT",
        }
    }
}

impl std::str::FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PY" => Ok(ControlMode::PY),
            "LV" => Ok(ControlMode::LV),
            "CTA" => Ok(ControlMode::CTA),
            "CTBR" => Ok(ControlMode::CTBR),
            "SRT" => Ok(ControlMode::SRT),
            other => Err(Error::Parse(format!("unknown control mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub pos_p: [f64; 3],
    pub vel_p: [f64; 3],
    pub vel_i: [f64; 3],
    pub vel_d: [f64; 3],
    /// Bound on each velocity integrator component (m).
    pub vel_int_max: f64,
    pub att_p: f64,
    pub rate_p: [f64; 3],
    pub rate_i: [f64; 3],
    pub rate_d: [f64; 3],
    /// Bound on each rate integrator component (rad).
    pub rate_int_max: f64,
    pub max_tilt: f64,
    pub max_vel: f64,
    pub max_rate: f64,
    /// Collective throttle limits, normalized.
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub hover_throttle: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            pos_p: [1.8, 1.8, 2.0],
            vel_p: [4.0, 4.0, 5.0],
            vel_i: [0.8, 0.8, 1.5],
            vel_d: [0.1, 0.1, 0.1],
            vel_int_max: 2.0,
            att_p: 8.0,
            rate_p: [0.08, 0.08, 0.12],
            rate_i: [0.05, 0.05, 0.05],
            rate_d: [0.001, 0.001, 0.0],
            rate_int_max: 0.5,
            max_tilt: 40f64.to_radians(),
            max_vel: 3.0,
            max_rate: 6.0,
            thrust_min: 0.05,
            thrust_max: 0.95,
            hover_throttle: QuadParams::default().hover_throttle(),
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .pos_p
            .iter()
            .chain(&self.vel_p)
            .chain(&self.vel_i)
            .chain(&self.vel_d)
            .chain(&self.rate_p)
            .chain(&self.rate_i)
            .chain(&self.rate_d)
            .chain([&self.att_p, &self.vel_int_max, &self.rate_int_max]);
        for g in all {
            if !(g.is_finite() && *g >= 0.0) {
                return Err(Error::InvalidConfig("controller gains must be finite and >= 0".into()));
            }
        }
        if !(self.hover_throttle > 0.0 && self.hover_throttle < 1.0) {
            return Err(Error::InvalidConfig("hover_throttle must lie in (0, 1)".into()));
        }
        let limits = [self.max_tilt, self.max_vel, self.max_rate, self.thrust_max];
        if !limits.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidConfig("controller limits must be positive".into()));
        }
        if self.max_tilt >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidConfig("max_tilt must be below 90 degrees".into()));
        }
        if !(0.0..self.thrust_max).contains(&self.thrust_min) || self.thrust_max > 1.0 {
            return Err(Error::InvalidConfig("need 0 <= thrust_min < thrust_max <= 1".into()));
        }
        Ok(())
    }
}

/// A command at one of the five entry levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Position { position: Vec3, yaw: f64 },
    Velocity { velocity: Vec3, yaw: f64 },
    /// Collective thrust in newtons and attitude setpoint.
    Attitude { thrust: f64, attitude: Quat },
    /// Collective thrust in newtons and body-rate setpoint.
    BodyRate { thrust: f64, rate: Vec3 },
    /// Per-rotor normalized throttles.
    RotorThrottle { throttle: [f64; 4] },
}

impl Command {
    pub fn mode(&self) -> ControlMode {
        match self {
            Command::Position { .. } => ControlMode::PY,
            Command::Velocity { .. } => ControlMode::LV,
            Command::Attitude { .. } => ControlMode::CTA,
            Command::BodyRate { .. } => ControlMode::CTBR,
            Command::RotorThrottle { .. } => ControlMode::SRT,
        }
    }

    /// Builds a command from its flat encoding:
    /// PY `(x, y, z, yaw)`, LV `(vx, vy, vz, yaw)`, CTA `(T, qw, qx, qy, qz)`,
    /// CTBR `(T, wx, wy, wz)`, SRT `(u0, u1, u2, u3)`.
    pub fn from_slice(mode: ControlMode, data: &[f64]) -> Result<Self> {
        let dim = mode.command_dim();
        if data.len() != dim {
            return Err(Error::RejectedCommand(format!(
                "{mode} command needs {dim} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::RejectedCommand("non-finite command".into()));
        }
        Ok(match mode {
            ControlMode::PY => Command::Position {
                position: Vec3::new(data[0], data[1], data[2]),
                yaw: data[3],
            },
            ControlMode::LV => Command::Velocity {
                velocity: Vec3::new(data[0], data[1], data[2]),
                yaw: data[3],
            },
            ControlMode::CTA => {
                let q = Quat::new(data[1], data[2], data[3], data[4])
                    .try_normalize()
                    .ok_or_else(|| Error::RejectedCommand("zero-norm attitude quaternion".into()))?;
                Command::Attitude { thrust: data[0], attitude: q }
            }
            ControlMode::CTBR => Command::BodyRate {
                thrust: data[0],
                rate: Vec3::new(data[1], data[2], data[3]),
            },
            ControlMode::SRT => Command::RotorThrottle { throttle: [data[0], data[1], data[2], data[3]] },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorCommand {
    /// Normalized rotor throttles in `[0, 1]`.
    pub throttle: [f64; 4],
    /// Rotor speed commands, rad/s.
    pub omega_cmd: [f64; 4],
}

impl ActuatorCommand {
    /// Mean throttle, i.e. normalized collective thrust.
    pub fn collective(&self) -> f64 {
        self.throttle.iter().sum::<f64>() / 4.0
    }
}

/// Per-vehicle integrators and loop memory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    pub vel_integral: Vec3,
    pub prev_velocity: Option<Vec3>,
    pub rate_integral: Vec3,
    pub prev_rate: Option<Vec3>,
    pub last_attitude_sp: Option<Quat>,
    /// Set when the last velocity-loop call hit a near-zero thrust vector.
    pub degenerate_setpoint: bool,
}

impl ControllerState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn is_finite(&self) -> bool {
        self.vel_integral.iter().all(|x| x.is_finite()) && self.rate_integral.iter().all(|x| x.is_finite())
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

fn clamp_components(v: Vec3, bound: f64) -> Vec3 {
    v.map(|x| x.clamp(-bound, bound))
}

/// Proportional position loop with a speed limit.
pub fn position_loop(pos_err: &Vec3, gains: &ControllerGains) -> Vec3 {
    clamp_norm(Vec3::from(gains.pos_p).component_mul(pos_err), gains.max_vel)
}

/// Attitude setpoint whose body z axis is `body_z` and whose heading is `yaw`.
pub fn attitude_from_thrust_dir(body_z: &Vec3, yaw: f64) -> Quat {
    let x_c = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut y_b = body_z.cross(&x_c);
    if y_b.norm() < 1e-9 {
        y_b = body_z.cross(&Vec3::new(-yaw.sin(), yaw.cos(), 0.0)).cross(body_z);
    }
    let y_b = y_b.normalize();
    let x_b = y_b.cross(body_z);
    quat_from_rot(&Mat3::from_columns(&[x_b, y_b, *body_z]))
}

const MIN_THRUST_VECTOR: f64 = 1e-6;

/// Velocity PID → desired specific force → (collective thrust N, attitude setpoint).
pub fn velocity_loop(
    vel_sp: &Vec3,
    velocity: &Vec3,
    yaw_sp: f64,
    ctrl: &mut ControllerState,
    gains: &ControllerGains,
    params: &QuadParams,
    dt: f64,
) -> (f64, Quat) {
    let err = vel_sp - velocity;
    ctrl.vel_integral = clamp_components(ctrl.vel_integral + err * dt, gains.vel_int_max);
    let accel = match ctrl.prev_velocity {
        Some(prev) if dt > 0.0 => (velocity - prev) / dt,
        _ => Vec3::zeros(),
    };
    ctrl.prev_velocity = Some(*velocity);

    let acc_sp = Vec3::from(gains.vel_p).component_mul(&err)
        + Vec3::from(gains.vel_i).component_mul(&ctrl.vel_integral)
        - Vec3::from(gains.vel_d).component_mul(&accel);

    let g = params.gravity_vec();
    let g_norm = g.norm();
    let up = if g_norm > 0.0 { -g / g_norm } else { Vec3::z() };
    let thrust_vec = acc_sp - g;
    let full_scale = 4.0 * params.f_rotor_max;

    let t_norm = thrust_vec.norm();
    if t_norm < MIN_THRUST_VECTOR || g_norm == 0.0 {
        ctrl.degenerate_setpoint = true;
        let q = ctrl.last_attitude_sp.unwrap_or_else(|| Quat::from_yaw(yaw_sp));
        return (gains.thrust_min * full_scale, q);
    }
    ctrl.degenerate_setpoint = false;

    let mut body_z = thrust_vec / t_norm;
    let mut magnitude = t_norm;
    let cos_max = gains.max_tilt.cos();
    if body_z.dot(&up) < cos_max {
        let horizontal = body_z - up * body_z.dot(&up);
        let h_dir = if horizontal.norm() > 1e-12 { horizontal.normalize() } else { Vec3::zeros() };
        body_z = if h_dir == Vec3::zeros() {
            up
        } else {
            (up * cos_max + h_dir * gains.max_tilt.sin()).normalize()
        };
        // Keep the vertical component of the demand.
        magnitude = (thrust_vec.dot(&up) / body_z.dot(&up)).max(0.0);
    }

    let throttle = (gains.hover_throttle * magnitude / g_norm).clamp(gains.thrust_min, gains.thrust_max);
    let q_sp = attitude_from_thrust_dir(&body_z, yaw_sp);
    ctrl.last_attitude_sp = Some(q_sp);
    (throttle * full_scale, q_sp)
}

/// Quaternion-error attitude controller producing a body-rate setpoint.
pub fn attitude_loop(attitude: &Quat, attitude_sp: &Quat, gains: &ControllerGains) -> Vec3 {
    let q_err = quat_mul(&attitude.conjugate(), attitude_sp);
    let sign = if q_err.w < 0.0 { -1.0 } else { 1.0 };
    let rate = q_err.vector() * (2.0 * gains.att_p * sign);
    clamp_components(rate, gains.max_rate)
}

/// Body-rate PID with integrator clamping; returns body torque (N·m).
pub fn rate_loop(
    rate: &Vec3,
    rate_sp: &Vec3,
    ctrl: &mut ControllerState,
    gains: &ControllerGains,
    dt: f64,
) -> Vec3 {
    let err = rate_sp - rate;
    ctrl.rate_integral = clamp_components(ctrl.rate_integral + err * dt, gains.rate_int_max);
    let rate_dot = match ctrl.prev_rate {
        Some(prev) if dt > 0.0 => (rate - prev) / dt,
        _ => Vec3::zeros(),
    };
    ctrl.prev_rate = Some(*rate);
    Vec3::from(gains.rate_p).component_mul(&err)
        + Vec3::from(gains.rate_i).component_mul(&ctrl.rate_integral)
        - Vec3::from(gains.rate_d).component_mul(&rate_dot)
}

/// Rows map per-rotor thrusts to `(F_z, τ_x, τ_y, τ_z)`.
pub fn allocation_matrix(params: &QuadParams) -> Matrix4<f64> {
    let k = params.drag_coeff / params.thrust_coeff;
    let mut a = Matrix4::zeros();
    for i in 0..4 {
        let r = params.rotor_position(i);
        a[(0, i)] = 1.0;
        a[(1, i)] = r.y;
        a[(2, i)] = -r.x;
        a[(3, i)] = params.spin_sign[i] * k;
    }
    a
}

/// Largest `k ∈ [0, 1]` with `0 <= base + k·delta <= f_max` for every rotor.
fn max_feasible_scale(base: &Vector4<f64>, delta: &Vector4<f64>, f_max: f64) -> f64 {
    let mut k: f64 = 1.0;
    for i in 0..4 {
        let d = delta[i];
        if d > 0.0 {
            k = k.min((f_max - base[i]) / d);
        } else if d < 0.0 {
            k = k.min(base[i] / -d);
        }
    }
    k.clamp(0.0, 1.0)
}

/// Thrust-priority allocation: collective thrust is preserved, yaw torque is
/// sacrificed first, then roll/pitch torque.
pub fn mixer(thrust: f64, torque: &Vec3, params: &QuadParams) -> ActuatorCommand {
    let f_max = params.f_rotor_max;
    let inv = allocation_matrix(params)
        .try_inverse()
        .expect("rotor geometry must give an invertible allocation");
    let thrust = if thrust.is_finite() { thrust.clamp(0.0, 4.0 * f_max) } else { 0.0 };
    let torque = if torque.iter().all(|x| x.is_finite()) { *torque } else { Vec3::zeros() };

    let with_xy = inv * Vector4::new(thrust, torque.x, torque.y, 0.0);
    let yaw_part = inv * Vector4::new(0.0, 0.0, 0.0, torque.z);
    let feasible = |f: &Vector4<f64>| f.iter().all(|&x| (-1e-12..=f_max + 1e-12).contains(&x));

    let forces = if feasible(&with_xy) {
        let k = max_feasible_scale(&with_xy, &yaw_part, f_max);
        with_xy + yaw_part * k
    } else {
        let base = inv * Vector4::new(thrust, 0.0, 0.0, 0.0);
        let xy_part = inv * Vector4::new(0.0, torque.x, torque.y, 0.0);
        let k = max_feasible_scale(&base, &xy_part, f_max);
        base + xy_part * k
    };

    let mut throttle = [0.0; 4];
    let mut omega_cmd = [0.0; 4];
    for i in 0..4 {
        let f = forces[i].clamp(0.0, f_max);
        throttle[i] = f / f_max;
        omega_cmd[i] = (f / params.thrust_coeff).sqrt().min(params.omega_max);
    }
    ActuatorCommand { throttle, omega_cmd }
}

/// Converts normalized throttles to an actuator command without mixing.
pub fn throttle_command(throttle: &[f64; 4], params: &QuadParams) -> ActuatorCommand {
    let mut out = [0.0; 4];
    let mut omega_cmd = [0.0; 4];
    for i in 0..4 {
        let u = if throttle[i].is_finite() { throttle[i].clamp(0.0, 1.0) } else { 0.0 };
        out[i] = u;
        omega_cmd[i] = (u * params.f_rotor_max / params.thrust_coeff).sqrt().min(params.omega_max);
    }
    ActuatorCommand { throttle: out, omega_cmd }
}

/// Runs the loops below the command's entry level.
pub fn run_command(
    command: &Command,
    state: &QuadState,
    ctrl: &mut ControllerState,
    gains: &ControllerGains,
    params: &QuadParams,
    dt: f64,
) -> ActuatorCommand {
    let (thrust, rate_sp) = match *command {
        Command::RotorThrottle { throttle } => return throttle_command(&throttle, params),
        Command::BodyRate { thrust, rate } => (thrust, rate),
        Command::Attitude { thrust, attitude } => {
            (thrust, attitude_loop(&state.attitude, &attitude, gains))
        }
        Command::Velocity { velocity, yaw } => {
            let (t, q) = velocity_loop(&velocity, &state.velocity, yaw, ctrl, gains, params, dt);
            (t, attitude_loop(&state.attitude, &q, gains))
        }
        Command::Position { position, yaw } => {
            let v_sp = position_loop(&(position - state.position), gains);
            let (t, q) = velocity_loop(&v_sp, &state.velocity, yaw, ctrl, gains, params, dt);
            (t, attitude_loop(&state.attitude, &q, gains))
        }
    };
    let torque = rate_loop(&state.body_rate, &rate_sp, ctrl, gains, dt);
    mixer(thrust, &torque, params)
}

/// Single-vehicle update from a flat command vector.
pub fn update(
    mode: ControlMode,
    data: &[f64],
    state: &QuadState,
    ctrl: &mut ControllerState,
    gains: &ControllerGains,
    params: &QuadParams,
    dt: f64,
) -> Result<ActuatorCommand> {
    let command = Command::from_slice(mode, data)?;
    Ok(run_command(&command, state, ctrl, gains, params, dt))
}

/// Batched update over `states.len()` vehicles; `commands` is row-major
/// `n × mode.command_dim()`. Result order matches input order regardless of
/// how rayon partitions the work.
pub fn update_batch(
    mode: ControlMode,
    commands: &[f64],
    states: &[QuadState],
    ctrl: &mut [ControllerState],
    gains: &ControllerGains,
    params: &QuadParams,
    dt: f64,
) -> Result<Vec<ActuatorCommand>> {
    let dim = mode.command_dim();
    if commands.len() != states.len() * dim {
        return Err(Error::Shape { expected: states.len() * dim, got: commands.len() });
    }
    if ctrl.len() != states.len() {
        return Err(Error::Shape { expected: states.len(), got: ctrl.len() });
    }
    states
        .par_iter()
        .zip(ctrl.par_iter_mut())
        .zip(commands.par_chunks(dim))
        .map(|((s, c), cmd)| update(mode, cmd, s, c, gains, params, dt))
        .collect()
}
