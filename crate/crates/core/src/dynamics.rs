//! Rigid-body quadrotor dynamics: rotor wrench, state derivative and RK4 stepping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{quat_mul, rotate_vec, Quat, Vec3};

pub const GRAVITY: f64 = 9.81;

/// Physical parameters of the vehicle, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    pub mass: f64,
    /// Diagonal of the inertia matrix `(I_x, I_y, I_z)`.
    pub inertia: [f64; 3],
    /// Thrust coefficient `c_l`: `f = c_l Ω²`.
    pub thrust_coeff: f64,
    /// Drag-torque coefficient `c_d`: `τ_z = σ c_d Ω²`.
    pub drag_coeff: f64,
    /// Rotor hub positions in the body frame.
    pub rotor_positions: [[f64; 3]; 4],
    /// Spin direction per rotor, `+1` or `-1`.
    pub spin_sign: [f64; 4],
    /// Motor rate gain `T_m` in `dΩ/dt = T_m (Ω_cmd - Ω)`, 1/s.
    pub motor_gain: f64,
    pub omega_max: f64,
    pub f_rotor_max: f64,
    pub gravity: [f64; 3],
    /// Optional linear body drag, force `-D v` with diagonal `D` (N·s/m).
    pub linear_drag: [f64; 3],
}

impl Default for QuadParams {
    fn default() -> Self {
        let mass = 0.4;
        let thrust_coeff = 1.5e-7;
        // 152 mm motor-to-motor diagonal, X layout, PX4 numbering.
        let a = 0.076 / std::f64::consts::SQRT_2;
        let hover = (mass * GRAVITY / (4.0 * thrust_coeff)).sqrt();
        let omega_max = 2.0 * hover;
        Self {
            mass,
            inertia: [2.2e-3, 2.2e-3, 4.0e-3],
            thrust_coeff,
            drag_coeff: 2.0e-9,
            rotor_positions: [[a, -a, 0.0], [-a, a, 0.0], [a, a, 0.0], [-a, -a, 0.0]],
            spin_sign: [1.0, 1.0, -1.0, -1.0],
            motor_gain: 40.0,
            omega_max,
            f_rotor_max: thrust_coeff * omega_max * omega_max,
            gravity: [0.0, 0.0, -GRAVITY],
            linear_drag: [0.0; 3],
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !(self.mass > 0.0) {
            return Err(Error::InvalidConfig("mass must be positive".into()));
        }
        if !self.inertia.iter().all(|&i| i > 0.0) {
            return Err(Error::InvalidConfig("inertia components must be positive".into()));
        }
        if !(self.thrust_coeff > 0.0) || !(self.drag_coeff >= 0.0) {
            return Err(Error::InvalidConfig("thrust_coeff > 0 and drag_coeff >= 0 required".into()));
        }
        if !(self.motor_gain > 0.0) || !(self.omega_max > 0.0) || !(self.f_rotor_max > 0.0) {
            return Err(Error::InvalidConfig(
                "motor_gain, omega_max and f_rotor_max must be positive".into(),
            ));
        }
        let pos = self.spin_sign.iter().filter(|&&s| s == 1.0).count();
        let neg = self.spin_sign.iter().filter(|&&s| s == -1.0).count();
        if pos != 2 || neg != 2 {
            return Err(Error::InvalidConfig("spin_sign needs two +1 and two -1 entries".into()));
        }
        let flat: Vec<f64> = self.rotor_positions.iter().flatten().copied().collect();
        if !finite(&flat) || !finite(&self.gravity) || !finite(&self.linear_drag) {
            return Err(Error::InvalidConfig("non-finite geometry or gravity".into()));
        }
        Ok(())
    }

    pub fn gravity_vec(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    pub fn rotor_position(&self, i: usize) -> Vec3 {
        Vec3::from(self.rotor_positions[i])
    }

    /// Normalized per-rotor throttle that balances gravity under the linear thrust map.
    pub fn hover_throttle(&self) -> f64 {
        self.mass * self.gravity_vec().norm() / (4.0 * self.f_rotor_max)
    }
}

/// Full vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub position: Vec3,
    /// Body-to-world rotation.
    pub attitude: Quat,
    pub velocity: Vec3,
    /// Angular velocity in the body frame.
    pub body_rate: Vec3,
    pub rotor_speed: [f64; 4],
}

impl Default for QuadState {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            attitude: Quat::IDENTITY,
            velocity: Vec3::zeros(),
            body_rate: Vec3::zeros(),
            rotor_speed: [0.0; 4],
        }
    }
}

impl QuadState {
    pub fn at(position: Vec3) -> Self {
        Self { position, ..Self::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.attitude.is_finite()
            && self.velocity.iter().all(|x| x.is_finite())
            && self.body_rate.iter().all(|x| x.is_finite())
            && self.rotor_speed.iter().all(|x| x.is_finite())
    }
}

/// Disturbance wrench: world-frame force, body-frame torque.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExternalWrench {
    pub force_w: Vec3,
    pub torque_b: Vec3,
}

impl ExternalWrench {
    pub fn force(force_w: Vec3) -> Self {
        Self { force_w, torque_b: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dp: Vec3,
    pub dq: Quat,
    pub dv: Vec3,
    pub domega: Vec3,
    pub drotor: [f64; 4],
}

/// Collective body force and torque produced by rotor speeds `omega`.
pub fn rotor_wrench(omega: &[f64; 4], params: &QuadParams) -> (Vec3, Vec3) {
    let mut force = Vec3::zeros();
    let mut torque = Vec3::zeros();
    for i in 0..4 {
        let w2 = omega[i] * omega[i];
        let f_i = Vec3::new(0.0, 0.0, params.thrust_coeff * w2);
        force += f_i;
        torque += Vec3::new(0.0, 0.0, params.spin_sign[i] * params.drag_coeff * w2);
        torque += params.rotor_position(i).cross(&f_i);
    }
    (force, torque)
}

pub fn derivative(
    state: &QuadState,
    omega_cmd: &[f64; 4],
    params: &QuadParams,
    ext: &ExternalWrench,
) -> StateDerivative {
    let (f_b, tau_b) = rotor_wrench(&state.rotor_speed, params);
    let drag = -Vec3::from(params.linear_drag).component_mul(&state.velocity);
    let dv = (rotate_vec(&state.attitude, &f_b) + ext.force_w + drag) / params.mass
        + params.gravity_vec();

    let dq = quat_mul(&state.attitude, &Quat::pure(&state.body_rate)).scale(0.5);

    let j = Vec3::from(params.inertia);
    let w = state.body_rate;
    let gyro = w.cross(&j.component_mul(&w));
    let domega = (tau_b + ext.torque_b - gyro).component_div(&j);

    let mut drotor = [0.0; 4];
    for i in 0..4 {
        drotor[i] = params.motor_gain * (omega_cmd[i] - state.rotor_speed[i]);
    }

    StateDerivative { dp: state.velocity, dq, dv, domega, drotor }
}

fn advance(state: &QuadState, d: &StateDerivative, h: f64) -> QuadState {
    let mut rotor_speed = state.rotor_speed;
    for (r, dr) in rotor_speed.iter_mut().zip(d.drotor.iter()) {
        *r += h * dr;
    }
    QuadState {
        position: state.position + d.dp * h,
        attitude: state.attitude.add(&d.dq.scale(h)),
        velocity: state.velocity + d.dv * h,
        body_rate: state.body_rate + d.domega * h,
        rotor_speed,
    }
}

/// One classical RK4 step of length `dt`, followed by quaternion renormalization
/// and rotor-speed clamping to `[0, omega_max]`.
pub fn step(
    state: &QuadState,
    omega_cmd: &[f64; 4],
    params: &QuadParams,
    ext: &ExternalWrench,
    dt: f64,
) -> Result<QuadState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut cmd = *omega_cmd;
    for c in cmd.iter_mut() {
        *c = c.clamp(0.0, params.omega_max);
    }

    let k1 = derivative(state, &cmd, params, ext);
    let k2 = derivative(&advance(state, &k1, 0.5 * dt), &cmd, params, ext);
    let k3 = derivative(&advance(state, &k2, 0.5 * dt), &cmd, params, ext);
    let k4 = derivative(&advance(state, &k3, dt), &cmd, params, ext);

    let h6 = dt / 6.0;
    let mut drotor = [0.0; 4];
    for i in 0..4 {
        drotor[i] = k1.drotor[i] + 2.0 * k2.drotor[i] + 2.0 * k3.drotor[i] + k4.drotor[i];
    }
    let sum = StateDerivative {
        dp: k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp,
        dq: k1.dq.add(&k2.dq.scale(2.0)).add(&k3.dq.scale(2.0)).add(&k4.dq),
        dv: k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv,
        domega: k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega,
        drotor,
    };
    let mut next = advance(state, &sum, h6);

    next.attitude = next.attitude.try_normalize().ok_or(Error::Diverged)?;
    for r in next.rotor_speed.iter_mut() {
        *r = r.clamp(0.0, params.omega_max);
    }
    if !next.is_finite() {
        return Err(Error::Diverged);
    }
    Ok(next)
}

/// Rotor speed at which total thrust equals weight.
pub fn hover_speed(params: &QuadParams) -> f64 {
    (params.mass * params.gravity_vec().norm() / (4.0 * params.thrust_coeff)).sqrt()
}

pub fn rotational_energy(state: &QuadState, params: &QuadParams) -> f64 {
    let j = Vec3::from(params.inertia);
    0.5 * state.body_rate.dot(&j.component_mul(&state.body_rate))
}
