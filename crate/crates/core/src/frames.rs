//! Frame conversions and per-task observation vectors.
//!
//! Layouts (index ranges are half-open):
//!
//! | task | dim | layout |
//! |------|-----|--------|
//! | hovering / target hitting | 18 | `R` row-major `0..9`, `p* − p` `9..12`, `v* − v` `12..15`, `ω* − ω` `15..18` |
//! | tracking | 48 | `R` `0..9`, `p` `9..12`, `v` `12..15`, `ω` `15..18`, 10 reference points `18..48` |
//! | avoidance / planning | 46 | goal dir `0..3`, (roll, pitch, yaw) `3..6`, `v_E` `6..9`, `ω_E` `9..12`, last action `12..16`, depth feature `16..46` |

use crate::dynamics::QuadState;
use crate::math::{rot_from_quat, Mat3, Quat, Vec3};
use crate::tasks::TaskKind;
use crate::world::DepthImage;

pub use crate::math::rot_from_quat as rotation_matrix;

pub const HOVER_OBS_DIM: usize = 18;
pub const TRACK_OBS_DIM: usize = 48;
pub const EGO_OBS_DIM: usize = 46;
pub const REF_POINTS: usize = 10;
pub const FEATURE_ROWS: usize = 5;
pub const FEATURE_COLS: usize = 6;
pub const FEATURE_DIM: usize = FEATURE_ROWS * FEATURE_COLS;
/// Depth normalization constant (truncation range), meters.
pub const DEPTH_NORMALIZER: f64 = 4.5;

/// Flat observation vector tagged with its task.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub task: TaskKind,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn obs_dim(task: TaskKind) -> usize {
    match task {
        TaskKind::Hovering | TaskKind::TargetHitting => HOVER_OBS_DIM,
        TaskKind::Tracking => TRACK_OBS_DIM,
        TaskKind::Avoidance | TaskKind::Planning => EGO_OBS_DIM,
    }
}

pub fn flatten_rot(r: &Mat3) -> [f64; 9] {
    [
        r[(0, 0)], r[(0, 1)], r[(0, 2)],
        r[(1, 0)], r[(1, 1)], r[(1, 2)],
        r[(2, 0)], r[(2, 1)], r[(2, 2)],
    ]
}

/// Yaw-only frame whose z axis is world up and whose x axis is the horizontal
/// projection of body x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFrame {
    pub yaw: f64,
}

impl EgoFrame {
    pub fn from_attitude(q: &Quat) -> Self {
        Self { yaw: q.yaw() }
    }

    pub fn x_axis(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    pub fn to_ego(&self, v_w: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * v_w.x + s * v_w.y, -s * v_w.x + c * v_w.y, v_w.z)
    }
}

pub fn world_to_ego(q: &Quat, v_w: &Vec3) -> Vec3 {
    EgoFrame::from_attitude(q).to_ego(v_w)
}

const GIMBAL_LIMIT: f64 = 89.9 * std::f64::consts::PI / 180.0;

/// Intrinsic Z-Y-X angles `(roll, pitch, yaw)`. Near gimbal lock the yaw
/// falls back to `fallback_yaw`.
pub fn euler_zyx(q: &Quat, fallback_yaw: f64) -> [f64; 3] {
    let r = rot_from_quat(q);
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if pitch.abs() > GIMBAL_LIMIT {
        return [0.0, pitch, fallback_yaw];
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    [roll, pitch, yaw]
}

pub fn obs_hover(state: &QuadState, target: &QuadState) -> Observation {
    let mut v = Vec::with_capacity(HOVER_OBS_DIM);
    v.extend_from_slice(&flatten_rot(&rot_from_quat(&state.attitude)));
    v.extend((target.position - state.position).iter());
    v.extend((target.velocity - state.velocity).iter());
    v.extend((target.body_rate - state.body_rate).iter());
    Observation { task: TaskKind::Hovering, values: v }
}

pub fn obs_track(state: &QuadState, window: &[Vec3; REF_POINTS]) -> Observation {
    let mut v = Vec::with_capacity(TRACK_OBS_DIM);
    v.extend_from_slice(&flatten_rot(&rot_from_quat(&state.attitude)));
    v.extend(state.position.iter());
    v.extend(state.velocity.iter());
    v.extend(state.body_rate.iter());
    for p in window {
        v.extend(p.iter());
    }
    Observation { task: TaskKind::Tracking, values: v }
}

/// Ego-centric observation; `last_action` is truncated or zero-padded to 4 entries.
pub fn obs_ego(
    state: &QuadState,
    goal: &Vec3,
    last_action: &[f64],
    depth_feature: &[f64; FEATURE_DIM],
    task: TaskKind,
) -> Observation {
    let ego = EgoFrame::from_attitude(&state.attitude);
    let to_goal = ego.to_ego(&(goal - state.position));
    let dir = if to_goal.norm() > 1e-9 { to_goal.normalize() } else { Vec3::zeros() };
    let euler = euler_zyx(&state.attitude, ego.yaw);
    let v_e = ego.to_ego(&state.velocity);
    let w_e = ego.to_ego(&crate::math::rotate_vec(&state.attitude, &state.body_rate));

    let mut v = Vec::with_capacity(EGO_OBS_DIM);
    v.extend(dir.iter());
    v.extend_from_slice(&euler);
    v.extend(v_e.iter());
    v.extend(w_e.iter());
    for i in 0..4 {
        v.push(last_action.get(i).copied().unwrap_or(0.0));
    }
    v.extend_from_slice(depth_feature);
    Observation { task, values: v }
}

/// Adaptive average pooling onto a 5×6 grid of normalized depth, row-major.
pub fn depth_feature_pool(img: &DepthImage) -> [f64; FEATURE_DIM] {
    let mut out = [0.0; FEATURE_DIM];
    let (h, w) = (img.height, img.width);
    for gr in 0..FEATURE_ROWS {
        let r0 = gr * h / FEATURE_ROWS;
        let r1 = ((gr + 1) * h).div_ceil(FEATURE_ROWS);
        for gc in 0..FEATURE_COLS {
            let c0 = gc * w / FEATURE_COLS;
            let c1 = ((gc + 1) * w).div_ceil(FEATURE_COLS);
            let mut sum = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += img.get(r, c) as f64;
                }
            }
            let count = ((r1 - r0) * (c1 - c0)).max(1) as f64;
            out[gr * FEATURE_COLS + gc] = sum / count / DEPTH_NORMALIZER;
        }
    }
    out
}

/// Samples `traj` at `t + i·spacing` for `i = 1..=10`, earliest first.
pub fn ref_window<F: Fn(f64) -> Vec3>(traj: F, t: f64, spacing: f64) -> [Vec3; REF_POINTS] {
    std::array::from_fn(|i| traj(t + (i + 1) as f64 * spacing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::lemniscate;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit_quat() -> impl Strategy<Value = Quat> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalize())
    }

    #[test]
    fn identity_flattens_to_identity() {
        assert_eq!(
            flatten_rot(&rot_from_quat(&Quat::IDENTITY)),
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn quarter_yaw_first_row() {
        let r = flatten_rot(&rot_from_quat(&Quat::from_yaw(FRAC_PI_2)));
        assert!((r[0]).abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15 && r[2].abs() < 1e-15);
    }

    #[test]
    fn ego_examples() {
        let g = Vec3::new(0.0, 0.0, -9.81);
        assert_eq!(world_to_ego(&Quat::from_euler(0.4, -0.3, 2.0), &g), g);
        let v = Vec3::new(0.3, 0.2, -0.1);
        assert_eq!(world_to_ego(&Quat::IDENTITY, &v), v);
        let e = world_to_ego(&Quat::from_yaw(FRAC_PI_2), &Vec3::x());
        assert!((e - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ego_x_axis_is_body_x_projection() {
        let q = Quat::from_euler(0.3, 0.2, -1.1);
        let bx = crate::math::rotate_vec(&q, &Vec3::x());
        let proj = Vec3::new(bx.x, bx.y, 0.0).normalize();
        assert!((EgoFrame::from_attitude(&q).x_axis() - proj).norm() < 1e-12);
    }

    #[test]
    fn euler_round_trip_and_gimbal_guard() {
        let e = euler_zyx(&Quat::from_euler(0.1, -0.4, 2.5), 0.0);
        assert!((e[0] - 0.1).abs() < 1e-12 && (e[1] + 0.4).abs() < 1e-12 && (e[2] - 2.5).abs() < 1e-12);
        let e = euler_zyx(&Quat::from_euler(0.0, FRAC_PI_2, 0.7), 0.25);
        assert_eq!(e[2], 0.25);
    }

    #[test]
    fn hover_obs_at_target() {
        let s = QuadState::at(Vec3::new(0.0, 0.0, 1.0));
        let o = obs_hover(&s, &s);
        assert_eq!(o.dim(), 18);
        assert_eq!(&o.values[..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(o.values[9..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hover_obs_position_sign_is_target_minus_current() {
        let target = QuadState::at(Vec3::new(0.0, 0.0, 1.0));
        let s = QuadState::at(Vec3::new(0.5, 0.0, 1.0));
        let o = obs_hover(&s, &target);
        assert_eq!(o.values[9], -0.5);
    }

    #[test]
    fn track_obs_layout() {
        let s = QuadState::at(Vec3::new(1.0, 2.0, 3.0));
        let k = 0.8;
        let w = ref_window(|t| lemniscate(t, k), 0.0, 0.1);
        let o = obs_track(&s, &w);
        assert_eq!(o.dim(), 48);
        assert_eq!(&o.values[9..12], &[1.0, 2.0, 3.0]);
        for i in 0..REF_POINTS {
            let p = lemniscate((i + 1) as f64 * 0.1, k);
            assert_eq!(&o.values[18 + 3 * i..21 + 3 * i], p.as_slice());
        }
    }

    #[test]
    fn ref_window_examples() {
        let w = ref_window(|_| Vec3::new(1.0, 2.0, 3.0), 5.0, 0.1);
        assert!(w.iter().all(|p| *p == Vec3::new(1.0, 2.0, 3.0)));
        let f = |t: f64| Vec3::new(t, t * t, 0.0);
        let w = ref_window(f, 2.0, 0.25);
        assert_eq!(w[0], f(2.25));
        let mut brute = Vec::new();
        let mut i = 1;
        while i <= 10 {
            brute.push(f(2.0 + i as f64 * 0.25));
            i += 1;
        }
        assert_eq!(w.to_vec(), brute);
    }

    #[test]
    fn ego_obs_examples() {
        let s = QuadState::at(Vec3::new(0.0, 0.0, 1.0));
        let feat = [0.5; FEATURE_DIM];
        let o = obs_ego(&s, &Vec3::new(4.0, 0.0, 1.0), &[0.1, 0.2, 0.3, 0.4], &feat, TaskKind::Planning);
        assert_eq!(o.dim(), 46);
        assert_eq!(&o.values[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&o.values[12..16], &[0.1, 0.2, 0.3, 0.4]);

        let yawed = QuadState { attitude: Quat::from_yaw(0.7), ..s };
        let o = obs_ego(&yawed, &Vec3::new(4.0, 0.0, 1.0), &[0.0; 4], &feat, TaskKind::Avoidance);
        assert!(o.values[3].abs() < 1e-12 && o.values[4].abs() < 1e-12);
        assert!((o.values[5] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn constant_image_pools_to_scaled_constant() {
        let img = DepthImage::filled(212, 120, 3.0);
        let f = depth_feature_pool(&img);
        assert!(f.iter().all(|&x| (x - 3.0 / 4.5).abs() < 1e-12));
    }

    #[test]
    fn left_right_gradient_gives_monotone_rows() {
        let mut img = DepthImage::filled(212, 120, 0.0);
        for r in 0..120 {
            for c in 0..212 {
                img.set(r, c, 0.1 + 4.0 * c as f32 / 211.0);
            }
        }
        let f = depth_feature_pool(&img);
        for r in 0..FEATURE_ROWS {
            for c in 1..FEATURE_COLS {
                assert!(f[r * FEATURE_COLS + c] > f[r * FEATURE_COLS + c - 1]);
            }
        }
        assert!(f.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn divisible_tiling_mean_matches_global_mean() {
        // 120 = 5·24, 210 = 6·35
        let mut img = DepthImage::filled(210, 120, 0.0);
        let mut total = 0.0;
        for r in 0..120 {
            for c in 0..210 {
                let v = 0.05 + ((r * 31 + c * 17) % 97) as f32 * 0.045;
                img.set(r, c, v);
                total += v as f64;
            }
        }
        let global = total / (120.0 * 210.0) / 4.5;
        let f = depth_feature_pool(&img);
        let pooled = f.iter().sum::<f64>() / FEATURE_DIM as f64;
        assert!((pooled - global).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(q in unit_quat()) {
            let r = rot_from_quat(&q);
            prop_assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-9);
            prop_assert!((r - rot_from_quat(&q.neg())).abs().max() < 1e-12);
        }

        #[test]
        fn ego_preserves_norm_and_z(q in unit_quat(), x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0) {
            let v = Vec3::new(x, y, z);
            let e = world_to_ego(&q, &v);
            prop_assert_eq!(e.z, v.z);
            prop_assert!((e.norm() - v.norm()).abs() < 1e-12);
        }

        #[test]
        fn observations_are_finite(q in unit_quat(), x in -5.0f64..5.0, w in -20.0f64..20.0) {
            let s = QuadState {
                position: Vec3::new(x, -x, 1.0),
                attitude: q,
                velocity: Vec3::new(w, 0.0, 0.0),
                body_rate: Vec3::new(0.0, w, w),
                ..QuadState::default()
            };
            let feat = [0.3; FEATURE_DIM];
            prop_assert!(obs_hover(&s, &QuadState::default()).is_finite());
            prop_assert!(obs_track(&s, &[Vec3::zeros(); REF_POINTS]).is_finite());
            prop_assert!(obs_ego(&s, &s.position, &[0.0; 4], &feat, TaskKind::Planning).is_finite());
        }
    }
}
