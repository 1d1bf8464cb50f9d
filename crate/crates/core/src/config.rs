//! Structured configuration file (TOML) with sections `sim`, `controller`,
//! `task.<name>`, `dr` and `camera`. Every key is optional; missing keys take
//! their defaults. `QUADGYM_SEED` in the environment overrides `sim.seed`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControlMode, ControllerGains};
use crate::dynamics::QuadParams;
use crate::error::{Error, Result};
use crate::tasks::{
    AvoidRewardGains, Bounds, HitRewardGains, HoverRewardGains, PlanRewardGains, ProjectileConfig,
    TaskKind, TemporalMargin, TerminationConfig, TrackRewardGains,
};
use crate::world::{CameraModel, DepthNoise, ForestConfig};

pub const SEED_ENV_VAR: &str = "QUADGYM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_envs: usize,
    /// Dynamics and control step, s.
    pub dt: f64,
    /// Depth is re-rendered every `sensor_decimation` steps.
    pub sensor_decimation: usize,
    pub task: TaskKind,
    pub mode: ControlMode,
    pub max_episode_steps: usize,
    pub seed: u64,
    pub vehicle: QuadParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_envs: 4,
            dt: 0.01,
            sensor_decimation: 4,
            task: TaskKind::Hovering,
            mode: ControlMode::CTBR,
            max_episode_steps: 1000,
            seed: 0,
            vehicle: QuadParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoverTask {
    pub target: [f64; 3],
    pub yaw: f64,
    pub rewards: HoverRewardGains,
}

impl Default for HoverTask {
    fn default() -> Self {
        Self { target: [0.0, 0.0, 1.0], yaw: 0.0, rewards: HoverRewardGains::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackTask {
    /// Mean speed along the figure-eight, m/s.
    pub speed: f64,
    /// Time between consecutive look-ahead points, s.
    pub ref_spacing: f64,
    pub rewards: TrackRewardGains,
}

impl Default for TrackTask {
    fn default() -> Self {
        Self { speed: 1.6, ref_spacing: 0.1, rewards: TrackRewardGains::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitTask {
    pub start: [f64; 3],
    pub balloon_bounds: Bounds,
    pub rewards: HitRewardGains,
}

impl Default for HitTask {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0, 1.0],
            balloon_bounds: Bounds { min: [2.0, -3.0, 0.5], max: [6.0, 3.0, 2.5] },
            rewards: HitRewardGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvoidTask {
    pub start: [f64; 3],
    pub projectile: ProjectileConfig,
    /// Depth clearance below which the vehicle counts as struck, m.
    pub crash_distance: f64,
    pub rewards: AvoidRewardGains,
}

impl Default for AvoidTask {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0, 1.0],
            projectile: ProjectileConfig::default(),
            crash_distance: 0.1,
            rewards: AvoidRewardGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanTask {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub forest: ForestConfig,
    pub rewards: PlanRewardGains,
}

impl Default for PlanTask {
    fn default() -> Self {
        Self {
            start: [-6.0, 0.0, 1.5],
            goal: [6.0, 0.0, 1.5],
            forest: ForestConfig::default(),
            rewards: PlanRewardGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfigs {
    pub hovering: HoverTask,
    pub tracking: TrackTask,
    pub target_hitting: HitTask,
    pub avoidance: AvoidTask,
    pub planning: PlanTask,
    pub termination: TerminationConfig,
}

/// Domain randomization switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrConfig {
    /// Side of the cube the start position is drawn from, m (0 disables).
    pub init_cube: f64,
    /// Max absolute initial roll/pitch/yaw perturbation, rad.
    pub init_attitude: f64,
    /// Max absolute initial velocity per axis, m/s.
    pub init_velocity: f64,
    /// Std-dev of the per-episode constant wind force per axis, N.
    pub wind_sigma: f64,
    /// Std-dev of the per-step wind jitter per axis, N.
    pub wind_jitter_sigma: f64,
    pub depth: DepthNoise,
    pub temporal_margin: TemporalMargin,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self {
            init_cube: 2.0,
            init_attitude: 0.1,
            init_velocity: 0.2,
            wind_sigma: 0.05,
            wind_jitter_sigma: 0.0,
            depth: DepthNoise::default(),
            temporal_margin: TemporalMargin::default(),
        }
    }
}

impl DrConfig {
    /// All randomization disabled: nominal starts, no wind, clean depth, no timing offset.
    pub fn off() -> Self {
        Self {
            init_cube: 0.0,
            init_attitude: 0.0,
            init_velocity: 0.0,
            wind_sigma: 0.0,
            wind_jitter_sigma: 0.0,
            depth: DepthNoise::off(),
            temporal_margin: TemporalMargin { enabled: false, ..TemporalMargin::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimConfig,
    pub controller: ControllerGains,
    pub task: TaskConfigs,
    pub dr: DrConfig,
    pub camera: CameraModel,
}

impl Config {
    pub fn for_task(task: TaskKind, mode: ControlMode) -> Self {
        let mut c = Self::default();
        c.sim.task = task;
        c.sim.mode = mode;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if s.n_envs < 1 {
            return Err(Error::InvalidConfig("sim.n_envs must be >= 1".into()));
        }
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::InvalidConfig("sim.dt must be positive".into()));
        }
        if s.sensor_decimation < 1 || s.max_episode_steps < 1 {
            return Err(Error::InvalidConfig(
                "sim.sensor_decimation and sim.max_episode_steps must be >= 1".into(),
            ));
        }
        s.vehicle.validate()?;
        self.controller.validate()?;
        self.camera.validate()?;
        let dr = &self.dr;
        let nonneg = [dr.init_cube, dr.init_attitude, dr.init_velocity, dr.wind_sigma, dr.wind_jitter_sigma];
        if !nonneg.iter().all(|x| *x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidConfig("dr magnitudes must be finite and >= 0".into()));
        }
        if !(self.task.tracking.speed > 0.0 && self.task.tracking.ref_spacing > 0.0) {
            return Err(Error::InvalidConfig("tracking speed and ref_spacing must be positive".into()));
        }
        let p = &self.task.avoidance.projectile;
        if !(p.speed_min > 0.0 && p.speed_min <= p.speed_max && p.radius > 0.0) {
            return Err(Error::InvalidConfig("invalid projectile speed range or radius".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a config file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.apply_env_overrides()?;
        Ok(cfg)
    }

    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV_VAR) {
            self.sim.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV_VAR}={v} is not a u64")))?;
        }
        Ok(())
    }

    /// Stable 64-bit digest of the serialized configuration.
    pub fn hash(&self) -> u64 {
        let text = self.to_toml_string().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}
