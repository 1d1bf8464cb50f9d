//! Vectorized quadrotor flight simulator.
//!
//! The crate is organized bottom-up:
//!
//! - [`math`]: quaternion algebra.
//! - [`dynamics`]: rigid-body model with rotor thrust/drag and motor lag.
//! - [`control`]: cascade controller with five command entry levels and a thrust mixer.
//! - [`frames`]: frame conversions and observation vectors.
//! - [`tasks`]: rewards, reference trajectory, spawners, termination.
//! - [`world`]: analytic scenes, depth ray casting, depth noise.
//! - [`config`]: the TOML configuration file.
//! - [`env`]: the batched environment manager.
//! - [`pilot`]: a scripted classical pilot for every task and mode.
//! - [`policy`]: feed-forward policy runtime.
//! - [`trace`]: per-step CSV traces.
//! - [`experiments`]: closed-loop checks and the five-task regression.
//! - [`bridge`]: the socket protocol serving a [`env::VecEnv`].

pub mod bridge;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiments;
pub mod frames;
pub mod math;
pub mod pilot;
pub mod policy;
pub mod tasks;
pub mod trace;
pub mod world;

pub use config::Config;
pub use control::{ActuatorCommand, Command, ControlMode, ControllerGains, ControllerState};
pub use dynamics::{ExternalWrench, QuadParams, QuadState, StateDerivative};
pub use env::{StepInfo, StepResult, VecEnv};
pub use error::{Error, Result};
pub use math::{Quat, Vec3};
pub use policy::PolicyWeights;
pub use tasks::{EpisodeOutcome, TaskKind};
pub use world::{CameraModel, DepthImage, Primitive, Scene};
pub use trace::TraceRecord;
