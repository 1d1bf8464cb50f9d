//! Benchmark fixtures shared by the criterion targets.

use quadgym::{Config, ControlMode, TaskKind, VecEnv};

/// A batch of `n` environments with domain randomization on.
pub fn batch(task: TaskKind, mode: ControlMode, n: usize) -> VecEnv {
    let mut cfg = Config::for_task(task, mode);
    cfg.sim.n_envs = n;
    VecEnv::new(cfg).expect("default config is valid")
}
