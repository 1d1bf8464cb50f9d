//! `quadgym` command-line harness.
//!
//! Every command prints human-readable lines followed by a single-line JSON
//! summary on stdout. Checking commands exit with status 0 iff their checks pass.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use quadgym::experiments::{hover_test, regress, run_episodes, track_test, Driver};
use quadgym::trace::write_trace;
use quadgym::world::{raycast, Scene};
use quadgym::{Config, ControlMode, PolicyWeights, Quat, TaskKind, Vec3, VecEnv};

#[derive(Parser)]
#[command(name = "quadgym", version, about = "Vectorized quadrotor simulator harness")]
struct Cli {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run episodes with a policy file or the built-in cascade pilot and write a trace.
    Run {
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        mode: Option<ControlMode>,
        /// Policy weights (JSON); the cascade pilot flies when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_envs: Option<usize>,
        /// Trace output (CSV); the summary is written next to it as `<out>.summary.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Hover regulation from random starts with the classical cascade (PY mode).
    HoverTest {
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Figure-eight tracking with the classical cascade.
    TrackTest {
        #[arg(long, default_value_t = 1.6)]
        speed: f64,
        #[arg(long, default_value = "LV")]
        mode: ControlMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render one depth image and write the raw dump plus an ASCII preview.
    DepthDump {
        /// Scene JSON; an empty scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Vehicle pose `x,y,z,yaw[,pitch,roll]` (m, rad).
        #[arg(long, default_value = "0,0,1,0")]
        pose: String,
        /// Raw output; the preview goes to `<out>.txt`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        preview_cols: usize,
    },
    /// Fly all five tasks with the pilot and check the traces.
    Regress {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        episodes: usize,
        /// Directory for traces and `summary.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run twice and require bit-identical traces.
        #[arg(long)]
        check_determinism: bool,
    },
    /// Serve the environment over the socket protocol, one client at a time.
    Serve {
        #[arg(long, default_value = "127.0.0.1:5555")]
        addr: String,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        mode: Option<ControlMode>,
        #[arg(long)]
        n_envs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many sessions.
        #[arg(long)]
        sessions: Option<usize>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
        None => {
            let mut c = Config::default();
            c.apply_env_overrides()?;
            Ok(c)
        }
    }
}

fn apply_overrides(
    cfg: &mut Config,
    task: Option<TaskKind>,
    mode: Option<ControlMode>,
    n_envs: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    if let Some(t) = task {
        cfg.sim.task = t;
    }
    if let Some(m) = mode {
        cfg.sim.mode = m;
    }
    if let Some(n) = n_envs {
        cfg.sim.n_envs = n;
    }
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    cfg.validate()?;
    Ok(())
}

fn parse_pose(s: &str) -> Result<(Vec3, Quat)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad pose `{s}`"))?;
    if !(v.len() == 4 || v.len() == 6) || v.iter().any(|x| !x.is_finite()) {
        bail!("pose needs 4 or 6 finite values: x,y,z,yaw[,pitch,roll]");
    }
    let (pitch, roll) = if v.len() == 6 { (v[4], v[5]) } else { (0.0, 0.0) };
    Ok((Vec3::new(v[0], v[1], v[2]), Quat::from_euler(roll, pitch, v[3])))
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Cmd::Run { task, mode, policy, episodes, seed, n_envs, out } => {
            apply_overrides(&mut cfg, task, mode, n_envs, seed)?;
            let driver = match policy {
                Some(p) => {
                    let w = PolicyWeights::load(&p).with_context(|| format!("loading {}", p.display()))?;
                    Driver::Policy(w)
                }
                None => Driver::Pilot,
            };
            let mut env = VecEnv::new(cfg)?;
            if let Driver::Policy(w) = &driver {
                if w.obs_dim != env.obs_dim() || w.act_dim != env.act_dim() {
                    bail!(
                        "policy is {}→{}, environment needs {}→{}",
                        w.obs_dim,
                        w.act_dim,
                        env.obs_dim(),
                        env.act_dim()
                    );
                }
            }
            let (records, summary) = run_episodes(&mut env, &driver, episodes)?;
            write_trace(BufWriter::new(File::create(&out)?), &records)?;
            let summary_path = PathBuf::from(format!("{}.summary.json", out.display()));
            std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
            println!(
                "{} / {}: {} episodes, success rate {:.3}, mean position error {:.4} m{}",
                summary.task,
                summary.mode,
                summary.episodes,
                summary.success_rate,
                summary.mean_position_error,
                summary.med.map(|m| format!(", MED {m:.4} m")).unwrap_or_default()
            );
            println!("{}", serde_json::to_string(&summary)?);
            Ok(true)
        }
        Cmd::HoverTest { episodes, seed } => {
            let r = hover_test(&cfg, episodes, seed)?;
            for (i, e) in r.settled_errors.iter().enumerate() {
                println!("episode {i}: max error over final 0.5 s = {e:.4} m");
            }
            println!(
                "{} hover: all {} episodes within {} m after {} s",
                verdict(r.passed),
                episodes,
                r.tolerance,
                r.horizon_s
            );
            println!("{}", serde_json::to_string(&r)?);
            Ok(r.passed)
        }
        Cmd::TrackTest { speed, mode, seed } => {
            let r = track_test(&cfg, speed, mode, seed)?;
            println!(
                "{} tracking at {speed} m/s ({}): MED {:.4} m, relative {:.4} (bound {})",
                verdict(r.passed),
                r.mode,
                r.med,
                r.relative_med,
                r.bound
            );
            println!("{}", serde_json::to_string(&r)?);
            Ok(r.passed)
        }
        Cmd::DepthDump { scene, pose, out, preview_cols } => {
            let scene = match scene {
                Some(p) => Scene::from_json(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => Scene::empty(),
            };
            let (position, attitude) = parse_pose(&pose)?;
            let cam = &cfg.camera;
            let img = raycast(&scene, &cam.pose_for(&position, &attitude), cam);
            let mut w = BufWriter::new(File::create(&out)?);
            img.write_raw(&mut w)?;
            w.flush()?;
            let preview = img.ascii_preview(preview_cols, cam.max_range);
            let preview_path = PathBuf::from(format!("{}.txt", out.display()));
            std::fs::write(&preview_path, &preview)?;
            print!("{preview}");
            let center = img.get(img.height / 2, img.width / 2);
            println!(
                "{}",
                json!({
                    "width": img.width,
                    "height": img.height,
                    "min_depth": quadgym::world::min_depth(&img),
                    "center_depth": center,
                    "raw": out.display().to_string(),
                    "preview": preview_path.display().to_string(),
                })
            );
            Ok(true)
        }
        Cmd::Regress { seed, episodes, out, check_determinism } => {
            let r = regress(&cfg, seed, episodes, out.as_deref())?;
            for c in &r.cases {
                let s = &c.summary;
                println!(
                    "{} {:<15} {:<4} episodes {} success {:.2} mean error {:.4} m",
                    verdict(c.finite && c.time_monotone && c.round_trip),
                    s.task,
                    s.mode,
                    s.episodes,
                    s.success_rate,
                    s.mean_position_error
                );
            }
            let mut passed = r.passed;
            let mut deterministic = None;
            if check_determinism {
                let again = regress(&cfg, seed, episodes, None)?;
                let same = again.traces == r.traces;
                println!("{} determinism: repeated run produced identical traces", verdict(same));
                deterministic = Some(same);
                passed &= same;
            }
            let summary = json!({ "report": r, "deterministic": deterministic, "passed": passed });
            if let Some(dir) = &out {
                std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            }
            println!("{summary}");
            Ok(passed)
        }
        Cmd::Serve { addr, task, mode, n_envs, seed, sessions } => {
            apply_overrides(&mut cfg, task, mode, n_envs, seed)?;
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            let local = listener.local_addr()?;
            let env = VecEnv::new(cfg.clone())?;
            println!(
                "{}",
                json!({
                    "listening": local.to_string(),
                    "n_envs": env.n_envs(),
                    "obs_dim": env.obs_dim(),
                    "act_dim": env.act_dim(),
                    "config_hash": cfg.hash(),
                })
            );
            std::io::stdout().flush()?;
            quadgym::bridge::serve(&cfg, &listener, sessions)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
