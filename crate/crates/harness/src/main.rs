use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use grasp_core::kinematics::ChainModel;
use grasp_core::qp::{self, BarrierConfig, QpDump};
use grasp_core::steer::{contour_to_csv, profile_to_csv, tracking_error_profile, velocity_limit_contour, Plane};
use grasp_harness::logs::{read_step_log, write_step_log, write_summary};
use grasp_harness::policy::{MlpWeights, PolicySpec, RandomBounds};
use grasp_harness::rollout::{default_workers, run_batch};
use grasp_harness::{Scenario, WORKERS_ENV};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "graspctl", version, about = "Rollouts, QP solves and velocity-envelope analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Zero,
    Random,
    Scripted,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlaneArg {
    Xy,
    Yz,
    Zx,
}

impl From<PlaneArg> for Plane {
    fn from(p: PlaneArg) -> Self {
        match p {
            PlaneArg::Xy => Plane::Xy,
            PlaneArg::Yz => Plane::Yz,
            PlaneArg::Zx => Plane::Zx,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and write steps.csv and summary.json.
    Rollout {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "scripted")]
        policy: PolicyKind,
        /// Weight file for the mlp policy.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Worker threads; defaults to the environment variable, then the core count.
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mean joint-velocity-limit contour of the palm, as CSV.
    Contour {
        chain: PathBuf,
        #[arg(long, value_enum, default_value = "xy")]
        plane: PlaneArg,
        /// Configurations drawn uniformly within the joint limits.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 72)]
        angles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplies every joint velocity limit.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tracking-error profile of a step log, as CSV.
    Profile {
        log: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a QP dump and print the solution as JSON.
    Solve { dump: PathBuf },
    /// Check scenario files.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
}

fn emit(text: &str, out: Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rollout {
            scenario,
            policy,
            weights,
            episodes,
            workers,
            out,
            seed,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(s) = seed {
                sc.file.seed = s;
            }
            let spec = match (policy, weights) {
                (PolicyKind::Mlp, Some(w)) => PolicySpec::Mlp(Arc::new(MlpWeights::load(w)?)),
                (PolicyKind::Mlp, None) => bail!("--policy mlp needs --weights"),
                (PolicyKind::Zero, _) => PolicySpec::Zero,
                (PolicyKind::Random, _) => PolicySpec::Random(RandomBounds::default()),
                (PolicyKind::Scripted, _) => PolicySpec::Scripted,
            };
            let workers = workers.unwrap_or_else(default_workers);
            let (summary, records) = run_batch(&sc, &spec, episodes, workers, true)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_step_log(&out.join("steps.csv"), &records)?;
            write_summary(&out.join("summary.json"), &summary)?;
            println!(
                "episodes={} success_rate={:.3} mean_time_to_success={} mean_position_error={:.4} mean_orientation_error={:.4} aborted={}",
                summary.episodes,
                summary.success_rate,
                summary.mean_time_to_success.map_or("n/a".into(), |t| format!("{t:.3}")),
                summary.mean_position_error,
                summary.mean_orientation_error,
                summary.aborted
            );
        }
        Command::Contour {
            chain,
            plane,
            samples,
            angles,
            seed,
            scale,
            out,
        } => {
            if samples == 0 {
                bail!("--samples must be positive");
            }
            if !(scale > 0.0 && scale.is_finite()) {
                bail!("--scale must be positive");
            }
            let model = ChainModel::load(&chain)?;
            let (lo, hi) = (model.position_lower(), model.position_upper());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qs: Vec<DVector<f64>> = (0..samples)
                .map(|_| DVector::from_fn(model.dof(), |j, _| rng.random_range(lo[j]..=hi[j])))
                .collect();
            let qdot_max = model.velocity_upper() * scale;
            let pts = velocity_limit_contour(&model, &qs, plane.into(), &qdot_max, angles)?;
            emit(&contour_to_csv(&pts), out)?;
        }
        Command::Profile { log, bins, out } => {
            let rows = read_step_log(&log)?;
            let samples: Vec<_> = rows.iter().map(|r| r.profile_sample()).collect();
            let bins = tracking_error_profile(&samples, bins)?;
            emit(&profile_to_csv(&bins), out)?;
        }
        Command::Solve { dump } => {
            let problem = QpDump::load(&dump)?;
            let sol = qp::solve(&problem, &BarrierConfig::default(), None)?;
            let doc = serde_json::json!({
                "x": sol.x.as_slice(),
                "status": sol.status,
                "objective": sol.objective,
                "kkt_residual": sol.kkt_residual,
                "newton_iterations": sol.newton_iterations,
                "ineq_multipliers": sol.ineq_multipliers.as_slice(),
                "eq_multipliers": sol.eq_multipliers.as_slice(),
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Validate { scenarios } => {
            let mut bad = 0;
            for p in &scenarios {
                match Scenario::load(p) {
                    Ok(s) => println!(
                        "ok {} ({} joints, {} collision pairs, {} command steps)",
                        p.display(),
                        s.model.dof(),
                        s.collision.pairs.len(),
                        s.command_steps
                    ),
                    Err(e) => {
                        bad += 1;
                        eprintln!("error {}: {e}", p.display());
                    }
                }
            }
            if bad > 0 {
                bail!("{bad} of {} scenarios failed validation", scenarios.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
