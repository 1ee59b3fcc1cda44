//! Command-line front end: run scenario files, sweep a parameter, solve the
//! centralized oracle, or inspect the delay-augmented consensus spectrum.
//!
//! Exit codes: 0 on success (run: converged), 2 when a run exhausts its
//! iteration budget without meeting the tolerances, 1 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use dtac_core::scenario::{run_scenario_loaded, sweep, Scenario, SweepParam};
use dtac_core::{build_augmented, solve_dual_bisection, spectral_radius_check};

#[derive(Parser)]
#[command(
    name = "dtac",
    version,
    about = "Distributed resource allocation under network delays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamKind {
    #[value(name = "tau_bar")]
    TauBar,
    C,
    Seed,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario and write trajectory.csv, series.csv, summary.txt.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the scenario's run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's iteration budget.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Re-run a scenario once per value of one parameter, writing sweep.csv.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        param: ParamKind,
        /// Comma-separated values for the swept parameter.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Solve the centralized dual problem for a scenario and print it.
    Oracle { scenario: PathBuf },
    /// Print spectral radii of the scenario's delay-augmented consensus
    /// matrix against the homogeneous-delay prediction.
    Spectral { scenario: PathBuf },
}

fn load(path: &Path, seed: Option<u64>, max_iters: Option<usize>) -> anyhow::Result<Scenario> {
    let mut scenario =
        Scenario::from_file(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        scenario.config.seed = seed;
    }
    if let Some(max_iters) = max_iters {
        scenario.config.max_iters = max_iters;
    }
    Ok(scenario)
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            out_dir,
            seed,
            max_iters,
        } => {
            let scenario = load(&scenario, seed, max_iters)?;
            let outcome = run_scenario_loaded(&scenario, &out_dir)?;
            println!("scenario {}", outcome.name);
            println!("iterations_run {}", outcome.record.iterations_run);
            println!("converged {}", outcome.record.converged);
            println!(
                "final_d_bar {}",
                outcome.record.d_bar(outcome.record.len() - 1)
            );
            println!("primal_gap {}", outcome.gap.primal);
            println!("dual_gap {}", outcome.gap.dual);
            println!("objective_gap {}", outcome.gap.objective);
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            Ok(if outcome.record.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Sweep {
            scenario,
            param,
            values,
            out_dir,
            seed,
            max_iters,
        } => {
            let scenario = load(&scenario, seed, max_iters)?;
            let parse_all = |values: &[String]| -> anyhow::Result<SweepParam> {
                let parsed = match param {
                    ParamKind::TauBar => SweepParam::TauBar(
                        values
                            .iter()
                            .map(|v| v.parse().context("tau_bar values must be integers"))
                            .collect::<anyhow::Result<_>>()?,
                    ),
                    ParamKind::C => SweepParam::C(
                        values
                            .iter()
                            .map(|v| v.parse().context("c values must be numbers"))
                            .collect::<anyhow::Result<_>>()?,
                    ),
                    ParamKind::Seed => SweepParam::Seed(
                        values
                            .iter()
                            .map(|v| v.parse().context("seed values must be integers"))
                            .collect::<anyhow::Result<_>>()?,
                    ),
                };
                Ok(parsed)
            };
            let param = parse_all(&values)?;
            let path = sweep(&scenario, &param, &out_dir)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { scenario } => {
            let scenario = load(&scenario, None, None)?;
            let solution = solve_dual_bisection(&scenario.problem)?;
            println!("x_star {}", solution.x_star);
            println!("objective {}", solution.objective);
            println!("residual {}", solution.residual);
            println!("nonunique {}", solution.nonunique);
            for (i, y) in solution.y_star.iter().enumerate() {
                println!("y_star {i} {y}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectral { scenario } => {
            let scenario = load(&scenario, None, None)?;
            let augmented = build_augmented(&scenario.network, &scenario.delays);
            let report = spectral_radius_check(&augmented);
            println!("n {}", scenario.network.n);
            println!("tau_bar {}", report.tau_bar);
            println!("rho_w_tilde {}", report.rho_w_tilde);
            println!("rho_pw_tilde {}", report.rho_pw_tilde);
            println!("homogeneous_prediction {}", report.homogeneous_prediction);
            println!("is_contractive {}", report.is_contractive);
            println!("bound_satisfied {}", report.bound_satisfied);
            match report.matches_homogeneous_law {
                Some(matches) => println!("matches_homogeneous_law {matches}"),
                None => println!("matches_homogeneous_law -"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
