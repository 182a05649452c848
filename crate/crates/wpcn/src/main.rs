use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use wpcn::bench::{render_csv, run_sweep, ScenarioConfig};
use wpcn::numerics::DiscreteExp;
use wpcn::scenario::sample_rician_matrix;
use wpcn::wet::{incident_power, mrt_precoder, solve_fair_beamforming};
use wpcn::wit::{collision_probability, optimal_pilot_count};
use wpcn::{Error, Result};

/// Outage benchmarks for a wirelessly powered network: energy beamforming
/// against blind antenna switching, zero-forcing against MMSE decoding.
#[derive(Parser)]
#[command(name = "wpcn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the parameter sweep described by a scenario file and emit a
    /// comma-delimited result table.
    Sweep {
        /// Scenario file (TOML; unknown keys rejected, missing keys
        /// default to the reference setup).
        #[arg(long)]
        config: PathBuf,
        /// Write the table here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Size the shared pilot pool for a collision target and print the plan.
    PilotPlan {
        /// Number of devices sharing the pool.
        #[arg(long)]
        devices: usize,
        /// Highest acceptable collision probability, in (0,1).
        #[arg(long)]
        target_collision: f64,
        /// Message arrival rate per coherence block, in (0,1).
        #[arg(long)]
        traffic_rate: f64,
        /// Uplink slot duration in seconds.
        #[arg(long, default_value_t = 0.02)]
        slot_time: f64,
        /// Coherence block duration in seconds.
        #[arg(long, default_value_t = 0.4)]
        coherence_time: f64,
        /// Fixed-point stopping tolerance.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Draw one downlink channel realization from a scenario and solve the
    /// fair energy-beamforming problem on it.
    SolveEb {
        /// Scenario file; omitted means the reference setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Solver duality-gap tolerance override.
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &PathBuf) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_toml_str(&text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep { config, output, seed, trials } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(trials) = trials {
                cfg.trials = trials;
            }
            let table = run_sweep(&cfg)?;
            let text = render_csv(&table);
            match output {
                Some(path) => std::fs::write(&path, text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::PilotPlan {
            devices,
            target_collision,
            traffic_rate,
            slot_time,
            coherence_time,
            tol,
        } => {
            let traffic = DiscreteExp::new(traffic_rate)?;
            let plan = optimal_pilot_count(
                devices,
                target_collision,
                &traffic,
                slot_time,
                coherence_time,
                tol,
            )?;
            let achieved = if plan.num_sequences >= devices {
                0.0
            } else {
                collision_probability(
                    devices,
                    plan.num_sequences,
                    &traffic,
                    slot_time,
                    coherence_time,
                )?
            };
            println!("pilot_sequences: {}", plan.num_sequences);
            println!("reuse_factor: {:.6}", plan.reuse_factor);
            println!("collision_probability: {:.6e}", achieved);
            println!("target_collision: {:.6e}", plan.target_collision);
            println!("iterations: {}", plan.iterations_used);
            Ok(())
        }
        Command::SolveEb { config, seed, tol } => {
            let cfg = match config {
                Some(path) => load_config(&path)?,
                None => ScenarioConfig::default(),
            };
            let params = cfg.system_params();
            params.validate()?;
            let deployment = cfg.deployment()?;
            let mut rng = ChaCha12Rng::seed_from_u64(seed.unwrap_or(cfg.seed));
            let h = sample_rician_matrix(
                params.antennas_tx,
                deployment.num_devices(),
                params.rician_k,
                &mut rng,
            );
            let channels: Vec<DVector<Complex<f64>>> =
                (0..deployment.num_devices()).map(|i| h.column(i).into_owned()).collect();
            let solved = solve_fair_beamforming(
                &channels,
                deployment.gains(),
                params.hap_power,
                tol.unwrap_or(cfg.solver_tol),
                20_000,
            )?;
            // Matched single-beam reference aimed at the weakest device.
            let mrt = mrt_precoder(&channels[deployment.worst_index()])?;
            let mrt_floor = (0..deployment.num_devices())
                .map(|i| {
                    incident_power(&mrt, &channels[i], deployment.gains()[i], params.hap_power)
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            println!("devices: {}", deployment.num_devices());
            println!("transmit_antennas: {}", params.antennas_tx);
            println!("worst_incident_power_w: {:.6e}", solved.objective);
            println!("beams: {}", solved.beams.len());
            println!("matched_single_beam_floor_w: {:.6e}", mrt_floor);
            Ok(())
        }
    }
}
