//! Scenario configuration, outage composition, and the parameter-sweep
//! engine that turns one config file into a machine-readable result table.

use nalgebra::DVector;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DiscreteExp;
use crate::scenario::{ring_deployment, sample_rician_matrix, Deployment, SystemParams};
use crate::wet::{
    energy_outage_periodic, energy_outage_poisson, incident_power, solve_fair_beamforming,
    EnergyBudget, Scheme,
};
use crate::wit::{
    info_outage_periodic, info_outage_poisson, optimal_pilot_count, pilot_cost_periodic,
    CollisionTerm, Equalizer,
};

/// Iteration budget handed to the fair-beamforming solver inside energy
/// simulations; stalled solves fall back to their best iterate.
const SWEEP_SOLVER_ITERS: usize = 400;

/// Uplink traffic model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Traffic {
    /// Every device recharges for a fixed time and then transmits.
    Periodic,
    /// Messages arrive with geometric inter-arrival blocks; devices recharge
    /// between arrivals and pick pilots from a shared pool.
    Poisson,
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// One benchmark scenario, flat enough to live in a single key/value file.
/// All keys default to the reference desk-scale setup; any subset may be
/// given. SI units throughout: watts, seconds, joules, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    // Physical layer.
    pub hap_power: f64,
    pub noise_power: f64,
    pub conversion_eff: f64,
    pub rician_k: f64,
    pub coherence_time: f64,
    pub slot_time: f64,
    pub tx_power: f64,
    pub circuit_power: f64,
    pub dl_pilot_unit_energy: f64,
    pub ul_pilot_unit_energy: f64,
    pub spectral_msg: f64,
    pub antennas_total: usize,
    pub antennas_tx: usize,
    pub pilot_symbol_time: f64,
    pub self_interference: f64,
    // Deployment: devices spread over concentric rings.
    pub num_devices: usize,
    pub ring_radii: Vec<f64>,
    pub path_loss_exponent: f64,
    pub fixed_loss_db: f64,
    // Traffic and per-mode knobs.
    pub traffic: Traffic,
    pub charge_time: f64,
    pub traffic_rate: f64,
    pub target_collision: f64,
    pub pilot_tol: f64,
    // Scheme selection.
    pub wet_scheme: Scheme,
    pub equalizer: Equalizer,
    pub solver_tol: f64,
    // Sweep axis and Monte Carlo controls.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_parameter: Option<String>,
    pub sweep_values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            hap_power: 10.0,
            noise_power: 3.981_071_705_534_969_4e-13, // -94 dBm
            conversion_eff: 0.25,
            rician_k: 5.0,
            coherence_time: 0.4,
            slot_time: 0.02,
            tx_power: 200e-6,
            circuit_power: 20e-6,
            dl_pilot_unit_energy: 1e-5, // -20 dBm over a 1 s reference
            ul_pilot_unit_energy: 1e-6, // -30 dBm over a 1 s reference
            spectral_msg: 1e-3,
            antennas_total: 6,
            antennas_tx: 3,
            pilot_symbol_time: 1e-4,
            self_interference: 0.0,
            num_devices: 100,
            ring_radii: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            path_loss_exponent: 2.7,
            fixed_loss_db: 16.0,
            traffic: Traffic::Periodic,
            charge_time: 1.6,
            traffic_rate: 0.25,
            target_collision: 0.1,
            pilot_tol: 1e-5,
            wet_scheme: Scheme::CsiMrt,
            equalizer: Equalizer::Mmse,
            solver_tol: 1e-3,
            sweep_parameter: None,
            sweep_values: Vec::new(),
            trials: 100_000,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Physical-layer slice of the config.
    pub fn system_params(&self) -> SystemParams {
        SystemParams {
            hap_power: self.hap_power,
            noise_power: self.noise_power,
            conversion_eff: self.conversion_eff,
            rician_k: self.rician_k,
            coherence_time: self.coherence_time,
            slot_time: self.slot_time,
            tx_power: self.tx_power,
            circuit_power: self.circuit_power,
            dl_pilot_unit_energy: self.dl_pilot_unit_energy,
            ul_pilot_unit_energy: self.ul_pilot_unit_energy,
            spectral_msg: self.spectral_msg,
            antennas_total: self.antennas_total,
            antennas_tx: self.antennas_tx,
            pilot_symbol_time: self.pilot_symbol_time,
            self_interference: self.self_interference,
        }
    }

    pub fn deployment(&self) -> Result<Deployment> {
        ring_deployment(
            self.num_devices,
            &self.ring_radii,
            self.path_loss_exponent,
            self.fixed_loss_db,
        )
    }

    /// Checks the whole scenario, not just the physical layer.
    pub fn validate(&self) -> Result<()> {
        self.system_params().validate()?;
        self.deployment()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        // The physical layer tolerates a transmit-only split; a benchmark
        // scenario must keep at least one receive antenna to decode with.
        if self.antennas_tx >= self.antennas_total {
            return Err(Error::Config(format!(
                "antenna split {}/{} leaves nothing to receive with",
                self.antennas_tx, self.antennas_total
            )));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Config("solver_tol must be positive".into()));
        }
        match self.traffic {
            Traffic::Periodic => {
                if !(self.charge_time >= self.slot_time) {
                    return Err(Error::Config(format!(
                        "charge_time {} shorter than one slot {}",
                        self.charge_time, self.slot_time
                    )));
                }
            }
            Traffic::Poisson => {
                DiscreteExp::new(self.traffic_rate)?;
                if !(self.target_collision > 0.0 && self.target_collision < 1.0) {
                    return Err(Error::Config(format!(
                        "target_collision {} outside (0,1)",
                        self.target_collision
                    )));
                }
                if !(self.pilot_tol > 0.0) {
                    return Err(Error::Config("pilot_tol must be positive".into()));
                }
            }
        }
        if let Some(name) = &self.sweep_parameter {
            sweep_unit(name)?;
            if self.sweep_values.is_empty() {
                return Err(Error::Config("sweep_values is empty".into()));
            }
            if matches!(self.traffic, Traffic::Poisson) && name == "charge_time" {
                return Err(Error::Config(
                    "charge_time sweeps apply to periodic traffic only".into(),
                ));
            }
            if matches!(self.traffic, Traffic::Periodic)
                && (name == "traffic_rate" || name == "target_collision")
            {
                return Err(Error::Config(format!(
                    "{name} sweeps apply to poisson traffic only"
                )));
            }
        }
        Ok(())
    }

    /// Overrides one scalar knob by sweep-parameter name.
    pub fn apply_sweep_value(&mut self, name: &str, value: f64) -> Result<()> {
        let as_count = |v: f64| -> Result<usize> {
            if v.fract() == 0.0 && v >= 0.0 && v <= usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{name} needs a whole number, got {v}")))
            }
        };
        match name {
            "hap_power" => self.hap_power = value,
            "noise_power" => self.noise_power = value,
            "conversion_eff" => self.conversion_eff = value,
            "rician_k" => self.rician_k = value,
            "tx_power" => self.tx_power = value,
            "circuit_power" => self.circuit_power = value,
            "dl_pilot_unit_energy" => self.dl_pilot_unit_energy = value,
            "ul_pilot_unit_energy" => self.ul_pilot_unit_energy = value,
            "spectral_msg" => self.spectral_msg = value,
            "self_interference" => self.self_interference = value,
            "charge_time" => self.charge_time = value,
            "traffic_rate" => self.traffic_rate = value,
            "target_collision" => self.target_collision = value,
            "num_devices" => self.num_devices = as_count(value)?,
            "antennas_total" => self.antennas_total = as_count(value)?,
            "antennas_tx" => self.antennas_tx = as_count(value)?,
            other => {
                return Err(Error::Config(format!("unknown sweep parameter `{other}`")))
            }
        }
        Ok(())
    }
}

/// Unit tag for a sweep parameter, used in the table header; unknown names
/// are a config error.
pub fn sweep_unit(name: &str) -> Result<&'static str> {
    Ok(match name {
        "hap_power" | "noise_power" | "tx_power" | "circuit_power" | "self_interference" => "w",
        "dl_pilot_unit_energy" | "ul_pilot_unit_energy" => "j",
        "charge_time" => "s",
        "spectral_msg" => "bits_per_hz",
        "rician_k" | "conversion_eff" => "ratio",
        "traffic_rate" => "per_block",
        "target_collision" => "prob",
        "num_devices" | "antennas_total" | "antennas_tx" => "count",
        other => {
            return Err(Error::Config(format!("unknown sweep parameter `{other}`")))
        }
    })
}

// ---------------------------------------------------------------------------
// Outage composition
// ---------------------------------------------------------------------------

/// Combines independent energy and information outages into the overall
/// per-message outage `1 − (1−a)(1−b)`.
pub fn overall_outage(energy: f64, info: f64) -> Result<f64> {
    for (label, v) in [("energy", energy), ("info", info)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!(
                "{label} outage {v} outside [0,1]"
            )));
        }
    }
    Ok(energy + info - energy * info)
}

/// Trial counts and solver/pilot diagnostics attached to each sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub trials: usize,
    /// True when the energy term came from a closed form rather than
    /// simulation (its CI contribution is then zero).
    pub energy_analytic: bool,
    pub pilot_sequences: Option<usize>,
    pub pilot_iterations: Option<usize>,
}

/// Worst-device outage decomposition at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageBreakdown {
    pub energy: f64,
    pub info: f64,
    pub overall: f64,
    pub ci_half_width: f64,
    pub meta: RunMeta,
}

// ---------------------------------------------------------------------------
// Point evaluation
// ---------------------------------------------------------------------------

/// Receive-side parameter view for a scheme: the antenna-switching scheme
/// charges from a single element, leaving all the others to listen.
fn receive_params(params: &SystemParams, scheme: Scheme) -> SystemParams {
    let mut p = params.clone();
    if scheme == Scheme::Sa {
        p.antennas_tx = 1;
    }
    p
}

/// Simulated energy outage for the fair-beamforming scheme under scheduled
/// traffic: the precoder is re-solved on fresh channels every coherence
/// block of the charging window.
fn sdp_energy_outage_periodic(
    params: &SystemParams,
    deployment: &Deployment,
    t_s: f64,
    csi_ul: f64,
    solver_tol: f64,
    trials: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    let budget = EnergyBudget::periodic(params, t_s, csi_ul, Scheme::CsiSdp);
    let blocks = (t_s / params.coherence_time).ceil() as usize;
    let mut failures = 0usize;
    for _ in 0..trials {
        let harvested = (0..blocks)
            .map(|_| block_harvest(params, deployment, solver_tol, rng))
            .sum::<Result<f64>>()?;
        if harvested < budget.total {
            failures += 1;
        }
    }
    let p = failures as f64 / trials as f64;
    Ok((p, 1.96 * (p * (1.0 - p) / trials as f64).sqrt()))
}

/// Simulated energy outage for the fair-beamforming scheme under random
/// traffic: the charging window spans the geometric number of blocks since
/// the previous message.
fn sdp_energy_outage_poisson(
    params: &SystemParams,
    deployment: &Deployment,
    traffic: &DiscreteExp,
    csi_ul: f64,
    solver_tol: f64,
    trials: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    let mut failures = 0usize;
    for _ in 0..trials {
        let v = traffic.sample(rng);
        let budget = EnergyBudget::per_event(params, v, csi_ul, Scheme::CsiSdp);
        let harvested = (0..v)
            .map(|_| block_harvest(params, deployment, solver_tol, rng))
            .sum::<Result<f64>>()?;
        if harvested < budget.total {
            failures += 1;
        }
    }
    let p = failures as f64 / trials as f64;
    Ok((p, 1.96 * (p * (1.0 - p) / trials as f64).sqrt()))
}

/// Energy harvested by the weakest device over one coherence block under the
/// re-solved fair precoder.
fn block_harvest(
    params: &SystemParams,
    deployment: &Deployment,
    solver_tol: f64,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    let s = deployment.num_devices();
    let h = sample_rician_matrix(params.antennas_tx, s, params.rician_k, rng);
    let channels: Vec<DVector<Complex<f64>>> = (0..s).map(|i| h.column(i).into_owned()).collect();
    let precoder = match solve_fair_beamforming(
        &channels,
        deployment.gains(),
        params.hap_power,
        solver_tol,
        SWEEP_SOLVER_ITERS,
    ) {
        Ok(p) => p,
        // The best stalled iterate is still a feasible precoder; using it
        // under-reports harvest slightly rather than aborting the sweep.
        Err(Error::SolverStalled { precoder, .. }) => *precoder,
        Err(e) => return Err(e),
    };
    let incident = incident_power(
        &precoder,
        &channels[deployment.worst_index()],
        deployment.worst_gain(),
        params.hap_power,
    )?;
    Ok(params.conversion_eff * params.coherence_time * incident)
}

/// Evaluates one operating point and composes the worst-device outage.
pub fn evaluate_point(config: &ScenarioConfig, rng: &mut ChaCha12Rng) -> Result<OutageBreakdown> {
    let params = config.system_params();
    params.validate()?;
    let deployment = config.deployment()?;
    let beta = deployment.worst_gain();

    let (energy, energy_ci, meta, info, info_ci) = match config.traffic {
        Traffic::Periodic => {
            let csi_ul = pilot_cost_periodic(
                config.num_devices,
                config.charge_time,
                params.slot_time,
                params.ul_pilot_unit_energy,
            )?;
            let (energy, energy_ci, analytic) = match config.wet_scheme {
                Scheme::CsiMrt | Scheme::Sa => (
                    energy_outage_periodic(
                        &params,
                        beta,
                        config.charge_time,
                        csi_ul,
                        config.wet_scheme,
                    )?,
                    0.0,
                    true,
                ),
                Scheme::CsiSdp => {
                    let (p, ci) = sdp_energy_outage_periodic(
                        &params,
                        &deployment,
                        config.charge_time,
                        csi_ul,
                        config.solver_tol,
                        config.trials,
                        rng,
                    )?;
                    (p, ci, false)
                }
            };
            let (info, info_ci) = info_outage_periodic(
                &receive_params(&params, config.wet_scheme),
                &deployment,
                config.charge_time,
                config.equalizer,
                config.trials,
                rng,
            )?;
            let meta = RunMeta {
                trials: config.trials,
                energy_analytic: analytic,
                pilot_sequences: None,
                pilot_iterations: None,
            };
            (energy, energy_ci, meta, info, info_ci)
        }
        Traffic::Poisson => {
            let traffic = DiscreteExp::new(config.traffic_rate)?;
            let plan = optimal_pilot_count(
                config.num_devices,
                config.target_collision,
                &traffic,
                params.slot_time,
                params.coherence_time,
                config.pilot_tol,
            )?;
            // Pilot pool size feeds straight into the recharge budget.
            let csi_ul = plan.num_sequences as f64 * params.ul_pilot_unit_energy;
            let (energy, energy_ci, analytic) = match config.wet_scheme {
                Scheme::CsiMrt | Scheme::Sa => (
                    energy_outage_poisson(
                        &params,
                        beta,
                        &traffic,
                        csi_ul,
                        config.wet_scheme,
                        None,
                    )?,
                    0.0,
                    true,
                ),
                Scheme::CsiSdp => {
                    let (p, ci) = sdp_energy_outage_poisson(
                        &params,
                        &deployment,
                        &traffic,
                        csi_ul,
                        config.solver_tol,
                        config.trials,
                        rng,
                    )?;
                    (p, ci, false)
                }
            };
            let (info, info_ci) = info_outage_poisson(
                &receive_params(&params, config.wet_scheme),
                &deployment,
                &traffic,
                &plan,
                config.equalizer,
                CollisionTerm::Exact,
                config.trials,
                rng,
            )?;
            let meta = RunMeta {
                trials: config.trials,
                energy_analytic: analytic,
                pilot_sequences: Some(plan.num_sequences),
                pilot_iterations: Some(plan.iterations_used),
            };
            (energy, energy_ci, meta, info, info_ci)
        }
    };

    let overall = overall_outage(energy, info)?;
    // First-order error propagation through 1−(1−a)(1−b).
    let ci_half_width = (1.0 - info) * energy_ci + (1.0 - energy) * info_ci;
    Ok(OutageBreakdown { energy, info, overall, ci_half_width, meta })
}

// ---------------------------------------------------------------------------
// Sweep engine
// ---------------------------------------------------------------------------

/// One table row: the swept value and the outage breakdown at that point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub outcome: OutageBreakdown,
}

/// Result table of a sweep, in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: String,
    pub unit: String,
    pub rows: Vec<SweepRow>,
}

/// Runs every grid point of the configured sweep. Points are independent
/// and evaluated concurrently; each owns an rng stream derived from the
/// seed and its grid index, so tables are bit-identical across runs and
/// thread counts. Any failing point aborts the sweep, naming its value.
pub fn run_sweep(config: &ScenarioConfig) -> Result<SweepTable> {
    config.validate()?;
    let parameter = config
        .sweep_parameter
        .clone()
        .ok_or_else(|| Error::Config("no sweep_parameter configured".into()))?;
    let unit = sweep_unit(&parameter)?.to_string();
    let rows: Vec<SweepRow> = config
        .sweep_values
        .par_iter()
        .enumerate()
        .map(|(index, &value)| {
            let mut point = config.clone();
            point
                .apply_sweep_value(&parameter, value)
                .and_then(|()| {
                    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
                    rng.set_stream(index as u64 + 1);
                    evaluate_point(&point, &mut rng)
                })
                .map(|outcome| SweepRow { value, outcome })
                .map_err(|e| Error::Config(format!("sweep point {parameter} = {value}: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable { parameter, unit, rows })
}

/// Renders a table as comma-delimited text with a mandatory unit-bearing
/// header line.
pub fn render_csv(table: &SweepTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{}_{},energy_outage_prob,info_outage_prob,overall_outage_prob,\
         ci_half_width_prob,pilot_sequences_count,pilot_iterations_count,\
         trials_count,energy_evaluation\n",
        table.parameter, table.unit
    ));
    for row in &table.rows {
        let o = &row.outcome;
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.value,
            o.energy,
            o.info,
            o.overall,
            o.ci_half_width,
            opt(o.meta.pilot_sequences),
            opt(o.meta.pilot_iterations),
            o.meta.trials,
            if o.meta.energy_analytic { "analytic" } else { "simulated" },
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
