//! Deployment geometry, path-loss bookkeeping, and Rician channel
//! generation shared by the energy (downlink) and information (uplink)
//! halves of the model.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// System-wide scalar parameters
// ---------------------------------------------------------------------------

/// Physical and protocol constants of one scenario. Energies are joules,
/// powers watts, times seconds; `spectral_msg` is the per-message spectral
/// density in bits/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Access-point transmit power budget P.
    pub hap_power: f64,
    /// Receiver noise power σ².
    pub noise_power: f64,
    /// Energy-harvesting conversion efficiency η.
    pub conversion_eff: f64,
    /// Rician factor κ of all fading links.
    pub rician_k: f64,
    /// Coherence interval T_c.
    pub coherence_time: f64,
    /// Uplink slot duration t.
    pub slot_time: f64,
    /// Per-device uplink transmit power p.
    pub tx_power: f64,
    /// Device circuit consumption p_c.
    pub circuit_power: f64,
    /// Unit energy of one downlink training round ξ₀.
    pub dl_pilot_unit_energy: f64,
    /// Unit energy of one uplink pilot sequence ξ̃₀.
    pub ul_pilot_unit_energy: f64,
    /// Message spectral density k.
    pub spectral_msg: f64,
    /// Total access-point antennas M.
    pub antennas_total: usize,
    /// Antennas devoted to energy transmission M_t (CSI-based operation).
    pub antennas_tx: usize,
    /// Pilot symbol duration t_p, used only by the impaired-estimate model.
    pub pilot_symbol_time: f64,
    /// Residual self-interference power added to σ² at the uplink receiver;
    /// 0 models perfect cancellation of the access point's own signal.
    pub self_interference: f64,
}

impl SystemParams {
    /// Validates the invariants the analytic expressions rely on.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hap_power", self.hap_power),
            ("noise_power", self.noise_power),
            ("conversion_eff", self.conversion_eff),
            ("coherence_time", self.coherence_time),
            ("slot_time", self.slot_time),
            ("tx_power", self.tx_power),
            ("circuit_power", self.circuit_power),
            ("pilot_symbol_time", self.pilot_symbol_time),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("rician_k", self.rician_k),
            ("dl_pilot_unit_energy", self.dl_pilot_unit_energy),
            ("ul_pilot_unit_energy", self.ul_pilot_unit_energy),
            // zero-rate messages are legal and give a zero SINR threshold
            ("spectral_msg", self.spectral_msg),
            ("self_interference", self.self_interference),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.antennas_total == 0 || self.antennas_tx > self.antennas_total {
            return Err(Error::InvalidParameter(format!(
                "antenna split {}/{} is invalid",
                self.antennas_tx, self.antennas_total
            )));
        }
        // Slots must tile a coherence interval finely enough that every
        // antenna of a switching transmitter gets a turn.
        if self.slot_time > self.coherence_time / self.antennas_total as f64 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "slot time {} exceeds coherence_time/antennas = {}",
                self.slot_time,
                self.coherence_time / self.antennas_total as f64
            )));
        }
        Ok(())
    }

    /// Receive antennas left for uplink decoding under CSI-based operation.
    pub fn antennas_rx(&self) -> usize {
        self.antennas_total - self.antennas_tx
    }

    /// Effective uplink noise floor: thermal noise plus any residual
    /// self-interference.
    pub fn uplink_noise(&self) -> f64 {
        self.noise_power + self.self_interference
    }

    /// Decoding SINR threshold `2^{k/t} - 1` of a message of `spectral_msg`
    /// bits/Hz sent in one slot.
    pub fn sinr_threshold(&self) -> f64 {
        (self.spectral_msg / self.slot_time).exp2() - 1.0
    }
}

/// Residual self-interference power after cancellation: `P·M_t·near-field
/// gain / attenuation`. An infinite attenuation (or zero gain) models
/// perfect cancellation.
pub fn residual_self_interference(
    hap_power: f64,
    antennas_tx: usize,
    near_field_gain: f64,
    attenuation: f64,
) -> f64 {
    if attenuation.is_infinite() || near_field_gain == 0.0 {
        return 0.0;
    }
    hap_power * antennas_tx as f64 * near_field_gain / attenuation
}

// ---------------------------------------------------------------------------
// Deployment
// ---------------------------------------------------------------------------

/// Average channel gains of every device plus the index of the worst one
/// (smallest gain, first index on ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    gains: Vec<f64>,
    worst_index: usize,
}

impl Deployment {
    /// Builds a deployment from explicit per-device gains.
    pub fn from_gains(gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::InvalidParameter("no devices".into()));
        }
        if gains.iter().any(|&g| !(g.is_finite() && g > 0.0)) {
            return Err(Error::InvalidParameter(
                "every average channel gain must be positive".into(),
            ));
        }
        let worst_index = gains
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite gains"))
            .map(|(i, _)| i)
            .expect("nonempty");
        Ok(Self { gains, worst_index })
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn num_devices(&self) -> usize {
        self.gains.len()
    }

    pub fn worst_index(&self) -> usize {
        self.worst_index
    }

    pub fn worst_gain(&self) -> f64 {
        self.gains[self.worst_index]
    }

    /// Smallest gain among all devices except the worst one.
    pub fn runner_up_gain(&self) -> Result<f64> {
        if self.gains.len() < 2 {
            return Err(Error::InvalidParameter(
                "need at least two devices".into(),
            ));
        }
        Ok(self
            .gains
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.worst_index)
            .map(|(_, &g)| g)
            .fold(f64::INFINITY, f64::min))
    }
}

/// Places `num_devices` on concentric rings with per-ring counts
/// proportional to ring radius (largest-remainder rounding), giving each
/// device the gain `10^{-fixed_loss_db/10} · d^{-pl_exponent}` of its ring
/// distance `d` in meters. Devices are ordered near to far.
pub fn ring_deployment(
    num_devices: usize,
    radii: &[f64],
    pl_exponent: f64,
    fixed_loss_db: f64,
) -> Result<Deployment> {
    if radii.is_empty() {
        return Err(Error::InvalidParameter("no rings given".into()));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) || radii[0] <= 0.0 {
        return Err(Error::InvalidParameter(
            "ring radii must be positive and strictly increasing".into(),
        ));
    }
    if num_devices < radii.len() {
        return Err(Error::InvalidParameter(format!(
            "{num_devices} devices cannot populate {} rings",
            radii.len()
        )));
    }
    let counts = largest_remainder_counts(num_devices, radii);
    let fixed = 10f64.powf(-fixed_loss_db / 10.0);
    let mut gains = Vec::with_capacity(num_devices);
    for (r, c) in radii.iter().zip(&counts) {
        let beta = fixed * r.powf(-pl_exponent);
        gains.extend(std::iter::repeat(beta).take(*c));
    }
    Deployment::from_gains(gains)
}

/// Apportions `total` seats proportionally to `weights` by the
/// largest-remainder method; ties go to the lower index.
fn largest_remainder_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).expect("finite quotas").then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Channel generation
// ---------------------------------------------------------------------------

/// One coherence block's fading realization: a complex matrix whose columns
/// are per-device channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub matrix: DMatrix<Complex<f64>>,
}

impl ChannelRealization {
    pub fn column(&self, device: usize) -> DVector<Complex<f64>> {
        DVector::from_column_slice(self.matrix.column(device).as_slice())
    }
}

/// Draws one Rician fading vector: mean `√(κ/(1+κ))` on every entry (common
/// zero-phase line-of-sight component) plus circular scatter of per-entry
/// variance `1/(1+κ)`, so `E[|h_j|²] = 1`.
pub fn sample_rician(dim: usize, kappa: f64, rng: &mut impl Rng) -> DVector<Complex<f64>> {
    assert!(dim >= 1, "channel needs at least one entry");
    assert!(kappa >= 0.0, "Rician factor must be nonnegative");
    let los = (kappa / (1.0 + kappa)).sqrt();
    let sd = (0.5 / (1.0 + kappa)).sqrt(); // per real component
    DVector::from_fn(dim, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex::new(los + sd * re, sd * im)
    })
}

/// Draws an independent Rician vector per device (column).
pub fn sample_rician_matrix(
    rows: usize,
    cols: usize,
    kappa: f64,
    rng: &mut impl Rng,
) -> ChannelRealization {
    let mut matrix = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        matrix.set_column(c, &sample_rician(rows, kappa, rng));
    }
    ChannelRealization { matrix }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
