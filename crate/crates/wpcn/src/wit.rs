//! Uplink information transfer: linear equalizer SINRs, semi-analytic
//! information-outage estimation for scheduled and random traffic, and the
//! pilot-allocation machinery that trades reuse collisions against pilot
//! energy.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hermitian_eigen, DiscreteExp};
use crate::scenario::{sample_rician_matrix, ChannelRealization, Deployment, SystemParams};

/// Gram matrices with a larger spread between extreme eigenvalues are
/// treated as singular: the nulling equalizer cannot separate the streams.
const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Linear receive equalizer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equalizer {
    Zf,
    Mmse,
}

impl Equalizer {
    /// Per-stream SINRs of this equalizer on one uplink realization.
    pub fn sinrs(self, inst: &UplinkInstance) -> Vec<f64> {
        match self {
            Equalizer::Zf => zf_sinrs(inst),
            Equalizer::Mmse => mmse_sinrs(inst),
        }
    }
}

/// How the collision term of the random-traffic outage is evaluated: from
/// the closed-form reuse analysis, or substituting the design target the
/// pilot plan was sized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionTerm {
    Exact,
    DesignTarget,
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One uplink decoding problem: the fading matrix of the concurrently
/// received streams (one column per active device), their average receive
/// weights `p_i·β_i`, the noise floor, and which column carries the device
/// under study.
#[derive(Debug, Clone)]
pub struct UplinkInstance {
    pub channel: ChannelRealization,
    pub powers: Vec<f64>,
    pub noise_power: f64,
    pub target_index: usize,
}

impl UplinkInstance {
    pub fn new(
        channel: ChannelRealization,
        powers: Vec<f64>,
        noise_power: f64,
        target_index: usize,
    ) -> Result<Self> {
        let n = channel.matrix.ncols();
        if n == 0 {
            return Err(Error::InvalidParameter("no active streams".into()));
        }
        if powers.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} streams but {} weights",
                n,
                powers.len()
            )));
        }
        if powers.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidParameter("stream weights must be positive".into()));
        }
        if !(noise_power.is_finite() && noise_power > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise power must be positive, got {noise_power}"
            )));
        }
        if target_index >= n {
            return Err(Error::InvalidParameter(format!(
                "target stream {target_index} out of {n}"
            )));
        }
        Ok(Self { channel, powers, noise_power, target_index })
    }

    pub fn num_streams(&self) -> usize {
        self.channel.matrix.ncols()
    }

    /// Channel matrix with columns scaled by the square roots of the
    /// receive weights (the effective matrix the equalizers act on).
    fn weighted_matrix(&self) -> DMatrix<Complex<f64>> {
        let mut b = self.channel.matrix.clone();
        for (j, &w) in self.powers.iter().enumerate() {
            let col = b.column(j) * Complex::new(w.sqrt(), 0.0);
            b.set_column(j, &col);
        }
        b
    }
}

/// Sized pilot allocation: how many orthogonal sequences to hand out, the
/// collision level it was designed for, and what the sizing run cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotPlan {
    pub num_sequences: usize,
    pub target_collision: f64,
    pub reuse_factor: f64,
    pub iterations_used: usize,
}

// ---------------------------------------------------------------------------
// Pilot energy
// ---------------------------------------------------------------------------

/// Uplink pilot energy per charge period under scheduled traffic: devices
/// share the `⌊t_s/t⌋` slots of a period, so each pilots `⌈S/⌊t_s/t⌋⌉`
/// times `unit` joules.
pub fn pilot_cost_periodic(num_devices: usize, t_s: f64, t: f64, unit: f64) -> Result<f64> {
    if num_devices == 0 {
        return Err(Error::InvalidParameter("no devices".into()));
    }
    if !(t > 0.0 && t_s.is_finite()) || !(unit.is_finite() && unit >= 0.0) {
        return Err(Error::InvalidParameter("bad pilot-cost arguments".into()));
    }
    let slots = (t_s / t).floor();
    if slots < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "charge time {t_s} holds no whole slot of {t}"
        )));
    }
    Ok((num_devices as f64 / slots).ceil() * unit)
}

// ---------------------------------------------------------------------------
// Equalizer SINRs
// ---------------------------------------------------------------------------

/// Zero-forcing per-stream SINRs: `1/([(BᴴB)^{-1}]_{ii}·σ²)` for the
/// weighted matrix `B`. When nulling is impossible (more streams than
/// antennas, or a numerically singular Gram matrix) every stream reports
/// SINR 0, which downstream scoring counts as outage.
pub fn zf_sinrs(inst: &UplinkInstance) -> Vec<f64> {
    let n = inst.num_streams();
    let m_r = inst.channel.matrix.nrows();
    if n > m_r {
        return vec![0.0; n];
    }
    let b = inst.weighted_matrix();
    let gram = b.adjoint() * &b;
    let (eigenvalues, eigenvectors) =
        hermitian_eigen(&gram).expect("weighted Gram matrix is square and nonempty");
    let lambda_max = eigenvalues.max();
    let lambda_min = eigenvalues.min();
    if !(lambda_min > 0.0) || lambda_max >= GRAM_CONDITION_LIMIT * lambda_min {
        return vec![0.0; n];
    }
    // [G^{-1}]_{ii} = Σ_k |V_{ik}|²/λ_k from the spectral factorization.
    (0..n)
        .map(|i| {
            let diag: f64 = (0..n)
                .map(|k| eigenvectors[(i, k)].norm_sqr() / eigenvalues[k])
                .sum();
            1.0 / (diag * inst.noise_power)
        })
        .collect()
}

/// Linear MMSE per-stream SINRs, defined for any stream count. Uses the
/// whitened channels `u_j = √(w_j/σ²)·h_j` and evaluates the quadratic form
/// `γ_i = u_iᴴ(I + Σ_{j≠i} u_j u_jᴴ)^{-1}u_i` per stream; the leave-one-out
/// matrix stays well conditioned where the pooled form would cancel
/// catastrophically at high SINR.
pub fn mmse_sinrs(inst: &UplinkInstance) -> Vec<f64> {
    let n = inst.num_streams();
    let m_r = inst.channel.matrix.nrows();
    let sigma2 = inst.noise_power;
    let us: Vec<DVector<Complex<f64>>> = (0..n)
        .map(|j| {
            inst.channel.column(j) * Complex::new((inst.powers[j] / sigma2).sqrt(), 0.0)
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut a = DMatrix::identity(m_r, m_r);
            for (j, u) in us.iter().enumerate() {
                if j != i {
                    a += u * u.adjoint();
                }
            }
            let chol = Cholesky::new(a).expect("identity plus PSD is positive definite");
            us[i].dotc(&chol.solve(&us[i])).re.max(0.0)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scheduled-traffic information outage
// ---------------------------------------------------------------------------

/// Devices sharing the charge period's slots concurrently: the period holds
/// `⌊t_s/t⌋` slots, so `⌈S/⌊t_s/t⌋⌉` devices must transmit together.
pub fn concurrent_streams(num_devices: usize, t_s: f64, t: f64) -> Result<usize> {
    if num_devices == 0 {
        return Err(Error::InvalidParameter("no devices".into()));
    }
    let slots = (t_s / t).floor();
    if slots < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "charge time {t_s} holds no whole slot of {t}"
        )));
    }
    Ok(((num_devices as f64 / slots).ceil() as usize).max(1))
}

/// Monte Carlo estimate (probability, 95% CI half-width) of the scheduled
/// information outage at the weakest device: per trial, the devices with the
/// most similar path losses transmit together, a fresh fading matrix is
/// drawn, and the target's equalizer SINR is tested against the rate
/// threshold.
pub fn info_outage_periodic(
    params: &SystemParams,
    deployment: &Deployment,
    t_s: f64,
    equalizer: Equalizer,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let n = concurrent_streams(deployment.num_devices(), t_s, params.slot_time)?;
    let m_r = params.antennas_rx();
    if m_r == 0 {
        return Ok((1.0, 0.0)); // nothing to receive with
    }
    // Co-schedule the n smallest-gain devices; the weakest is among them.
    let mut order: Vec<usize> = (0..deployment.num_devices()).collect();
    order.sort_by(|&a, &b| {
        deployment.gains()[a]
            .partial_cmp(&deployment.gains()[b])
            .expect("finite gains")
    });
    let active: Vec<usize> = order.into_iter().take(n).collect();
    let target_pos = active
        .iter()
        .position(|&i| i == deployment.worst_index())
        .expect("weakest device is in the smallest-gain set");
    let powers: Vec<f64> = active
        .iter()
        .map(|&i| params.tx_power * deployment.gains()[i])
        .collect();

    let threshold = params.sinr_threshold();
    let noise = params.uplink_noise();
    let mut failures = 0usize;
    for _ in 0..trials {
        let channel = sample_rician_matrix(m_r, n, params.rician_k, rng);
        let inst = UplinkInstance::new(channel, powers.clone(), noise, target_pos)?;
        if equalizer.sinrs(&inst)[target_pos] < threshold {
            failures += 1;
        }
    }
    let p = failures as f64 / trials as f64;
    Ok((p, 1.96 * (p * (1.0 - p) / trials as f64).sqrt()))
}

// ---------------------------------------------------------------------------
// Random traffic: activity, collisions, pilot sizing
// ---------------------------------------------------------------------------

/// Probability that a device transmits in any given slot: it has a pending
/// message with probability `1−e^{−λ}` per coherence block and picks one of
/// the block's `T_c/t` slots.
pub fn active_probability(traffic: &DiscreteExp, t: f64, t_c: f64) -> f64 {
    assert!(t > 0.0 && t <= t_c, "slot must fit the coherence block");
    (t / t_c) * (1.0 - (-traffic.rate()).exp())
}

/// Probability that a transmission is lost to a pilot collision when `l`
/// orthogonal sequences are shared by `s` devices picking uniformly: one
/// minus the chance that exactly one device landed on the observed pilot,
/// given at least one did.
pub fn collision_probability(
    s: usize,
    l: usize,
    traffic: &DiscreteExp,
    t: f64,
    t_c: f64,
) -> Result<f64> {
    if l < 1 || l > s {
        return Err(Error::InvalidParameter(format!(
            "pilot count {l} outside 1..={s}"
        )));
    }
    if s == 1 {
        return Ok(0.0);
    }
    // q = (t/(l·T_c))·(1−e^{−λ}): chance a given device occupies the slot
    // *and* picked the observed pilot.
    let q = (active_probability(traffic, t, t_c) / l as f64).min(1.0);
    let no_pick = 1.0 - q;
    let single = s as f64 * q * no_pick.powi(s as i32 - 1);
    let any = 1.0 - no_pick.powi(s as i32);
    Ok((1.0 - single / any).clamp(0.0, 1.0))
}

/// One step of the pilot-sizing fixed point: maps the collision-free
/// probability surrogate `u` toward the value whose induced pilot count
/// meets the collision target.
fn pilot_fixed_point_map(s: usize, eps: f64, u: f64) -> f64 {
    let sf = s as f64;
    let g = (1.0 - u) / (1.0 - u.powi(s as i32));
    ((1.0 - eps) / sf).powf(1.0 / (sf - 1.0)) * g.powf(-1.0 / (sf - 1.0))
}

/// Smallest pilot count meeting a collision target `eps`, sized by the
/// fixed-point iteration from the closed-form starting guess, then snapped
/// to the exact infimum of feasible counts (the iteration's finite
/// tolerance can land one step off). Handing every device its own sequence
/// (count = `s`) removes collisions entirely and caps the search.
pub fn optimal_pilot_count(
    s: usize,
    eps: f64,
    traffic: &DiscreteExp,
    t: f64,
    t_c: f64,
    tol: f64,
) -> Result<PilotPlan> {
    if s == 0 {
        return Err(Error::InvalidParameter("no devices".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "collision target {eps} outside (0,1)"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if s == 1 {
        return Ok(PilotPlan {
            num_sequences: 1,
            target_collision: eps,
            reuse_factor: 1.0,
            iterations_used: 0,
        });
    }

    let mut u = (s as f64 / (1.0 - eps) - 1.0).powf(-1.0 / (s as f64 - 1.0));
    let mut iterations = 0usize;
    const MAX_FIXED_POINT_ITERS: usize = 1000;
    loop {
        iterations += 1;
        if iterations > MAX_FIXED_POINT_ITERS {
            return Err(Error::FixedPointDiverged(MAX_FIXED_POINT_ITERS));
        }
        let next = pilot_fixed_point_map(s, eps, u);
        let settled = (next - u).abs() <= tol;
        u = next;
        if settled {
            break;
        }
    }

    let raw = (t * (1.0 - (-traffic.rate()).exp()) / ((1.0 - u) * t_c)).ceil();
    let mut l = if raw.is_finite() && raw >= 1.0 { (raw as usize).min(s) } else { s };
    // Snap to the exact infimum: the closed form is monotone in the count.
    while l < s && collision_probability(s, l, traffic, t, t_c)? > eps {
        l += 1;
    }
    while l > 1 && collision_probability(s, l - 1, traffic, t, t_c)? <= eps {
        l -= 1;
    }
    Ok(PilotPlan {
        num_sequences: l,
        target_collision: eps,
        reuse_factor: l as f64 / s as f64,
        iterations_used: iterations,
    })
}

// ---------------------------------------------------------------------------
// Random-traffic information outage
// ---------------------------------------------------------------------------

/// Monte Carlo estimate (probability, 95% CI half-width) of the
/// random-traffic information outage at the weakest device: a collision
/// loses the message outright; otherwise the number of co-active devices is
/// drawn binomially (conditioned on the target being active), interferers
/// are drawn uniformly, and the decoding test runs as in the scheduled
/// case. A plan handing every device its own sequence has no collision
/// term.
#[allow(clippy::too_many_arguments)]
pub fn info_outage_poisson(
    params: &SystemParams,
    deployment: &Deployment,
    traffic: &DiscreteExp,
    plan: &PilotPlan,
    equalizer: Equalizer,
    collision_term: CollisionTerm,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let s = deployment.num_devices();
    if plan.num_sequences < 1 || plan.num_sequences > s {
        return Err(Error::InvalidParameter(format!(
            "plan has {} sequences for {s} devices",
            plan.num_sequences
        )));
    }
    let o_col = if plan.num_sequences >= s {
        0.0 // dedicated sequences: no reuse, no collisions
    } else {
        match collision_term {
            CollisionTerm::Exact => collision_probability(
                s,
                plan.num_sequences,
                traffic,
                params.slot_time,
                params.coherence_time,
            )?,
            CollisionTerm::DesignTarget => plan.target_collision,
        }
    };
    let m_r = params.antennas_rx();
    if m_r == 0 {
        return Ok((1.0, 0.0));
    }

    let p_act = active_probability(traffic, params.slot_time, params.coherence_time);
    let binom = Binomial::new(s as u64, p_act)
        .map_err(|e| Error::InvalidParameter(format!("activity law: {e}")))?;
    let target = deployment.worst_index();
    let others: Vec<usize> = (0..s).filter(|&i| i != target).collect();
    let threshold = params.sinr_threshold();
    let noise = params.uplink_noise();

    let mut failures = 0usize;
    for _ in 0..trials {
        // Number of concurrent streams, conditioned on the target being one.
        let n = loop {
            let draw = binom.sample(rng) as usize;
            if draw >= 1 {
                break draw;
            }
        };
        let mut powers = Vec::with_capacity(n);
        powers.push(params.tx_power * deployment.gains()[target]);
        for idx in rand::seq::index::sample(rng, others.len(), n - 1) {
            powers.push(params.tx_power * deployment.gains()[others[idx]]);
        }
        let channel = sample_rician_matrix(m_r, n, params.rician_k, rng);
        let inst = UplinkInstance::new(channel, powers, noise, 0)?;
        if equalizer.sinrs(&inst)[0] < threshold {
            failures += 1;
        }
    }
    let decode = failures as f64 / trials as f64;
    let estimate = o_col + (1.0 - o_col) * decode;
    let ci = (1.0 - o_col) * 1.96 * (decode * (1.0 - decode) / trials as f64).sqrt();
    Ok((estimate, ci))
}

// ---------------------------------------------------------------------------
// Imperfect uplink training
// ---------------------------------------------------------------------------

/// Splits a true uplink channel into a training-based estimate and the
/// residual error, for the pilot energy `csi_ul` spread over the pilot
/// symbol time. The split is exact (`estimate + error = true_channel`) and
/// its marginals carry the textbook variances: the scatter power divides as
/// `ρ : 1−ρ` with `ρ = (ξ/t_p)/(ξ/t_p + σ²)`.
pub fn impaired_uplink_channel(
    params: &SystemParams,
    true_channel: &DVector<Complex<f64>>,
    csi_ul: f64,
    rng: &mut impl Rng,
) -> (DVector<Complex<f64>>, DVector<Complex<f64>>) {
    assert!(csi_ul >= 0.0, "pilot energy must be nonnegative");
    assert!(params.pilot_symbol_time > 0.0, "pilot symbol time must be positive");
    let snr = csi_ul / params.pilot_symbol_time;
    let rho = if snr.is_infinite() { 1.0 } else { snr / (snr + params.noise_power) };
    let kappa = params.rician_k;
    let los = Complex::new((kappa / (1.0 + kappa)).sqrt(), 0.0);
    // Per real component: conditional spread of the estimate around its
    // regression on the true channel.
    let cond_sd = (0.5 / (1.0 + kappa) * rho * (1.0 - rho)).sqrt();
    let estimate = DVector::from_iterator(
        true_channel.len(),
        true_channel.iter().map(|&h| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            los + (h - los) * rho + Complex::new(cond_sd * re, cond_sd * im)
        }),
    );
    let error = true_channel - &estimate;
    (estimate, error)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
