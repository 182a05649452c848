//! Special functions, distributions, samplers, and small-matrix routines
//! shared by every analytic outage expression:
//!
//! - Marcum Q-function `Q_m(a, b)` via a Poisson mixture of regularized
//!   upper-gamma tails,
//! - noncentral chi-squared CDF and exact sampler,
//! - the shifted discrete-exponential law of inter-message intervals,
//! - a Jacobi eigensolver for the small Hermitian matrices of this crate.
//!
//! All samplers take an explicit generator so callers own reproducibility.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Absolute tail mass at which the Marcum-Q series stops; the truncation
/// error is bounded by this value because every gamma-tail factor is ≤ 1.
const MARCUM_TAIL_BOUND: f64 = 1e-13;

/// Kahan-compensated accumulator for long probability series.
#[derive(Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

// ---------------------------------------------------------------------------
// Marcum Q-function
// ---------------------------------------------------------------------------

/// Generalized Marcum Q-function `Q_m(a, b)`, the upper tail of a noncentral
/// chi-squared variable with `2m` degrees of freedom and noncentrality `a²`
/// evaluated at `b²`.
///
/// Computed as `Σ_k p_k(a²/2) · Q(m+k, b²/2)` where `p_k` are Poisson weights
/// and `Q` is the regularized upper incomplete gamma function; the sum runs
/// outward from the Poisson mode until the uncovered mass drops below 1e-13.
pub fn marcum_q(order: f64, a: f64, b: f64) -> Result<f64> {
    if !(order.is_finite() && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(
            "marcum_q arguments must be finite".into(),
        ));
    }
    if order <= 0.0 || a < 0.0 || b < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "marcum_q needs order > 0 and a, b >= 0, got ({order}, {a}, {b})"
        )));
    }
    if b == 0.0 {
        return Ok(1.0);
    }
    let x = 0.5 * a * a; // Poisson intensity of the mixture
    let y = 0.5 * b * b;
    if x == 0.0 {
        return Ok(gamma_ur(order, y));
    }

    let ln_x = x.ln();
    // log of the Poisson(x) weight at k
    let ln_weight = |k: u64| -> f64 { -x + k as f64 * ln_x - ln_gamma(k as f64 + 1.0) };
    let mode = x.floor() as u64;

    // Compensated sums: the series can run to thousands of terms for large
    // intensities, and plain accumulation would drown outage probabilities
    // near 1e-12 in rounding error.
    let mut covered = Kahan::default(); // Poisson mass accumulated so far
    let mut sum = Kahan::default();
    // Upward from the mode, then downward from mode-1; each side stops when
    // its weights underflow, the whole sum when the uncovered mass is small.
    let mut k = mode;
    loop {
        let w = ln_weight(k).exp();
        covered.add(w);
        sum.add(w * gamma_ur(order + k as f64, y));
        if 1.0 - covered.value() <= MARCUM_TAIL_BOUND || w < 1e-18 {
            break;
        }
        k += 1;
    }
    if mode > 0 && 1.0 - covered.value() > MARCUM_TAIL_BOUND {
        let mut k = mode - 1;
        loop {
            let w = ln_weight(k).exp();
            covered.add(w);
            sum.add(w * gamma_ur(order + k as f64, y));
            if 1.0 - covered.value() <= MARCUM_TAIL_BOUND || w < 1e-18 || k == 0 {
                break;
            }
            k -= 1;
        }
    }
    Ok(sum.value().clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Noncentral chi-squared
// ---------------------------------------------------------------------------

/// Noncentral chi-squared distribution with `dof` degrees of freedom and
/// noncentrality parameter `noncentrality`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoncentralChi2 {
    dof: f64,
    noncentrality: f64,
}

impl NoncentralChi2 {
    /// Creates the distribution; `dof` must be positive and `noncentrality`
    /// nonnegative.
    pub fn new(dof: f64, noncentrality: f64) -> Result<Self> {
        if !(dof.is_finite() && dof > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom must be positive, got {dof}"
            )));
        }
        if !(noncentrality.is_finite() && noncentrality >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noncentrality must be nonnegative, got {noncentrality}"
            )));
        }
        Ok(Self { dof, noncentrality })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn noncentrality(&self) -> f64 {
        self.noncentrality
    }

    /// Mean `dof + noncentrality`.
    pub fn mean(&self) -> f64 {
        self.dof + self.noncentrality
    }

    /// Variance `2·dof + 4·noncentrality`.
    pub fn variance(&self) -> f64 {
        2.0 * self.dof + 4.0 * self.noncentrality
    }

    /// CDF `F(y) = 1 - Q_{dof/2}(√noncentrality, √y)`.
    pub fn cdf(&self, y: f64) -> Result<f64> {
        if !(y.is_finite() && y >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cdf argument must be nonnegative, got {y}"
            )));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        Ok(1.0 - marcum_q(0.5 * self.dof, self.noncentrality.sqrt(), y.sqrt())?)
    }

    /// Draws one sample. The noncentral part is an exactly-distributed
    /// squared shifted normal; the remaining `dof - 1` central degrees of
    /// freedom come from a gamma draw, so no rejection is involved.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.noncentrality == 0.0 {
            return gamma_draw(0.5 * self.dof, 2.0, rng);
        }
        if self.dof >= 1.0 {
            let shifted = Normal::new(self.noncentrality.sqrt(), 1.0)
                .expect("normal parameters are finite")
                .sample(rng);
            shifted * shifted + gamma_draw(0.5 * (self.dof - 1.0), 2.0, rng)
        } else {
            // dof < 1 with noncentrality > 0: fall back to the exact
            // Poisson-mixture representation.
            let k = Poisson::new(0.5 * self.noncentrality)
                .expect("positive Poisson rate")
                .sample(rng);
            gamma_draw(0.5 * self.dof + k, 2.0, rng)
        }
    }
}

/// Gamma(shape, scale) draw that treats shape 0 as the point mass at 0.
fn gamma_draw(shape: f64, scale: f64, rng: &mut impl Rng) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, scale)
        .expect("positive gamma parameters")
        .sample(rng)
}

// ---------------------------------------------------------------------------
// Discrete exponential traffic law
// ---------------------------------------------------------------------------

/// Number of coherence intervals between consecutive messages of a device
/// under Poisson-style traffic: `P[V = v] = (e^rate - 1) e^{-rate·v}` for
/// integer `v ≥ 1`. `rate` is the mean number of messages per coherence
/// interval and must satisfy `0 < rate < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteExp {
    rate: f64,
}

impl DiscreteExp {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0 && rate < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "traffic rate must lie in (0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `P[V = v]` for `v ≥ 1`.
    pub fn pmf(&self, v: u32) -> Result<f64> {
        if v < 1 {
            return Err(Error::InvalidParameter(
                "interval count starts at 1".into(),
            ));
        }
        Ok((self.rate.exp() - 1.0) * (-self.rate * v as f64).exp())
    }

    /// Mean interval `e^rate / (e^rate - 1)`.
    pub fn mean(&self) -> f64 {
        let e = self.rate.exp();
        e / (e - 1.0)
    }

    /// Default series truncation `⌈10 · mean⌉`, deep enough that the
    /// untruncated tail mass `e^{-rate·v_max}` is negligible.
    pub fn truncation_order(&self) -> u32 {
        (10.0 * self.mean()).ceil() as u32
    }

    /// Inverse-CDF draw; always ≥ 1.
    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        let u: f64 = rng.gen();
        // F(v) = 1 - e^{-rate·v}, so the quantile is ⌈-ln(1-u)/rate⌉.
        let v = (-(1.0 - u).ln() / self.rate).ceil();
        (v as u32).max(1)
    }
}

// ---------------------------------------------------------------------------
// Hermitian eigendecomposition
// ---------------------------------------------------------------------------

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations:
/// returns the eigenvalues in ascending order and the matching orthonormal
/// eigenvector columns. Every matrix this crate decomposes is small (array
/// sizes, not sample counts), so the quadratic sweeps cost nothing, and
/// Jacobi keeps both the basis orthonormal and the factorization
/// `VΛVᴴ ≈ A` at machine precision regardless of eigenvalue spread; the
/// general-purpose tridiagonalization solver loses several digits of the
/// factorization on complex Hermitian input, which is fatal when the small
/// eigenvalues carry the answer (nulling residuals behave like `1/λ`).
pub fn hermitian_eigen(
    matrix: &DMatrix<Complex<f64>>,
) -> Result<(DVector<f64>, DMatrix<Complex<f64>>)> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let n = matrix.nrows();
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    let mut a = matrix.clone();
    let mut v: DMatrix<Complex<f64>> = DMatrix::identity(n, n);
    let scale = a
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for _ in 0..64 {
        let mut largest_off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                largest_off = largest_off.max(a[(p, q)].norm());
            }
        }
        if largest_off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let beta = a[(p, q)];
                let b = beta.norm();
                if b <= 1e-18 * scale {
                    a[(p, q)] = Complex::new(0.0, 0.0);
                    a[(q, p)] = Complex::new(0.0, 0.0);
                    continue;
                }
                // Absorb the off-diagonal phase, then rotate the real 2x2
                // block [[α, b], [b, γ]] to zero its off-diagonal: the plane
                // transform is U = [[c, s], [-s·conj(φ), c·conj(φ)]].
                let phase = beta / Complex::new(b, 0.0);
                let alpha = a[(p, p)].re;
                let gamma = a[(q, q)].re;
                let tau = (gamma - alpha) / (2.0 * b);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let up_p = Complex::new(c, 0.0);
                let uq_p = -phase.conj() * s;
                let up_q = Complex::new(s, 0.0);
                let uq_q = phase.conj() * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * up_p + akq * uq_p;
                    a[(k, q)] = akp * up_q + akq * uq_q;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = up_p.conj() * apk + uq_p.conj() * aqk;
                    a[(q, k)] = up_q.conj() * apk + uq_q.conj() * aqk;
                }
                a[(p, q)] = Complex::new(0.0, 0.0);
                a[(q, p)] = Complex::new(0.0, 0.0);
                a[(p, p)] = Complex::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex::new(a[(q, q)].re, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * up_p + vkq * uq_p;
                    v[(k, q)] = vkp * up_q + vkq * uq_q;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).expect("real diagonal"));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)].re));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &v.column(src));
    }
    Ok((eigenvalues, eigenvectors))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
