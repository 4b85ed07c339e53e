//! Chi-square distribution functions and confidence-region bookkeeping.
//!
//! The detection logic compares half quadratic forms against chi-square
//! quantiles throughout: the state region is `1/2 dx' P0^-1 dx <= M_x` with
//! `M_x = q_chi2(alpha_x, 6)`, and the measurement statistic is
//! `M_z = 1/2 dz' R^-1 dz` mapped back to a confidence level through the CDF.
//! The half factor is deliberate and self-consistent; a `full` convention is
//! available behind [`MahalanobisConvention`] for sensitivity studies.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix6, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::StateVec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("chi-square CDF argument must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("degrees of freedom must be positive")]
    ZeroDof,
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
    #[error("dimension mismatch: vector {vector}, matrix {matrix}")]
    DimensionMismatch { vector: usize, matrix: usize },
}

/// Which quadratic-form convention ties Mahalanobis statistics to chi-square
/// quantiles. `Half` is the default used by the detection rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MahalanobisConvention {
    Half,
    Full,
}

impl MahalanobisConvention {
    pub fn from_half_flag(half: bool) -> Self {
        if half {
            Self::Half
        } else {
            Self::Full
        }
    }

    /// Scale applied to the raw quadratic form `d' S^-1 d`.
    pub fn quad_scale(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::Full => 1.0,
        }
    }

    /// Squared whitened radius of the region `scale * dx' P^-1 dx <= m`.
    pub fn radius_sq(self, m: f64) -> f64 {
        m / self.quad_scale()
    }
}

// Lanczos approximation, g = 7, 9 terms.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x). Series for x < a + 1,
/// continued fraction (modified Lentz) otherwise.
fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    let ln_prefactor = a * x.ln() - x - ln_gamma(a);
    if ln_prefactor < -700.0 {
        // prefactor underflows: the mass is entirely on one side
        return if x > a { 1.0 } else { 0.0 };
    }
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        sum * ln_prefactor.exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - ln_prefactor.exp() * h
    }
}

/// CDF of the chi-square distribution with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: u32) -> Result<f64, StatsError> {
    if k == 0 {
        return Err(StatsError::ZeroDof);
    }
    if x.is_nan() || x < 0.0 {
        return Err(StatsError::NegativeArgument(x));
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_p(f64::from(k) / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// Quantile (inverse CDF) of the chi-square distribution. `alpha = 0` maps to
/// zero and `alpha = 1` to the infinite sentinel consumed by the limit cases
/// of the detection rules; it must never reach the numeric solvers.
pub fn chi2_quantile(alpha: f64, k: u32) -> Result<f64, StatsError> {
    if k == 0 {
        return Err(StatsError::ZeroDof);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(StatsError::BadProbability(alpha));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    if alpha == 1.0 {
        return Ok(f64::INFINITY);
    }
    // Bracket then bisect to machine precision. The CDF is strictly
    // increasing so this is unconditionally safe.
    let mut hi = f64::from(k).max(1.0);
    while chi2_cdf(hi, k)? < alpha {
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(mid, k)? < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Half Mahalanobis statistic `1/2 d' cov^-1 d` via a Cholesky solve.
pub fn half_mahalanobis(d: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64, StatsError> {
    if d.len() != cov.nrows() || !cov.is_square() {
        return Err(StatsError::DimensionMismatch {
            vector: d.len(),
            matrix: cov.nrows(),
        });
    }
    let chol = Cholesky::<f64, Dyn>::new(cov.clone()).ok_or(StatsError::NotSpd)?;
    let solved = chol.solve(d);
    Ok(0.5 * d.dot(&solved))
}

/// Deviation sample `L z` from a lower-triangular covariance factor and
/// independent standard normals. A zero factor yields a zero deviation.
pub fn sample_gaussian<R: Rng + ?Sized>(chol_l: &Matrix6<f64>, rng: &mut R) -> Vector6<f64> {
    let mut z = Vector6::zeros();
    for i in 0..6 {
        z[i] = rng.sample(StandardNormal);
    }
    chol_l * z
}

/// Prior state estimate: mean and positive-definite covariance with cached
/// Cholesky factors. `l` satisfies `cov = l l'` and `l_inv` whitens:
/// `|l_inv dx|^2 = dx' cov^-1 dx`.
#[derive(Debug, Clone)]
pub struct GaussianState {
    mean: StateVec,
    cov: Matrix6<f64>,
    l: Matrix6<f64>,
    l_inv: Matrix6<f64>,
}

impl GaussianState {
    pub fn new(mean: StateVec, cov: Matrix6<f64>) -> Result<Self, StatsError> {
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(StatsError::NotSpd);
        }
        let chol = Cholesky::new(cov).ok_or(StatsError::NotSpd)?;
        let l = chol.l();
        let l_inv = l
            .solve_lower_triangular(&Matrix6::identity())
            .ok_or(StatsError::NotSpd)?;
        Ok(Self {
            mean,
            cov,
            l,
            l_inv,
        })
    }

    pub fn mean(&self) -> &StateVec {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix6<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol_l(&self) -> &Matrix6<f64> {
        &self.l
    }

    /// Whitening factor U with `cov^-1 = U' U`.
    pub fn whitener(&self) -> &Matrix6<f64> {
        &self.l_inv
    }

    pub fn sample_deviation<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector6<f64> {
        sample_gaussian(&self.l, rng)
    }
}

/// State confidence level and its chi-square budget `M_x = q_chi2(alpha_x, 6)`.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceBudget {
    pub alpha_x: f64,
    pub m_x: f64,
}

/// Degrees of freedom of the state confidence region.
pub const STATE_DOF: u32 = 6;

impl ConfidenceBudget {
    pub fn new(alpha_x: f64) -> Result<Self, StatsError> {
        let m_x = chi2_quantile(alpha_x, STATE_DOF)?;
        Ok(Self { alpha_x, m_x })
    }
}
