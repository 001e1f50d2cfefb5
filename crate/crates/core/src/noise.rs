//! Noise densities and samplers shared by the model engines.
//!
//! Two continuous noise families are supported: a symmetric Pareto
//! distribution with density
//!
//! ```text
//! r(u) = (alpha / 2 scale) * (1 + |u|/scale)^-(alpha+1)
//! ```
//!
//! whose tails are polynomial of order `alpha + 1`, and a centered Gaussian.
//! The symmetric Pareto drives the HMM state increments (heavy tails are
//! the whole point of that example); the Gaussian drives its observations.
//! On top of these, the count and mixture emission laws used by the
//! observation-driven models live here: the negative binomial pmf and the
//! centered normal-mixture density.

use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp_slice, LogDensity};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// A univariate noise distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    /// Symmetric Pareto with tail exponent `alpha > 2` and scale `> 0`.
    SymmetricPareto { alpha: f64, scale: f64 },
    /// Centered Gaussian with standard deviation `sigma > 0`.
    Gaussian { sigma: f64 },
}

impl NoiseSpec {
    pub fn symmetric_pareto(alpha: f64, scale: f64) -> Result<Self> {
        validate_pareto(alpha, scale)?;
        Ok(NoiseSpec::SymmetricPareto { alpha, scale })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gaussian sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(NoiseSpec::Gaussian { sigma })
    }

    /// Validates the stored parameters (useful after deserialization).
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::SymmetricPareto { alpha, scale } => validate_pareto(alpha, scale),
            NoiseSpec::Gaussian { sigma } => {
                NoiseSpec::gaussian(sigma)?;
                Ok(())
            }
        }
    }

    pub fn logpdf(&self, u: f64) -> LogDensity {
        match *self {
            NoiseSpec::SymmetricPareto { alpha, scale } => {
                LogDensity::new(pareto_sym_logpdf_unchecked(u, alpha, scale))
            }
            NoiseSpec::Gaussian { sigma } => {
                LogDensity::new(gauss_logpdf_unchecked(u, sigma))
            }
        }
    }

    pub fn cdf(&self, u: f64) -> f64 {
        match *self {
            NoiseSpec::SymmetricPareto { alpha, scale } => {
                pareto_sym_cdf_unchecked(u, alpha, scale)
            }
            NoiseSpec::Gaussian { sigma } => {
                0.5 * (1.0 + libm::erf(u / (sigma * std::f64::consts::SQRT_2)))
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            NoiseSpec::SymmetricPareto { alpha, scale } => {
                pareto_sym_quantile_unchecked(rng.uniform_open01(), alpha, scale)
            }
            NoiseSpec::Gaussian { sigma } => sample_gauss(sigma, rng),
        }
    }

    /// Polynomial tail order `alpha`, or `None` for lighter-than-polynomial
    /// tails (Gaussian). Moment diagnostics use this to refuse orders whose
    /// stationary moment may be infinite.
    pub fn tail_exponent(&self) -> Option<f64> {
        match *self {
            NoiseSpec::SymmetricPareto { alpha, .. } => Some(alpha),
            NoiseSpec::Gaussian { .. } => None,
        }
    }
}

fn validate_pareto(alpha: f64, scale: f64) -> Result<()> {
    if !(alpha > 2.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "symmetric pareto alpha must be > 2, got {alpha}"
        )));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "symmetric pareto scale must be positive, got {scale}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Symmetric Pareto
// ---------------------------------------------------------------------------

/// Log-density of the symmetric Pareto distribution at `u`.
pub fn pareto_sym_logpdf(u: f64, alpha: f64, scale: f64) -> Result<LogDensity> {
    validate_pareto(alpha, scale)?;
    Ok(LogDensity::new(pareto_sym_logpdf_unchecked(u, alpha, scale)))
}

fn pareto_sym_logpdf_unchecked(u: f64, alpha: f64, scale: f64) -> f64 {
    alpha.ln() - (2.0 * scale).ln() - (alpha + 1.0) * (1.0 + u.abs() / scale).ln()
}

/// Closed-form CDF of the symmetric Pareto distribution.
///
/// For `u >= 0`: `F(u) = 1 - (1 + u/scale)^-alpha / 2`; the negative branch
/// follows by symmetry.
pub fn pareto_sym_cdf(u: f64, alpha: f64, scale: f64) -> Result<f64> {
    validate_pareto(alpha, scale)?;
    Ok(pareto_sym_cdf_unchecked(u, alpha, scale))
}

fn pareto_sym_cdf_unchecked(u: f64, alpha: f64, scale: f64) -> f64 {
    let t = 0.5 * (1.0 + u.abs() / scale).powf(-alpha);
    if u >= 0.0 {
        1.0 - t
    } else {
        t
    }
}

/// Inverse CDF; `p` must lie in the open unit interval.
pub fn pareto_sym_quantile(p: f64, alpha: f64, scale: f64) -> Result<f64> {
    validate_pareto(alpha, scale)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile probability must be in (0,1), got {p}"
        )));
    }
    Ok(pareto_sym_quantile_unchecked(p, alpha, scale))
}

fn pareto_sym_quantile_unchecked(p: f64, alpha: f64, scale: f64) -> f64 {
    if p >= 0.5 {
        scale * ((2.0 * (1.0 - p)).powf(-1.0 / alpha) - 1.0)
    } else {
        -scale * ((2.0 * p).powf(-1.0 / alpha) - 1.0)
    }
}

/// Draws one symmetric Pareto variate by inverse-CDF sampling.
pub fn sample_pareto_sym(alpha: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    validate_pareto(alpha, scale)?;
    Ok(pareto_sym_quantile_unchecked(rng.uniform_open01(), alpha, scale))
}

// ---------------------------------------------------------------------------
// Gaussian
// ---------------------------------------------------------------------------

/// Log-density of the centered Gaussian with standard deviation `sigma`.
pub fn gauss_logpdf(v: f64, sigma: f64) -> Result<LogDensity> {
    NoiseSpec::gaussian(sigma)?;
    Ok(LogDensity::new(gauss_logpdf_unchecked(v, sigma)))
}

fn gauss_logpdf_unchecked(v: f64, sigma: f64) -> f64 {
    let z = v / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
}

/// Draws one centered Gaussian variate.
pub fn sample_gauss(sigma: f64, rng: &mut RngStream) -> f64 {
    Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
}

// ---------------------------------------------------------------------------
// Negative binomial
// ---------------------------------------------------------------------------

/// Log-pmf of the negative binomial distribution with `r > 0` successes and
/// success probability `p` in (0,1):
///
/// ```text
/// P(K = k) = Gamma(k+r) / (k! Gamma(r)) * p^r * (1-p)^k
/// ```
pub fn nb_logpmf(k: u64, r: f64, p: f64) -> Result<LogDensity> {
    validate_nb(r, p)?;
    Ok(LogDensity::new(nb_logpmf_unchecked(k, r, p)))
}

pub(crate) fn nb_logpmf_unchecked(k: u64, r: f64, p: f64) -> f64 {
    let kf = k as f64;
    libm::lgamma(kf + r) - libm::lgamma(kf + 1.0) - libm::lgamma(r)
        + r * p.ln()
        + kf * (-p).ln_1p()
}

fn validate_nb(r: f64, p: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "negative binomial r must be positive, got {r}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "negative binomial p must be in (0,1), got {p}"
        )));
    }
    Ok(())
}

/// Draws one negative binomial variate via the gamma-Poisson mixture:
/// `K | lambda ~ Poisson(lambda)` with `lambda ~ Gamma(r, (1-p)/p)`.
pub fn sample_nb(r: f64, p: f64, rng: &mut RngStream) -> Result<u64> {
    validate_nb(r, p)?;
    let lambda = Gamma::new(r, (1.0 - p) / p)
        .expect("validated gamma parameters")
        .sample(rng);
    if lambda <= 0.0 {
        return Ok(0);
    }
    let draw = Poisson::new(lambda)
        .expect("positive lambda")
        .sample(rng);
    Ok(draw as u64)
}

// ---------------------------------------------------------------------------
// Centered normal mixture
// ---------------------------------------------------------------------------

const SIMPLEX_TOL: f64 = 1e-12;

/// Log-density at `y` of the centered Gaussian mixture with component
/// variances `x` and mixture weights `gamma` on the simplex.
pub fn mixture_gauss_logpdf(y: f64, x: &[f64], gamma: &[f64]) -> Result<LogDensity> {
    validate_mixture(x, gamma)?;
    Ok(LogDensity::new(mixture_gauss_logpdf_unchecked(y, x, gamma)))
}

pub(crate) fn mixture_gauss_logpdf_unchecked(y: f64, x: &[f64], gamma: &[f64]) -> f64 {
    let mut terms = Vec::with_capacity(x.len());
    for (&v, &g) in x.iter().zip(gamma) {
        if g == 0.0 {
            continue;
        }
        terms.push(g.ln() - 0.5 * (LN_2PI + v.ln()) - 0.5 * y * y / v);
    }
    log_sum_exp_slice(&terms)
}

pub(crate) fn validate_mixture(x: &[f64], gamma: &[f64]) -> Result<()> {
    if x.is_empty() || x.len() != gamma.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len().max(1),
            got: gamma.len(),
        });
    }
    if x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "mixture variances must be positive".into(),
        ));
    }
    if gamma.iter().any(|&g| g < 0.0) {
        return Err(Error::InvalidParameter(
            "mixture weights must be nonnegative".into(),
        ));
    }
    let sum: f64 = gamma.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidParameter(format!(
            "mixture weights must sum to 1 (got {sum})"
        )));
    }
    Ok(())
}

/// Draws a mixture component index according to the weights `gamma`.
pub fn sample_mixture_component(gamma: &[f64], rng: &mut RngStream) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &g) in gamma.iter().enumerate() {
        acc += g;
        if u < acc {
            return i;
        }
    }
    gamma.len() - 1
}

/// Draws one mixture variate: component indicator first, then the Gaussian.
pub fn sample_mixture_gauss(x: &[f64], gamma: &[f64], rng: &mut RngStream) -> Result<f64> {
    validate_mixture(x, gamma)?;
    let comp = sample_mixture_component(gamma, rng);
    Ok(sample_gauss(x[comp].sqrt(), rng))
}
