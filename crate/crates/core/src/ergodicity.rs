//! Return-time and stationary-moment diagnostics for the state chain.
//!
//! The reflected random walk `X_k = (X_{k-1} + U_k - m)^+` hits the atom
//! `{0}` from any start, but with heavy-tailed increments the return time
//! `tau_0 = inf{n >= 1 : X_n = 0}` has no exponential moments. Simulation
//! cannot prove that, but it can exhibit the signature: the log-survival
//! curve of `tau_0` flattens instead of staying straight. The curvature
//! statistic below frames this as a one-sided test calibrated on geometric
//! (straight-line) synthetic data.

use crate::error::{Error, Result};
use crate::hmm::ThetaHmm;
use crate::noise::NoiseSpec;
use crate::odm::{simulate_odm, ObservationDriven};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Return-time sampling
// ---------------------------------------------------------------------------

/// Recorded return times to the atom; censored excursions are counted but
/// excluded from the time list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeSample {
    pub times: Vec<u64>,
    pub censored_count: usize,
    pub cap: u64,
}

impl ReturnTimeSample {
    pub fn n_excursions(&self) -> usize {
        self.times.len() + self.censored_count
    }

    /// More than half of the excursions hit the cap.
    pub fn heavy_censoring(&self) -> bool {
        2 * self.censored_count > self.n_excursions()
    }
}

/// Controls for [`return_times`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeConfig {
    pub n_samples: usize,
    /// Excursions longer than this are recorded as censored.
    pub cap: u64,
    /// Substream index of the first excursion. Running `n1` excursions at
    /// offset 0 and `n2` at offset `n1` reproduces a single run of
    /// `n1 + n2` excursions bit for bit.
    pub first_excursion_index: u64,
}

impl ReturnTimeConfig {
    pub fn new(n_samples: usize, cap: u64) -> Result<Self> {
        if cap < 10 {
            return Err(Error::InvalidParameter(format!(
                "return-time cap must be at least 10, got {cap}"
            )));
        }
        if n_samples == 0 {
            return Err(Error::InvalidParameter("need at least one excursion".into()));
        }
        Ok(ReturnTimeConfig { n_samples, cap, first_excursion_index: 0 })
    }

    pub fn with_offset(mut self, first_excursion_index: u64) -> Self {
        self.first_excursion_index = first_excursion_index;
        self
    }
}

/// Samples independent excursions of the state chain started at the atom,
/// each run until it returns to exactly zero or the cap elapses.
pub fn return_times(
    theta: &ThetaHmm,
    increment: &NoiseSpec,
    cfg: &ReturnTimeConfig,
    rng: &RngStream,
) -> Result<ReturnTimeSample> {
    increment.validate()?;
    let mut times = Vec::with_capacity(cfg.n_samples);
    let mut censored = 0usize;
    for i in 0..cfg.n_samples {
        let mut stream = rng.substream(cfg.first_excursion_index + i as u64);
        let mut x = 0.0_f64;
        let mut hit = None;
        for k in 1..=cfg.cap {
            let u = increment.sample(&mut stream);
            x = (x + u - theta.m).max(0.0);
            if x == 0.0 {
                hit = Some(k);
                break;
            }
        }
        match hit {
            Some(k) => times.push(k),
            None => censored += 1,
        }
    }
    Ok(ReturnTimeSample { times, censored_count: censored, cap: cfg.cap })
}

// ---------------------------------------------------------------------------
// Tail diagnostic
// ---------------------------------------------------------------------------

/// Log-survival analysis of a return-time sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// Points `(t, ln P(tau > t))` of the empirical survival curve.
    pub log_survival: Vec<(u64, f64)>,
    /// Least-squares slope of the log-survival in `t`; for geometric tails
    /// this is the log of the survival ratio.
    pub geometric_fit_slope: f64,
    /// Quadratic coefficient of the log-survival fit over rescaled time
    /// `t / t_max`. Positive values mean the tail flattens, the
    /// subexponential signature.
    pub curvature_stat: f64,
    /// Bootstrap percentile interval `(q05, q95)` of the curvature.
    pub curvature_ci: (f64, f64),
    /// One-sided call at the 95% level: the lower CI bound is above zero.
    pub subexponential: bool,
    pub n_uncensored: usize,
    pub censored_count: usize,
}

const BOOTSTRAP_RESAMPLES: usize = 200;
const MIN_TAIL_HITS: usize = 5;

/// Fits the empirical log-survival curve of a return-time sample and tests
/// for positive curvature.
///
/// Censored excursions are excluded from the fit (and reported); the
/// bootstrap resamples whole excursions, so the interval reflects sampling
/// noise of the survival curve rather than the misleading OLS residual
/// variance of heavily dependent points.
pub fn tail_diagnostic(sample: &ReturnTimeSample) -> Result<TailReport> {
    if sample.times.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "tail diagnostic needs at least 100 uncensored excursions, got {}",
            sample.times.len()
        )));
    }
    let mut sorted = sample.times.clone();
    sorted.sort_unstable();
    let curve = survival_curve(&sorted);
    if curve.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "survival curve has only {} usable points",
            curve.len()
        )));
    }
    let (slope, curvature) = fit_log_survival(&curve);

    // bootstrap over excursions with a fixed internal stream, so the
    // diagnostic is a pure function of the sample
    let mut boot_rng = RngStream::new(0x7A11_D1A6, 0);
    let n = sorted.len();
    let mut curvatures = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut resample = vec![0u64; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in resample.iter_mut() {
            let idx = (boot_rng.uniform_open01() * n as f64) as usize;
            *slot = sorted[idx.min(n - 1)];
        }
        resample.sort_unstable();
        let boot_curve = survival_curve(&resample);
        if boot_curve.len() >= 4 {
            curvatures.push(fit_log_survival(&boot_curve).1);
        }
    }
    if curvatures.len() < BOOTSTRAP_RESAMPLES / 2 {
        return Err(Error::InsufficientData(
            "too many degenerate bootstrap resamples".into(),
        ));
    }
    curvatures.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let idx = ((curvatures.len() - 1) as f64 * p).round() as usize;
        curvatures[idx]
    };
    let ci = (q(0.05), q(0.95));

    Ok(TailReport {
        log_survival: curve,
        geometric_fit_slope: slope,
        curvature_stat: curvature,
        curvature_ci: ci,
        subexponential: ci.0 > 0.0,
        n_uncensored: sample.times.len(),
        censored_count: sample.censored_count,
    })
}

/// Empirical `(t, ln S(t))` for t = 1.. while at least [`MIN_TAIL_HITS`]
/// excursions exceed t. Expects sorted input.
fn survival_curve(sorted: &[u64]) -> Vec<(u64, f64)> {
    let n = sorted.len();
    let mut curve = Vec::new();
    let mut t = 1u64;
    loop {
        // count of times strictly greater than t
        let exceeding = n - sorted.partition_point(|&x| x <= t);
        if exceeding < MIN_TAIL_HITS {
            break;
        }
        curve.push((t, (exceeding as f64 / n as f64).ln()));
        t += 1;
    }
    curve
}

/// OLS fit of `ln S` against rescaled time `u = t/t_max`: returns the
/// per-unit-t linear slope and the quadratic coefficient in `u`.
fn fit_log_survival(curve: &[(u64, f64)]) -> (f64, f64) {
    let t_max = curve.last().unwrap().0 as f64;
    let n = curve.len() as f64;
    // normal equations for y ~ c0 + c1 u + c2 u^2
    let mut s = [0.0f64; 5]; // sums of u^k
    let mut b = [0.0f64; 3]; // sums of y u^k
    for &(t, y) in curve {
        let u = t as f64 / t_max;
        let mut up = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += up;
            if k < 3 {
                b[k] += y * up;
            }
            up *= u;
        }
    }
    s[0] = n;
    let m = [
        [s[0], s[1], s[2]],
        [s[1], s[2], s[3]],
        [s[2], s[3], s[4]],
    ];
    let det = det3(&m);
    let replace_col = |col: usize| {
        let mut mm = m;
        for i in 0..3 {
            mm[i][col] = b[i];
        }
        det3(&mm)
    };
    let c2 = replace_col(2) / det;

    // separate linear fit for the geometric slope, reported per unit t
    let mean_u = s[1] / n;
    let mean_y = b[0] / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(t, y) in curve {
        let u = t as f64 / t_max;
        sxx += (u - mean_u) * (u - mean_u);
        sxy += (u - mean_u) * (y - mean_y);
    }
    let lin_slope = sxy / sxx / t_max;
    (lin_slope, c2)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

// ---------------------------------------------------------------------------
// Stationary moment estimation
// ---------------------------------------------------------------------------

/// Ergodic-average estimate with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub burn: usize,
}

const BATCH_COUNT: usize = 30;

/// Batch-means standard error of the mean of a dependent series.
pub fn batch_means_stderr(series: &[f64]) -> f64 {
    let b = series.len() / BATCH_COUNT;
    if b == 0 {
        return f64::INFINITY;
    }
    let means: Vec<f64> = (0..BATCH_COUNT)
        .map(|i| series[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / BATCH_COUNT as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (BATCH_COUNT - 1) as f64;
    (var / BATCH_COUNT as f64).sqrt()
}

/// Ergodic average of `X^beta` for the state chain after a burn-in.
///
/// Refuses `beta` outside `[1, alpha - 1)` for polynomial-tailed
/// increments: beyond that range the stationary moment may be infinite and
/// the average would be quietly meaningless.
pub fn moment_estimate(
    theta: &ThetaHmm,
    increment: &NoiseSpec,
    beta: f64,
    n: usize,
    burn: usize,
    rng: &RngStream,
) -> Result<MomentEstimate> {
    increment.validate()?;
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "moment order must satisfy beta >= 1, got {beta}"
        )));
    }
    if let Some(alpha) = increment.tail_exponent() {
        if beta >= alpha - 1.0 {
            return Err(Error::InvalidParameter(format!(
                "moment order beta = {beta} not below alpha - 1 = {}; \
                 the stationary moment may be infinite",
                alpha - 1.0
            )));
        }
    }
    if n < BATCH_COUNT {
        return Err(Error::InsufficientData(format!(
            "need at least {BATCH_COUNT} post-burn-in samples, got {n}"
        )));
    }
    let path = burnin_sample_hmm(theta, increment, n, burn.max(1), rng)?;
    let series: Vec<f64> = path.iter().map(|x| x.powf(beta)).collect();
    let estimate = series.iter().sum::<f64>() / series.len() as f64;
    Ok(MomentEstimate {
        estimate,
        stderr: batch_means_stderr(&series),
        n,
        burn: burn.max(1),
    })
}

// ---------------------------------------------------------------------------
// Burn-in trajectory sampling
// ---------------------------------------------------------------------------

/// Post-burn-in segment of length `n` of the HMM state chain from the atom.
pub fn burnin_sample_hmm(
    theta: &ThetaHmm,
    increment: &NoiseSpec,
    n: usize,
    burn: usize,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    if burn == 0 {
        return Err(Error::InvalidParameter("burn-in must be at least 1".into()));
    }
    increment.validate()?;
    let mut stream = rng.substream(0);
    let mut x = 0.0_f64;
    for _ in 0..burn {
        let u = increment.sample(&mut stream);
        x = (x + u - theta.m).max(0.0);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = increment.sample(&mut stream);
        x = (x + u - theta.m).max(0.0);
        out.push(x);
    }
    Ok(out)
}

/// Post-burn-in segment of length `n` of an observation-driven state chain.
pub fn burnin_sample_odm<M: ObservationDriven>(
    model: &M,
    x0: &M::State,
    n: usize,
    burn: usize,
    rng: &RngStream,
) -> Result<Vec<M::State>> {
    if burn == 0 {
        return Err(Error::InvalidParameter("burn-in must be at least 1".into()));
    }
    let (xs, _) = simulate_odm(model, x0, burn + n, rng)?;
    Ok(xs[burn + 1..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::pareto_sym_cdf;
    use crate::odm::{NbinGarch, ThetaNbin};
    use approx::assert_relative_eq;

    fn theta_m(m: f64) -> ThetaHmm {
        ThetaHmm::new(m, 0.8).unwrap()
    }

    fn pareto(alpha: f64) -> NoiseSpec {
        NoiseSpec::symmetric_pareto(alpha, 1.0).unwrap()
    }

    // synthetic return-time generators used as oracles
    fn geometric_times(n: usize, survive: f64, rng: &mut RngStream) -> ReturnTimeSample {
        let times = (0..n)
            .map(|_| 1 + (rng.uniform_open01().ln() / survive.ln()).floor() as u64)
            .collect();
        ReturnTimeSample { times, censored_count: 0, cap: u64::MAX }
    }

    fn pareto_tailed_times(n: usize, gamma: f64, rng: &mut RngStream) -> ReturnTimeSample {
        let times = (0..n)
            .map(|_| {
                let z = (1.0 - rng.uniform_open01()).powf(-1.0 / gamma) - 1.0;
                (z.ceil() as u64).max(1)
            })
            .collect();
        ReturnTimeSample { times, censored_count: 0, cap: u64::MAX }
    }

    #[test]
    fn immediate_return_probability_matches_cdf() {
        // X_1 = (U_1 - m)^+ = 0 iff U_1 <= m, so P(tau = 1) = F(m)
        let theta = theta_m(1.0);
        let inc = pareto(3.0);
        let cfg = ReturnTimeConfig::new(10_000, 1_000_000).unwrap();
        let rng = RngStream::new(2024, 0);
        let sample = return_times(&theta, &inc, &cfg, &rng).unwrap();
        let hits = sample.times.iter().filter(|&&t| t == 1).count();
        let frac = hits as f64 / sample.n_excursions() as f64;
        let expect = pareto_sym_cdf(1.0, 3.0, 1.0).unwrap();
        assert_relative_eq!(expect, 0.9375, epsilon = 1e-12);
        assert!((frac - expect).abs() < 0.02, "frac {frac} vs {expect}");
        assert!(frac > 0.5);
    }

    #[test]
    fn return_times_deterministic_and_splittable() {
        let theta = theta_m(1.0);
        let inc = pareto(3.5);
        let rng = RngStream::new(7, 3);
        let full = return_times(&theta, &inc, &ReturnTimeConfig::new(200, 10_000).unwrap(), &rng)
            .unwrap();
        let again = return_times(&theta, &inc, &ReturnTimeConfig::new(200, 10_000).unwrap(), &rng)
            .unwrap();
        assert_eq!(full, again);

        // split into 120 + 80 with the offset continuing the excursion index
        let a = return_times(&theta, &inc, &ReturnTimeConfig::new(120, 10_000).unwrap(), &rng)
            .unwrap();
        let b = return_times(
            &theta,
            &inc,
            &ReturnTimeConfig::new(80, 10_000).unwrap().with_offset(120),
            &rng,
        )
        .unwrap();
        let mut joined = a.times.clone();
        joined.extend_from_slice(&b.times);
        assert_eq!(full.times, joined);
        assert_eq!(full.censored_count, a.censored_count + b.censored_count);
    }

    #[test]
    fn return_time_config_validation() {
        assert!(ReturnTimeConfig::new(10, 5).is_err());
        assert!(ReturnTimeConfig::new(0, 100).is_err());
    }

    #[test]
    fn tail_diagnostic_survival_curve_is_nonincreasing() {
        let mut rng = RngStream::new(91, 0);
        let sample = geometric_times(3000, 0.8, &mut rng);
        let report = tail_diagnostic(&sample).unwrap();
        for w in report.log_survival.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }

    #[test]
    fn tail_diagnostic_geometric_data_is_not_flagged() {
        let mut rng = RngStream::new(92, 0);
        let sample = geometric_times(3000, 0.8, &mut rng);
        let report = tail_diagnostic(&sample).unwrap();
        // curvature statistically indistinguishable from zero
        assert!(
            report.curvature_ci.0 <= report.curvature_stat
                && report.curvature_stat <= report.curvature_ci.1
        );
        assert!(!report.subexponential, "geometric data flagged: {report:?}");
        assert!(report.geometric_fit_slope < 0.0);
    }

    #[test]
    fn tail_diagnostic_pareto_data_is_flagged() {
        let mut rng = RngStream::new(93, 0);
        let sample = pareto_tailed_times(3000, 2.0, &mut rng);
        let report = tail_diagnostic(&sample).unwrap();
        assert!(report.curvature_stat > 0.0);
        assert!(report.subexponential, "pareto tail not flagged: {report:?}");
    }

    #[test]
    fn tail_diagnostic_needs_enough_data() {
        let sample = ReturnTimeSample { times: vec![1; 50], censored_count: 0, cap: 100 };
        assert!(matches!(
            tail_diagnostic(&sample),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn moment_estimate_refuses_orders_beyond_tail() {
        let rng = RngStream::new(1, 0);
        // alpha = 3.5 admits beta in [1, 2.5)
        assert!(moment_estimate(&theta_m(1.0), &pareto(3.5), 2.5, 1000, 100, &rng).is_err());
        assert!(moment_estimate(&theta_m(1.0), &pareto(3.5), 3.0, 1000, 100, &rng).is_err());
        assert!(moment_estimate(&theta_m(1.0), &pareto(3.5), 0.5, 1000, 100, &rng).is_err());
        assert!(moment_estimate(&theta_m(1.0), &pareto(3.5), 1.0, 1000, 100, &rng).is_ok());
        // Gaussian increments have all moments
        let gauss = NoiseSpec::gaussian(1.0).unwrap();
        assert!(moment_estimate(&theta_m(1.0), &gauss, 4.0, 1000, 100, &rng).is_ok());
    }

    #[test]
    fn moment_estimate_is_nonnegative_and_seed_stable() {
        let theta = theta_m(1.0);
        let inc = pareto(3.5);
        let e1 = moment_estimate(&theta, &inc, 1.0, 200_000, 2_000, &RngStream::new(10, 0)).unwrap();
        let e2 = moment_estimate(&theta, &inc, 1.0, 200_000, 2_000, &RngStream::new(11, 0)).unwrap();
        assert!(e1.estimate >= 0.0);
        let combined = (e1.stderr * e1.stderr + e2.stderr * e2.stderr).sqrt();
        assert!(
            (e1.estimate - e2.estimate).abs() < 3.0 * combined,
            "estimates {} vs {} with combined se {combined}",
            e1.estimate,
            e2.estimate
        );
    }

    #[test]
    fn moment_estimate_insensitive_to_burnin_doubling() {
        let theta = theta_m(1.0);
        let inc = pareto(3.5);
        let rng = RngStream::new(12, 0);
        let e1 = moment_estimate(&theta, &inc, 1.0, 100_000, 1_000, &rng).unwrap();
        let e2 = moment_estimate(&theta, &inc, 1.0, 100_000, 2_000, &rng).unwrap();
        let scale = e1.stderr.max(e2.stderr);
        assert!(
            (e1.estimate - e2.estimate).abs() < 2.0 * scale * 2.0,
            "burn-in sensitivity: {} vs {}",
            e1.estimate,
            e2.estimate
        );
    }

    #[test]
    fn burnin_hmm_output_length_and_seed_stability() {
        let theta = theta_m(1.0);
        let inc = pareto(3.5);
        let path = burnin_sample_hmm(&theta, &inc, 5000, 100, &RngStream::new(13, 0)).unwrap();
        assert_eq!(path.len(), 5000);

        let p1 = burnin_sample_hmm(&theta, &inc, 150_000, 2_000, &RngStream::new(14, 0)).unwrap();
        let p2 = burnin_sample_hmm(&theta, &inc, 150_000, 2_000, &RngStream::new(15, 0)).unwrap();
        let m1 = p1.iter().sum::<f64>() / p1.len() as f64;
        let m2 = p2.iter().sum::<f64>() / p2.len() as f64;
        let se = (batch_means_stderr(&p1).powi(2) + batch_means_stderr(&p2).powi(2)).sqrt();
        assert!((m1 - m2).abs() < 3.0 * se, "means {m1} vs {m2}, se {se}");
    }

    #[test]
    fn burnin_odm_contracts_to_fixed_point_when_decoupled() {
        // b = 0: affine contraction to omega / (1 - a)
        let model = NbinGarch::new(ThetaNbin::new(1.0, 0.5, 0.0, 2.0).unwrap());
        let burn = 40usize;
        let x0 = 9.0;
        let path = burnin_sample_odm(&model, &x0, 10, burn, &RngStream::new(16, 0)).unwrap();
        assert_eq!(path.len(), 10);
        let fixed = 1.0 / (1.0 - 0.5);
        let bound = 0.5_f64.powi(burn as i32) * (x0 - fixed).abs();
        assert!((path[0] - fixed).abs() <= bound + 1e-12);
    }

    #[test]
    fn burnin_requires_positive_burn() {
        let theta = theta_m(1.0);
        assert!(burnin_sample_hmm(&theta, &pareto(3.5), 10, 0, &RngStream::new(1, 0)).is_err());
    }
}
