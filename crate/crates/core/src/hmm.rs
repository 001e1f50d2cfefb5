//! Reflected random-walk HMM with an atom at zero.
//!
//! The hidden chain lives on the nonnegative half-line and follows
//!
//! ```text
//! X_k = (X_{k-1} + U_k - m)^+        U_k ~ increment noise (heavy-tailed)
//! Y_k = a X_k + V_k                  V_k ~ observation noise
//! ```
//!
//! The transition kernel has a density with respect to the dominating
//! measure `mu(dx) = lebesgue(dx) + delta_0(dx)`: a continuous part
//! `r(x' - x + m)` on `x' > 0` and an atom `F(m - x)` at `x' = 0`, where
//! `r` and `F` are the increment density and CDF.
//!
//! Likelihood evaluation discretizes `mu` on a grid that keeps the atom as
//! an exact node of weight one and covers `(0, x_max]` with midpoint cells.
//! Two independent reference routes are provided: a brute-force nested
//! quadrature for very short paths and a bootstrap particle filter.

use crate::error::{Error, Result};
use crate::logspace::LogDensity;
use crate::noise::NoiseSpec;
use crate::quad::adaptive_simpson_split;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Parameters and noise
// ---------------------------------------------------------------------------

/// Model parameter: drift `m > 0` and observation slope `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaHmm {
    pub m: f64,
    pub a: f64,
}

impl ThetaHmm {
    pub fn new(m: f64, a: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "hmm theta requires m > 0 and finite a, got ({m}, {a})"
            )));
        }
        Ok(ThetaHmm { m, a })
    }
}

/// The pair of noise laws: state increments `U` and observation errors `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmNoise {
    pub increment: NoiseSpec,
    pub observation: NoiseSpec,
}

impl HmmNoise {
    /// Symmetric Pareto increments (alpha = 3.5, scale 1) with standard
    /// Gaussian observation errors. With alpha > 3 this pairing keeps the
    /// Gaussian within the admissible moment range of the increments.
    pub fn default_pareto_gauss() -> Self {
        HmmNoise {
            increment: NoiseSpec::SymmetricPareto { alpha: 3.5, scale: 1.0 },
            observation: NoiseSpec::Gaussian { sigma: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.increment.validate()?;
        self.observation.validate()
    }
}

// ---------------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------------

/// Transition log-density `ln q(x; x')` with respect to `mu`.
///
/// The `x' = 0` branch returns the log of the atom mass `F(m - x)`; any
/// positive `x'` uses the continuous density `r(x' - x + m)`.
pub fn q_logdensity(
    theta: &ThetaHmm,
    increment: &NoiseSpec,
    x: f64,
    x_prime: f64,
) -> Result<LogDensity> {
    check_state(x)?;
    check_state(x_prime)?;
    if x_prime == 0.0 {
        Ok(LogDensity::new(increment.cdf(theta.m - x).ln()))
    } else {
        Ok(increment.logpdf(x_prime - x + theta.m))
    }
}

/// Emission log-density `ln g(x; y) = ln h(y - a x)`.
pub fn g_logdensity(theta: &ThetaHmm, observation: &NoiseSpec, x: f64, y: f64) -> Result<LogDensity> {
    check_state(x)?;
    Ok(observation.logpdf(y - theta.a * x))
}

fn check_state(x: f64) -> Result<()> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::InvalidState(format!(
            "hmm state must be a finite nonnegative real, got {x}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Simulates `n` steps of the chain from `x0`.
///
/// Returns the state path `X_0..X_n` (length `n + 1`) and the observation
/// path `Y_1..Y_n` (length `n`). Increments and observation errors draw
/// from separate substreams of `rng`.
pub fn simulate_hmm(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    x0: f64,
    n: usize,
    rng: &RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(x0)?;
    if n == 0 {
        return Err(Error::EmptyPath);
    }
    let mut u_rng = rng.substream(0);
    let mut v_rng = rng.substream(1);
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n);
    let mut x = x0;
    xs.push(x);
    for _ in 0..n {
        let u = noise.increment.sample(&mut u_rng);
        x = (x + u - theta.m).max(0.0);
        let v = noise.observation.sample(&mut v_rng);
        xs.push(x);
        ys.push(theta.a * x + v);
    }
    Ok((xs, ys))
}

// ---------------------------------------------------------------------------
// Grid discretization of the dominating measure
// ---------------------------------------------------------------------------

/// Cell layout of the continuous part of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Spacing {
    Uniform,
    /// Cell widths grow by `growth > 1` from zero upward, concentrating
    /// resolution near the atom where the filter mass accumulates.
    Geometric { growth: f64 },
}

/// Declarative description of a likelihood grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_max: f64,
    pub n_cells: usize,
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn new(x_max: f64, n_cells: usize, spacing: Spacing) -> Result<Self> {
        if n_cells == 0 {
            // atom-only grid: a single node at zero
            if x_max != 0.0 {
                return Err(Error::InvalidParameter(
                    "atom-only grid requires x_max = 0".into(),
                ));
            }
            return Ok(GridSpec { x_max, n_cells, spacing });
        }
        if !(x_max > 0.0) || !x_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid x_max must be positive, got {x_max}"
            )));
        }
        if let Spacing::Geometric { growth } = spacing {
            if !(growth > 1.0) || !growth.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "geometric growth must exceed 1, got {growth}"
                )));
            }
        }
        Ok(GridSpec { x_max, n_cells, spacing })
    }

    /// Default grid for a parameter box with drift upper bound `m_upper`:
    /// `x_max = 20 m_upper`, 800 geometrically growing cells. The heavy
    /// increment tails make uniform grids wasteful, so cells are finest
    /// near the atom.
    pub fn default_for(m_upper: f64) -> Self {
        GridSpec {
            x_max: 20.0 * m_upper,
            n_cells: 800,
            spacing: Spacing::Geometric { growth: 1.008 },
        }
    }

    /// Grid consisting of the atom alone.
    pub fn atom_only() -> Self {
        GridSpec { x_max: 0.0, n_cells: 0, spacing: Spacing::Uniform }
    }
}

/// A realized grid: node locations plus their `mu` weights.
///
/// Node 0 is always the atom at exactly `0.0` with weight exactly `1.0`;
/// the remaining nodes are cell midpoints weighted by cell width.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    nodes: Vec<f64>,
    mu: Vec<f64>,
}

impl Grid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let spec = GridSpec::new(spec.x_max, spec.n_cells, spec.spacing)?;
        let n = spec.n_cells;
        let mut nodes = Vec::with_capacity(n + 1);
        let mut mu = Vec::with_capacity(n + 1);
        nodes.push(0.0);
        mu.push(1.0);
        if n > 0 {
            let edges = match spec.spacing {
                Spacing::Uniform => (0..=n)
                    .map(|j| spec.x_max * j as f64 / n as f64)
                    .collect::<Vec<_>>(),
                Spacing::Geometric { growth } => {
                    let denom = growth.powi(n as i32) - 1.0;
                    (0..=n)
                        .map(|j| spec.x_max * (growth.powi(j as i32) - 1.0) / denom)
                        .collect::<Vec<_>>()
                }
            };
            for j in 1..=n {
                nodes.push(0.5 * (edges[j - 1] + edges[j]));
                mu.push(edges[j] - edges[j - 1]);
            }
        }
        Ok(Grid { spec, nodes, mu })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Number of nodes including the atom.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the atom is always present
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn mu_weights(&self) -> &[f64] {
        &self.mu
    }

    /// Index of the node nearest to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, &node) in self.nodes.iter().enumerate() {
            let d = (node - x).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }
}

/// Initial law of the filter on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Xi {
    /// Point mass; snapped to the nearest grid node by `filter_init`.
    Dirac { x: f64 },
    /// Equal density with respect to `mu` over the whole grid.
    Uniform,
}

// ---------------------------------------------------------------------------
// Filter state and the grid filter engine
// ---------------------------------------------------------------------------

/// Log-weighted representation of the conditional state law on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// One log-weight per grid node; `exp` sums to one.
    pub log_weights: Vec<f64>,
    /// Running log of the accumulated unnormalized mass, one summand per
    /// observation consumed.
    pub log_normalizer_accum: f64,
}

impl FilterState {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn weight_sum(&self) -> f64 {
        self.log_weights.iter().map(|lw| lw.exp()).sum()
    }
}

/// Normalized filter initialization; the accumulator starts at zero.
pub fn filter_init(grid: &Grid, xi: &Xi) -> Result<FilterState> {
    let n = grid.len();
    let mut log_weights = vec![f64::NEG_INFINITY; n];
    match *xi {
        Xi::Dirac { x } => {
            check_state(x)?;
            if x > grid.spec().x_max {
                return Err(Error::InvalidParameter(format!(
                    "dirac point {x} exceeds grid x_max {}",
                    grid.spec().x_max
                )));
            }
            log_weights[grid.nearest_node(x)] = 0.0;
        }
        Xi::Uniform => {
            let total: f64 = grid.mu_weights().iter().sum();
            for (lw, &m) in log_weights.iter_mut().zip(grid.mu_weights()) {
                *lw = (m / total).ln();
            }
        }
    }
    Ok(FilterState { log_weights, log_normalizer_accum: 0.0 })
}

/// Precomputed transition kernel on a grid for one parameter point.
///
/// Entry `(i, j)` stores `q(x_i; x_j) mu_j` in linear scale, so one filter
/// step is a plain vector-matrix product followed by the emission reweight.
/// The per-step emission factor is shifted by its maximum before
/// exponentiation, which keeps the recursion finite even when far tail
/// observations underflow individual weights.
pub struct GridFilter<'a> {
    grid: &'a Grid,
    theta: ThetaHmm,
    noise: HmmNoise,
    kernel: Vec<f64>,
    /// Per-row transition mass escaping beyond `x_max`; feeds the
    /// truncation report.
    escape: Vec<f64>,
}

/// Diagnostics accumulated over a filtered path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridReport {
    /// Largest filter-weighted transition mass that fell beyond the grid.
    pub truncation_mass_max: f64,
}

impl<'a> GridFilter<'a> {
    pub fn new(theta: &ThetaHmm, noise: &HmmNoise, grid: &'a Grid) -> Result<Self> {
        noise.validate()?;
        let n = grid.len();
        let nodes = grid.nodes();
        let mu = grid.mu_weights();
        let mut kernel = vec![0.0; n * n];
        let mut escape = vec![0.0; n];
        for i in 0..n {
            let row = &mut kernel[i * n..(i + 1) * n];
            for (j, slot) in row.iter_mut().enumerate() {
                let q = q_logdensity(theta, &noise.increment, nodes[i], nodes[j])?;
                *slot = q.value().exp() * mu[j];
            }
            escape[i] = 1.0 - noise.increment.cdf(grid.spec().x_max - nodes[i] + theta.m);
        }
        Ok(GridFilter { grid, theta: *theta, noise: *noise, kernel, escape })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    fn emission_logs(&self, y: f64, out: &mut Vec<f64>) {
        out.clear();
        for &x in self.grid.nodes() {
            out.push(self.noise.observation.logpdf(y - self.theta.a * x).value());
        }
    }

    /// Tilts the state by the emission at the initial observation; this is
    /// the `g(x_0; y_0)` factor that opens the unnormalized likelihood
    /// product. Returns the log-mass absorbed.
    pub fn reweight_initial(&self, state: &mut FilterState, y0: f64) -> f64 {
        let mut logg = Vec::new();
        self.emission_logs(y0, &mut logg);
        let mut shift = f64::NEG_INFINITY;
        for (lw, lg) in state.log_weights.iter().zip(&logg) {
            if *lw > f64::NEG_INFINITY {
                shift = shift.max(lw + lg);
            }
        }
        let mut mass = 0.0;
        for (lw, lg) in state.log_weights.iter_mut().zip(&logg) {
            *lw += lg;
            mass += (*lw - shift).exp();
        }
        let log_mass = shift + mass.ln();
        for lw in state.log_weights.iter_mut() {
            *lw -= log_mass;
        }
        state.log_normalizer_accum += log_mass;
        log_mass
    }

    /// One filter update: propagate through the transition kernel, reweight
    /// by the emission at `y`, renormalize. Returns the log of the
    /// pre-normalization mass together with the escaped transition mass.
    pub fn step(&self, state: &mut FilterState, y: f64) -> Result<(f64, f64)> {
        let n = self.grid.len();
        let w: Vec<f64> = state.log_weights.iter().map(|lw| lw.exp()).collect();

        // propagated mass p_j = sum_i w_i q(x_i; x_j) mu_j, plus truncation
        let mut p = vec![0.0; n];
        let mut escaped = 0.0;
        for (i, (&wi, esc)) in w.iter().zip(&self.escape).enumerate() {
            if wi == 0.0 {
                continue;
            }
            escaped += wi * esc;
            let row = &self.kernel[i * n..(i + 1) * n];
            for (pj, kij) in p.iter_mut().zip(row) {
                *pj += wi * kij;
            }
        }

        let mut logg = Vec::new();
        self.emission_logs(y, &mut logg);
        let shift = logg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let mut mass = 0.0;
        for j in 0..n {
            mass += p[j] * (logg[j] - shift).exp();
        }
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::NonConvergence(format!(
                "filter mass degenerated to {mass}; all weights underflowed"
            )));
        }
        let log_mass = shift + mass.ln();
        for j in 0..n {
            state.log_weights[j] = p[j].ln() + logg[j] - log_mass;
        }
        state.log_normalizer_accum += log_mass;
        Ok((log_mass, escaped))
    }

    /// Total-variation distance between two filter states on this grid.
    pub fn tv_distance(a: &FilterState, b: &FilterState) -> f64 {
        0.5 * a
            .log_weights
            .iter()
            .zip(&b.log_weights)
            .map(|(x, y)| (x.exp() - y.exp()).abs())
            .sum::<f64>()
    }
}

/// One filter update as a pure function.
///
/// For bulk evaluation construct a [`GridFilter`] once and call
/// [`GridFilter::step`] in a loop; this convenience wrapper rebuilds the
/// kernel on every call.
pub fn filter_step(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    grid: &Grid,
    state: &FilterState,
    y: f64,
) -> Result<FilterState> {
    let engine = GridFilter::new(theta, noise, grid)?;
    let mut next = state.clone();
    engine.step(&mut next, y)?;
    Ok(next)
}

// ---------------------------------------------------------------------------
// Likelihood evaluation on the grid
// ---------------------------------------------------------------------------

/// Normalized log-likelihood `n^-1 ln xi P<y_{0:n-1}> 1` on the grid.
///
/// The first observation enters through the emission tilt `g(x_0; y_0)`;
/// every later observation contributes one propagate-and-reweight step.
pub fn loglik_grid(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    grid: &Grid,
    xi: &Xi,
    y_path: &[f64],
) -> Result<f64> {
    loglik_grid_with_report(theta, noise, grid, xi, y_path).map(|(ll, _)| ll)
}

/// Same as [`loglik_grid`] but also reports the worst-case truncation mass
/// over the run.
pub fn loglik_grid_with_report(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    grid: &Grid,
    xi: &Xi,
    y_path: &[f64],
) -> Result<(f64, GridReport)> {
    if y_path.is_empty() {
        return Err(Error::EmptyPath);
    }
    let engine = GridFilter::new(theta, noise, grid)?;
    let mut state = filter_init(grid, xi)?;
    let mut report = GridReport::default();
    engine.reweight_initial(&mut state, y_path[0]);
    for &y in &y_path[1..] {
        let (_, escaped) = engine.step(&mut state, y)?;
        report.truncation_mass_max = report.truncation_mass_max.max(escaped);
    }
    Ok((state.log_normalizer_accum / y_path.len() as f64, report))
}

/// Per-step total-variation gap between two filters run on the same
/// observations from different initial laws.
pub fn filter_tv_gap(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    grid: &Grid,
    xi1: &Xi,
    xi2: &Xi,
    y_path: &[f64],
) -> Result<Vec<f64>> {
    let engine = GridFilter::new(theta, noise, grid)?;
    let mut a = filter_init(grid, xi1)?;
    let mut b = filter_init(grid, xi2)?;
    let mut gaps = Vec::with_capacity(y_path.len());
    for &y in y_path {
        engine.step(&mut a, y)?;
        engine.step(&mut b, y)?;
        gaps.push(GridFilter::tv_distance(&a, &b));
    }
    Ok(gaps)
}

// ---------------------------------------------------------------------------
// Brute-force reference likelihood (nested quadrature)
// ---------------------------------------------------------------------------

/// Quadrature controls for the brute-force likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    /// Upper integration limit for the continuous part of `mu`.
    pub x_upper: f64,
    /// Absolute tolerance of the outermost integral.
    pub tol: f64,
    pub max_depth: u32,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { x_upper: 60.0, tol: 1e-10, max_depth: 40 }
    }
}

/// Integral of `f` against `mu(dx) = delta_0(dx) + lebesgue(dx)` over
/// `{0} + (0, x_upper]`, with forced subdivision at the given knots.
pub fn integrate_mu<F: Fn(f64) -> f64>(
    f: &F,
    x_upper: f64,
    knots: &[f64],
    tol: f64,
    max_depth: u32,
) -> f64 {
    f(0.0) + adaptive_simpson_split(f, 0.0, x_upper, knots, tol, max_depth)
}

/// High-accuracy reference value of the normalized log-likelihood by
/// nested quadrature; an independent code path from the grid filter.
///
/// The cost is exponential in the path length, so at most three
/// observations are accepted. Only point-mass initial laws are supported.
pub fn loglik_bruteforce(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    xi: &Xi,
    y_path: &[f64],
    quad: &QuadSpec,
) -> Result<f64> {
    if y_path.is_empty() {
        return Err(Error::EmptyPath);
    }
    if y_path.len() > 3 {
        return Err(Error::InvalidParameter(format!(
            "brute-force likelihood is limited to 3 observations, got {}",
            y_path.len()
        )));
    }
    let x0 = match *xi {
        Xi::Dirac { x } => {
            check_state(x)?;
            x
        }
        Xi::Uniform => {
            return Err(Error::InvalidParameter(
                "brute-force likelihood supports dirac initial laws only".into(),
            ))
        }
    };
    noise.validate()?;
    let g0 = g_logdensity(theta, &noise.observation, x0, y_path[0])?.density();
    let value = g0 * nested_tail(theta, noise, x0, &y_path[1..], quad, quad.tol);
    Ok(value.ln() / y_path.len() as f64)
}

fn nested_tail(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    x: f64,
    remaining: &[f64],
    quad: &QuadSpec,
    tol: f64,
) -> f64 {
    match remaining.split_first() {
        None => 1.0,
        Some((&y, rest)) => {
            let integrand = |xp: f64| {
                let q = if xp == 0.0 {
                    noise.increment.cdf(theta.m - x)
                } else {
                    noise.increment.logpdf(xp - x + theta.m).density()
                };
                let g = noise.observation.logpdf(y - theta.a * xp).density();
                q * g * nested_tail(theta, noise, xp, rest, quad, tol * 0.1)
            };
            // the increment density has a kink where its argument is zero,
            // and the emission peaks where y = a x'
            let mut knots = vec![x - theta.m];
            if theta.a != 0.0 {
                knots.push(y / theta.a);
            }
            integrate_mu(&integrand, quad.x_upper, &knots, tol, quad.max_depth)
        }
    }
}

// ---------------------------------------------------------------------------
// Bootstrap particle filter
// ---------------------------------------------------------------------------

/// Result of a particle-filter likelihood run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleLoglik {
    /// Normalized log-likelihood estimate.
    pub loglik: f64,
    /// Delta-method standard error of the normalized estimate, treating the
    /// per-step weight averages as independent.
    pub stderr: f64,
    /// Effective sample size after each observation.
    pub ess: Vec<f64>,
    pub min_ess: f64,
    /// Set when the minimum effective sample size fell below 10.
    pub degenerate: bool,
}

/// Bootstrap particle filter estimate of the normalized log-likelihood,
/// with multinomial resampling after every observation.
pub fn particle_filter_loglik(
    theta: &ThetaHmm,
    noise: &HmmNoise,
    xi: &Xi,
    y_path: &[f64],
    n_particles: usize,
    rng: &RngStream,
) -> Result<ParticleLoglik> {
    if y_path.is_empty() {
        return Err(Error::EmptyPath);
    }
    if n_particles < 100 {
        return Err(Error::InvalidParameter(format!(
            "particle filter requires at least 100 particles, got {n_particles}"
        )));
    }
    noise.validate()?;
    let mut prop_rng = rng.substream(1);
    let mut resample_rng = rng.substream(2);

    let mut particles: Vec<f64> = match *xi {
        Xi::Dirac { x } => {
            check_state(x)?;
            vec![x; n_particles]
        }
        Xi::Uniform => {
            return Err(Error::InvalidParameter(
                "particle filter supports dirac initial laws only".into(),
            ));
        }
    };

    let n = y_path.len();
    let mut log_total = 0.0;
    let mut var_total = 0.0;
    let mut ess_path = Vec::with_capacity(n);
    let mut logg = vec![0.0; n_particles];
    let mut w = vec![0.0; n_particles];
    let mut cum = vec![0.0; n_particles];
    let mut next = vec![0.0; n_particles];

    for (k, &y) in y_path.iter().enumerate() {
        if k > 0 {
            for p in particles.iter_mut() {
                let u = noise.increment.sample(&mut prop_rng);
                *p = (*p + u - theta.m).max(0.0);
            }
        }
        for (lg, &p) in logg.iter_mut().zip(&particles) {
            *lg = noise.observation.logpdf(y - theta.a * p).value();
        }
        let shift = logg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (wi, &lg) in w.iter_mut().zip(&logg) {
            *wi = (lg - shift).exp();
            sum += *wi;
            sum_sq += *wi * *wi;
        }
        let mean = sum / n_particles as f64;
        log_total += shift + mean.ln();
        // relative variance of the step average; shift-invariant
        let var_w = (sum_sq / n_particles as f64 - mean * mean).max(0.0);
        var_total += var_w / (n_particles as f64 * mean * mean);
        let ess = sum * sum / sum_sq;
        ess_path.push(ess);

        // multinomial resampling
        cum[0] = w[0];
        for i in 1..n_particles {
            cum[i] = cum[i - 1] + w[i];
        }
        let total = cum[n_particles - 1];
        for slot in next.iter_mut() {
            let u = resample_rng.uniform_open01() * total;
            let idx = cum.partition_point(|&c| c < u).min(n_particles - 1);
            *slot = particles[idx];
        }
        std::mem::swap(&mut particles, &mut next);
    }

    let min_ess = ess_path.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ParticleLoglik {
        loglik: log_total / n as f64,
        stderr: var_total.sqrt() / n as f64,
        ess: ess_path,
        min_ess,
        degenerate: min_ess < 10.0,
    })
}
