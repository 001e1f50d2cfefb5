//! Observation-driven models: deterministic state recursion plus emission.
//!
//! An observation-driven model alternates a deterministic state update
//! `x' = psi(x, y)` with a draw of the next observation from the emission
//! law `g(x'; .)`. Because the state is a function of past observations,
//! the conditional log-likelihood of a sample is available in closed form
//! by unrolling the recursion from any fixed starting state.
//!
//! Two concrete families are implemented:
//!
//! * [`NbinGarch`]: integer-valued GARCH(1,1) with negative binomial
//!   emission, state `x' = omega + a x + b y`;
//! * [`NmGarch`]: normal mixture GARCH(1,1) with vector state
//!   `x' = omega + A x + y^2 b` and centered Gaussian-mixture emission.

use crate::error::{Error, Result};
use crate::logspace::LogDensity;
use crate::noise::{
    mixture_gauss_logpdf_unchecked, nb_logpmf_unchecked, sample_gauss, sample_mixture_component,
    sample_nb, validate_mixture,
};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// State and observation paths returned by a simulation.
pub type SimulatedPath<M> = (
    Vec<<M as ObservationDriven>::State>,
    Vec<<M as ObservationDriven>::Obs>,
);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Success-probability convention for the NBIN emission.
///
/// The two conventions disagree on how the state enters the negative
/// binomial: `MeanRx` uses success probability `1/(1+x)` so the conditional
/// mean is `r x`, which is the convention under which the stability
/// condition `r b + a < 1` keeps the chain in check. `Literal` uses
/// `x/(1+x)` (conditional mean `r/x`). Both are supported; `MeanRx` is the
/// default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NbParametrization {
    #[default]
    MeanRx,
    Literal,
}

/// Parameters of the NBIN-GARCH(1,1) model.
///
/// `omega` and `r` must be strictly positive; `a` and `b` are allowed to be
/// zero so that degenerate submodels (constant or AR-only state) remain
/// expressible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaNbin {
    pub omega: f64,
    pub a: f64,
    pub b: f64,
    pub r: f64,
}

impl ThetaNbin {
    pub fn new(omega: f64, a: f64, b: f64, r: f64) -> Result<Self> {
        let all_finite = [omega, a, b, r].iter().all(|v| v.is_finite());
        if !all_finite || !(omega > 0.0) || a < 0.0 || b < 0.0 || !(r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nbin theta requires omega>0, a>=0, b>=0, r>0; got ({omega}, {a}, {b}, {r})"
            )));
        }
        Ok(ThetaNbin { omega, a, b, r })
    }

    /// Stability condition `r b + a < 1` with its margin.
    pub fn stability(&self) -> Stability {
        let s = self.r * self.b + self.a;
        Stability {
            stable: s < 1.0,
            margin: 1.0 - s,
        }
    }
}

/// Parameters of the NM(d)-GARCH(1,1) model.
///
/// `gamma` lies on the simplex, `omega` is entrywise positive, `a` is the
/// d x d nonnegative recursion matrix in row-major order and `b` is the
/// nonnegative load of the squared observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaNm {
    pub gamma: Vec<f64>,
    pub omega: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ThetaNm {
    pub fn new(gamma: Vec<f64>, omega: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let d = gamma.len();
        // simplex check shares the mixture validator (variances pinned to 1)
        validate_mixture(&vec![1.0; d], &gamma)?;
        if omega.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: omega.len() });
        }
        if b.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: b.len() });
        }
        if a.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: a.len() });
        }
        if omega.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("nm omega must be entrywise positive".into()));
        }
        if b.iter().any(|&v| v < 0.0 || !v.is_finite())
            || a.iter().any(|&v| v < 0.0 || !v.is_finite())
        {
            return Err(Error::InvalidParameter("nm A and b must be entrywise nonnegative".into()));
        }
        Ok(ThetaNm { gamma, omega, a, b })
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Stability condition: spectral radius of `A + b gamma^T` below one.
    pub fn stability(&self) -> Result<Stability> {
        let d = self.dim();
        let mut m = self.a.clone();
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] += self.b[i] * self.gamma[j];
            }
        }
        let rho = spectral_radius(&m, d)?;
        Ok(Stability {
            stable: rho < 1.0,
            margin: 1.0 - rho,
        })
    }
}

/// Outcome of a stability check: the flag plus how far from the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub stable: bool,
    /// `1 - (r b + a)` for NBIN, `1 - rho(A + b gamma^T)` for NM; negative
    /// when unstable.
    pub margin: f64,
}

// ---------------------------------------------------------------------------
// Spectral radius
// ---------------------------------------------------------------------------

/// Largest eigenvalue modulus of a square nonnegative matrix (row-major).
///
/// Power iteration on the shifted matrix `M + I` with Collatz-Wielandt
/// bracketing: for a positive vector `v`, `rho(M+I)` always lies between
/// `min_i (Mv+v)_i/v_i` and `max_i (Mv+v)_i/v_i`, and the bracket contracts
/// for the primitive matrices produced by the stability checks. The shift
/// makes the diagonal positive, which removes periodicity.
pub fn spectral_radius(m: &[f64], d: usize) -> Result<f64> {
    if d == 0 || m.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: m.len() });
    }
    if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "spectral radius requires a nonnegative matrix".into(),
        ));
    }
    let tol = 1e-10;
    let max_iter = 200_000;
    let mut v = vec![1.0; d];
    let mut w = vec![0.0; d];
    let mut bracket = (0.0, f64::INFINITY);
    for _ in 0..max_iter {
        for i in 0..d {
            let mut acc = v[i]; // the +I shift
            let row = &m[i * d..(i + 1) * d];
            for j in 0..d {
                acc += row[j] * v[j];
            }
            w[i] = acc;
        }
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..d {
            let ratio = w[i] / v[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        bracket = (lo, hi);
        if hi - lo < tol {
            return Ok(0.5 * (lo + hi) - 1.0);
        }
        let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..d {
            v[i] = w[i] / norm;
        }
    }
    Err(Error::NonConvergence(format!(
        "power iteration bracket [{}, {}] after {max_iter} iterations",
        bracket.0 - 1.0,
        bracket.1 - 1.0
    )))
}

// ---------------------------------------------------------------------------
// The model trait and its two implementations
// ---------------------------------------------------------------------------

/// An observation-driven model: state recursion, emission and sampling.
pub trait ObservationDriven {
    /// State space point (`f64` for NBIN, `Vec<f64>` for NM).
    type State: Clone + PartialEq + std::fmt::Debug;
    /// Observation (`u64` counts for NBIN, `f64` for NM).
    type Obs: Copy + PartialEq + std::fmt::Debug;

    /// One step of the deterministic recursion `x' = psi_y(x)`.
    fn psi(&self, x: &Self::State, y: Self::Obs) -> Result<Self::State>;

    /// Log emission density `ln g(x; y)`; strictly greater than `-inf` on
    /// the state space.
    fn emission_logpdf(&self, x: &Self::State, y: Self::Obs) -> Result<LogDensity>;

    /// Draws `Y ~ G(x; .)`. Mixture models use `comp_rng` for the component
    /// indicator and `noise_rng` for the continuous draw; scalar models
    /// only touch `noise_rng`.
    fn sample_obs(
        &self,
        x: &Self::State,
        comp_rng: &mut RngStream,
        noise_rng: &mut RngStream,
    ) -> Result<Self::Obs>;

    /// Checks that `x` lies in the state space.
    fn check_state(&self, x: &Self::State) -> Result<()>;

    /// Euclidean distance between two states.
    fn state_distance(x1: &Self::State, x2: &Self::State) -> f64;
}

/// NBIN-GARCH(1,1): scalar positive state, count observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbinGarch {
    pub theta: ThetaNbin,
    pub parametrization: NbParametrization,
}

impl NbinGarch {
    pub fn new(theta: ThetaNbin) -> Self {
        NbinGarch {
            theta,
            parametrization: NbParametrization::MeanRx,
        }
    }

    pub fn with_parametrization(theta: ThetaNbin, parametrization: NbParametrization) -> Self {
        NbinGarch { theta, parametrization }
    }

    fn success_prob(&self, x: f64) -> f64 {
        match self.parametrization {
            NbParametrization::MeanRx => 1.0 / (1.0 + x),
            NbParametrization::Literal => x / (1.0 + x),
        }
    }
}

impl ObservationDriven for NbinGarch {
    type State = f64;
    type Obs = u64;

    fn psi(&self, x: &f64, y: u64) -> Result<f64> {
        self.check_state(x)?;
        Ok(self.theta.omega + self.theta.a * x + self.theta.b * y as f64)
    }

    fn emission_logpdf(&self, x: &f64, y: u64) -> Result<LogDensity> {
        self.check_state(x)?;
        let p = self.success_prob(*x);
        Ok(LogDensity::new(nb_logpmf_unchecked(y, self.theta.r, p)))
    }

    fn sample_obs(&self, x: &f64, _comp: &mut RngStream, noise: &mut RngStream) -> Result<u64> {
        self.check_state(x)?;
        sample_nb(self.theta.r, self.success_prob(*x), noise)
    }

    fn check_state(&self, x: &f64) -> Result<()> {
        if !(*x > 0.0) || !x.is_finite() {
            return Err(Error::InvalidState(format!("nbin state must be positive, got {x}")));
        }
        Ok(())
    }

    fn state_distance(x1: &f64, x2: &f64) -> f64 {
        (x1 - x2).abs()
    }
}

/// NM(d)-GARCH(1,1): vector positive state, real observations.
#[derive(Debug, Clone, PartialEq)]
pub struct NmGarch {
    pub theta: ThetaNm,
}

impl NmGarch {
    pub fn new(theta: ThetaNm) -> Self {
        NmGarch { theta }
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }
}

impl ObservationDriven for NmGarch {
    type State = Vec<f64>;
    type Obs = f64;

    fn psi(&self, x: &Vec<f64>, y: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        self.check_state(x)?;
        let y2 = y * y;
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let row = &self.theta.a[i * d..(i + 1) * d];
            let lin: f64 = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
            out.push(self.theta.omega[i] + lin + y2 * self.theta.b[i]);
        }
        Ok(out)
    }

    fn emission_logpdf(&self, x: &Vec<f64>, y: f64) -> Result<LogDensity> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        self.check_state(x)?;
        Ok(LogDensity::new(mixture_gauss_logpdf_unchecked(
            y,
            x,
            &self.theta.gamma,
        )))
    }

    fn sample_obs(&self, x: &Vec<f64>, comp: &mut RngStream, noise: &mut RngStream) -> Result<f64> {
        self.check_state(x)?;
        let l = sample_mixture_component(&self.theta.gamma, comp);
        Ok(sample_gauss(x[l].sqrt(), noise))
    }

    fn check_state(&self, x: &Vec<f64>) -> Result<()> {
        if x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidState(
                "nm state must be entrywise positive".into(),
            ));
        }
        Ok(())
    }

    fn state_distance(x1: &Vec<f64>, x2: &Vec<f64>) -> f64 {
        x1.iter()
            .zip(x2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

// ---------------------------------------------------------------------------
// Path operations
// ---------------------------------------------------------------------------

/// Applies the recursion along a whole observation path; an empty path
/// returns the state unchanged.
pub fn psi_iterate<M: ObservationDriven>(
    model: &M,
    x: &M::State,
    y_path: &[M::Obs],
) -> Result<M::State> {
    let mut cur = x.clone();
    for &y in y_path {
        cur = model.psi(&cur, y)?;
    }
    Ok(cur)
}

/// Simulates `n` observations starting from state `x0`.
///
/// Returns the state path of length `n + 1` and the observation path of
/// length `n`: `Y[k]` is emitted from `X[k]`, then `X[k+1] = psi(X[k], Y[k])`.
/// The component indicator and the emission noise draw from separate
/// substreams of `rng`.
pub fn simulate_odm<M: ObservationDriven>(
    model: &M,
    x0: &M::State,
    n: usize,
    rng: &RngStream,
) -> Result<SimulatedPath<M>> {
    if n == 0 {
        return Err(Error::EmptyPath);
    }
    model.check_state(x0)?;
    let mut comp = rng.substream(0);
    let mut noise = rng.substream(1);
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n);
    let mut x = x0.clone();
    for _ in 0..n {
        let y = model.sample_obs(&x, &mut comp, &mut noise)?;
        let next = model.psi(&x, y)?;
        xs.push(x);
        ys.push(y);
        x = next;
    }
    xs.push(x);
    Ok((xs, ys))
}

/// Normalized conditional log-likelihood of `y_path` given the starting
/// state `x`:
///
/// ```text
/// n^-1 sum_k ln g(f_{y_{1:k-1}}(x); y_k)
/// ```
///
/// evaluated by streaming the state recursion alongside the emission terms.
pub fn cond_loglik<M: ObservationDriven>(model: &M, x: &M::State, y_path: &[M::Obs]) -> Result<f64> {
    if y_path.is_empty() {
        return Err(Error::EmptyPath);
    }
    let mut cur = x.clone();
    let mut acc = 0.0;
    for &y in y_path {
        acc += model.emission_logpdf(&cur, y)?.value();
        cur = model.psi(&cur, y)?;
    }
    Ok(acc / y_path.len() as f64)
}

/// State-space distance between the recursion orbits of two starting
/// states, driven by the same observations: element `k` is
/// `d(f_{y_{1:k+1}}(x1), f_{y_{1:k+1}}(x2))`.
pub fn forgetting_gap<M: ObservationDriven>(
    model: &M,
    y_past: &[M::Obs],
    x1: &M::State,
    x2: &M::State,
) -> Result<Vec<f64>> {
    let mut a = x1.clone();
    let mut b = x2.clone();
    let mut gaps = Vec::with_capacity(y_past.len());
    for &y in y_past {
        a = model.psi(&a, y)?;
        b = model.psi(&b, y)?;
        gaps.push(M::state_distance(&a, &b));
    }
    Ok(gaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nbin(omega: f64, a: f64, b: f64, r: f64) -> NbinGarch {
        NbinGarch::new(ThetaNbin::new(omega, a, b, r).unwrap())
    }

    #[test]
    fn nbin_psi_direct_arithmetic() {
        let m = nbin(1.0, 0.5, 0.25, 2.0);
        assert_eq!(m.psi(&2.0, 4).unwrap(), 3.0);
    }

    #[test]
    fn nbin_psi_degenerate_constant() {
        let m = nbin(1.3, 0.0, 0.0, 2.0);
        for (x, y) in [(0.4, 0u64), (7.0, 12), (100.0, 3)] {
            assert_eq!(m.psi(&x, y).unwrap(), 1.3);
        }
    }

    #[test]
    fn nm_psi_direct_arithmetic() {
        let theta = ThetaNm::new(
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.0; 4],
            vec![1.0, 2.0],
        )
        .unwrap();
        let m = NmGarch::new(theta);
        let out = m.psi(&vec![3.0, 3.0], 2.0).unwrap();
        assert_eq!(out, vec![5.0, 9.0]);
    }

    #[test]
    fn nm_psi_rejects_dimension_mismatch() {
        let theta = ThetaNm::new(
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.0; 4],
            vec![1.0, 2.0],
        )
        .unwrap();
        let m = NmGarch::new(theta);
        assert!(matches!(
            m.psi(&vec![1.0], 2.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psi_iterate_empty_path_is_identity() {
        let m = nbin(1.0, 0.5, 0.25, 2.0);
        assert_eq!(psi_iterate(&m, &2.0, &[]).unwrap(), 2.0);
    }

    #[test]
    fn psi_iterate_single_step_equals_psi() {
        let m = nbin(1.0, 0.5, 0.25, 2.0);
        assert_eq!(
            psi_iterate(&m, &2.0, &[4]).unwrap(),
            m.psi(&2.0, 4).unwrap()
        );
    }

    #[test]
    fn psi_iterate_two_steps() {
        let m = nbin(1.0, 0.5, 0.25, 2.0);
        // psi(2, 4) = 3, psi(3, 0) = 2.5
        assert_eq!(psi_iterate(&m, &2.0, &[4, 0]).unwrap(), 2.5);
    }

    #[test]
    fn nbin_emission_matches_closed_form_at_half() {
        // state 1 gives success probability 1/2 in both conventions
        let m = nbin(1.0, 0.3, 0.1, 2.0);
        assert_relative_eq!(
            m.emission_logpdf(&1.0, 0).unwrap().value(),
            0.25_f64.ln(),
            epsilon = 1e-12
        );
        let lit = NbinGarch::with_parametrization(
            ThetaNbin::new(1.0, 0.3, 0.1, 2.0).unwrap(),
            NbParametrization::Literal,
        );
        assert_relative_eq!(
            lit.emission_logpdf(&1.0, 0).unwrap().value(),
            0.25_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn nbin_emission_pmf_sums_to_one_over_counts() {
        let m = nbin(1.0, 0.3, 0.1, 4.0);
        let x = 2.5;
        let total: f64 = (0..4000)
            .map(|k| m.emission_logpdf(&x, k).unwrap().density())
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn nm_emission_single_component_is_gaussian() {
        let theta = ThetaNm::new(vec![1.0], vec![0.5], vec![0.2], vec![0.1]).unwrap();
        let m = NmGarch::new(theta);
        let x = vec![1.7];
        for y in [-2.0, 0.0, 1.1] {
            assert_relative_eq!(
                m.emission_logpdf(&x, y).unwrap().value(),
                crate::noise::gauss_logpdf(y, 1.7_f64.sqrt()).unwrap().value(),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn nm_emission_integrates_to_one() {
        let theta = ThetaNm::new(
            vec![0.3, 0.7],
            vec![0.5, 0.5],
            vec![0.0; 4],
            vec![0.2, 0.1],
        )
        .unwrap();
        let m = NmGarch::new(theta);
        let x = vec![0.8, 3.0];
        let f = |y: f64| m.emission_logpdf(&x, y).unwrap().density();
        let mass = crate::quad::adaptive_simpson_split(&f, -60.0, 60.0, &[0.0], 1e-10, 40);
        assert_relative_eq!(mass, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn emission_rejects_invalid_state() {
        let m = nbin(1.0, 0.3, 0.1, 4.0);
        assert!(matches!(m.emission_logpdf(&0.0, 1), Err(Error::InvalidState(_))));
        assert!(matches!(m.emission_logpdf(&-1.0, 1), Err(Error::InvalidState(_))));
    }

    #[test]
    fn simulate_decoupled_state_is_affine_orbit() {
        // b = 0: the state ignores the observations entirely
        let m = nbin(1.0, 0.5, 0.0, 2.0);
        let rng = RngStream::new(7, 0);
        let (xs, ys) = simulate_odm(&m, &4.0, 20, &rng).unwrap();
        assert_eq!(xs.len(), 21);
        assert_eq!(ys.len(), 20);
        let mut expect = 4.0;
        for x in xs {
            assert_relative_eq!(x, expect, epsilon = 1e-12);
            expect = 1.0 + 0.5 * expect;
        }
    }

    #[test]
    fn simulate_is_deterministic_in_the_stream() {
        let m = nbin(1.0, 0.3, 0.1, 4.0);
        let rng = RngStream::new(123, 9);
        let (xs1, ys1) = simulate_odm(&m, &1.0, 500, &rng).unwrap();
        let (xs2, ys2) = simulate_odm(&m, &1.0, 500, &rng).unwrap();
        assert_eq!(xs1, xs2);
        assert_eq!(ys1, ys2);
    }

    #[test]
    fn simulate_long_run_mean_is_stable_across_seeds_and_starts() {
        // preset with r b + a = 0.7 < 1: the invariant law is unique, so
        // long-run state averages agree across seeds and starting points
        let m = nbin(1.0, 0.3, 0.1, 4.0);
        let mean_of = |seed: u64, x0: f64| {
            let rng = RngStream::new(seed, 0);
            let (xs, _) = simulate_odm(&m, &x0, 100_000, &rng).unwrap();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let m1 = mean_of(101, 1.0);
        let m2 = mean_of(202, 1.0);
        let m3 = mean_of(303, 25.0);
        assert!(m1.is_finite() && m2.is_finite() && m3.is_finite());
        assert!(
            (m1 - m2).abs() / m1.abs() < 0.05,
            "seed means diverge: {m1} vs {m2}"
        );
        assert!(
            (m1 - m3).abs() / m1.abs() < 0.05,
            "start-point means diverge: {m1} vs {m3}"
        );
    }

    #[test]
    fn cond_loglik_single_observation() {
        let m = nbin(1.0, 0.3, 0.1, 2.0);
        let ll = cond_loglik(&m, &1.0, &[0]).unwrap();
        assert_relative_eq!(ll, m.emission_logpdf(&1.0, 0).unwrap().value(), epsilon = 1e-15);
    }

    #[test]
    fn cond_loglik_streaming_matches_batch_recomputation() {
        let m = nbin(0.8, 0.4, 0.12, 3.0);
        let rng = RngStream::new(55, 1);
        let (_, ys) = simulate_odm(&m, &2.0, 300, &rng).unwrap();
        let streaming = cond_loglik(&m, &2.0, &ys).unwrap();
        // batch oracle: recompute every prefix composition from scratch
        let mut total = 0.0;
        for k in 0..ys.len() {
            let state = psi_iterate(&m, &2.0, &ys[..k]).unwrap();
            total += m.emission_logpdf(&state, ys[k]).unwrap().value();
        }
        let batch = total / ys.len() as f64;
        assert!((streaming - batch).abs() < 1e-12);
    }

    #[test]
    fn cond_loglik_chain_rule_split() {
        let m = nbin(0.8, 0.4, 0.12, 3.0);
        let rng = RngStream::new(56, 1);
        let (_, ys) = simulate_odm(&m, &2.0, 200, &rng).unwrap();
        let n = ys.len();
        for j in [1usize, 50, 137, 199] {
            let full = n as f64 * cond_loglik(&m, &2.0, &ys).unwrap();
            let head = j as f64 * cond_loglik(&m, &2.0, &ys[..j]).unwrap();
            let mut tail = 0.0;
            let mut state = psi_iterate(&m, &2.0, &ys[..j]).unwrap();
            for &y in &ys[j..] {
                tail += m.emission_logpdf(&state, y).unwrap().value();
                state = m.psi(&state, y).unwrap();
            }
            assert!((full - (head + tail)).abs() < 1e-12, "split at {j}");
        }
    }

    #[test]
    fn cond_loglik_rejects_empty_path() {
        let m = nbin(1.0, 0.3, 0.1, 2.0);
        assert!(matches!(cond_loglik(&m, &1.0, &[]), Err(Error::EmptyPath)));
    }

    #[test]
    fn forgetting_gap_identical_starts_is_zero() {
        let m = nbin(1.0, 0.3, 0.1, 4.0);
        let gaps = forgetting_gap(&m, &[3, 0, 7, 1], &2.0, &2.0).unwrap();
        assert!(gaps.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn nbin_forgetting_gap_is_exactly_geometric_for_dyadic_theta() {
        // The observation terms cancel, so analytically gap(k) = a^k |x1-x2|.
        // With dyadic parameters every orbit value is exactly representable
        // and the identity holds bit-exactly in f64.
        let m = nbin(1.0, 0.5, 0.25, 2.0);
        let ys: Vec<u64> = vec![3, 0, 7, 1, 12, 2, 0, 5, 9, 1, 4, 4, 0, 2, 30, 1, 6, 0, 3, 8];
        let gaps = forgetting_gap(&m, &ys, &0.5, &5.0).unwrap();
        let mut expect = 4.5;
        for g in &gaps {
            expect *= 0.5;
            assert_eq!(*g, expect);
        }
        for k in 1..gaps.len() {
            assert!((gaps[k] / gaps[k - 1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn nbin_forgetting_gap_ratio_for_general_theta() {
        // For non-dyadic a the two orbits accumulate independent rounding
        // of order eps * |x| per step, so the geometric ratio is only clean
        // while the gap sits far above that noise floor.
        let m = nbin(1.0, 0.37, 0.1, 4.0);
        let rng = RngStream::new(8, 2);
        let (_, ys) = simulate_odm(&m, &1.0, 60, &rng).unwrap();
        let gaps = forgetting_gap(&m, &ys, &0.5, &5.0).unwrap();
        let mut prev = 4.5;
        for g in &gaps {
            if *g > 1e-5 {
                assert!((g / prev - 0.37).abs() < 1e-9, "ratio {} off", g / prev);
            }
            prev = *g;
        }
        assert!(gaps[0] > 1e-5, "test never exercised the ratio check");
    }

    #[test]
    fn nm_forgetting_with_zero_matrix_is_immediate() {
        let theta = ThetaNm::new(
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.0; 4],
            vec![0.4, 0.4],
        )
        .unwrap();
        let m = NmGarch::new(theta);
        let gaps = forgetting_gap(&m, &[1.0, -0.3, 2.0], &vec![1.0, 2.0], &vec![5.0, 0.1]).unwrap();
        assert!(gaps.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stability_margins() {
        let s = ThetaNbin::new(1.0, 0.3, 0.1, 4.0).unwrap().stability();
        assert!(s.stable);
        assert_relative_eq!(s.margin, 0.3, epsilon = 1e-12);

        let u = ThetaNbin::new(1.0, 0.3, 0.1, 10.0).unwrap().stability();
        assert!(!u.stable);

        let nm = ThetaNm::new(
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.0; 4],
            vec![0.4, 0.4],
        )
        .unwrap();
        let s = nm.stability().unwrap();
        assert!(s.stable);
        assert_relative_eq!(s.margin, 0.6, epsilon = 1e-9);
    }

    #[test]
    fn spectral_radius_identity_and_rank_one() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_relative_eq!(spectral_radius(&eye, 3).unwrap(), 1.0, epsilon = 1e-9);

        // b gamma^T has a single nonzero eigenvalue gamma . b
        let b = [0.7, 0.2, 0.5];
        let g = [0.2, 0.3, 0.5];
        let mut m = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                m[i * 3 + j] = b[i] * g[j];
            }
        }
        let dot: f64 = b.iter().zip(&g).map(|(x, y)| x * y).sum();
        assert_relative_eq!(spectral_radius(&m, 3).unwrap(), dot, epsilon = 1e-9);
    }

    #[test]
    fn spectral_radius_matches_characteristic_polynomial_oracle() {
        // closed-form roots of the 3x3 characteristic cubic as the oracle
        fn char_poly_radius(m: &[f64]) -> f64 {
            let a = m;
            let tr = a[0] + a[4] + a[8];
            let minors = a[0] * a[4] - a[1] * a[3] + a[0] * a[8] - a[2] * a[6]
                + a[4] * a[8]
                - a[5] * a[7];
            let det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6]);
            // lambda^3 - tr lambda^2 + minors lambda - det = 0
            cubic_max_modulus(1.0, -tr, minors, -det)
        }

        // solves a x^3 + b x^2 + c x + d = 0, returns max |root|
        fn cubic_max_modulus(a: f64, b: f64, c: f64, d: f64) -> f64 {
            let b = b / a;
            let c = c / a;
            let d = d / a;
            let p = c - b * b / 3.0;
            let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
            let shift = -b / 3.0;
            let disc = q * q / 4.0 + p * p * p / 27.0;
            let roots: Vec<(f64, f64)> = if disc > 0.0 {
                let sq = disc.sqrt();
                let u = cbrt(-q / 2.0 + sq);
                let v = cbrt(-q / 2.0 - sq);
                let real = u + v;
                let re = -real / 2.0;
                let im = (u - v) * 3.0_f64.sqrt() / 2.0;
                vec![(real + shift, 0.0), (re + shift, im), (re + shift, -im)]
            } else {
                let r = (-p * p * p / 27.0).sqrt();
                let phi = (-q / (2.0 * r)).clamp(-1.0, 1.0).acos();
                let mag = 2.0 * (-p / 3.0).sqrt();
                (0..3)
                    .map(|k| {
                        (
                            mag * ((phi + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos()
                                + shift,
                            0.0,
                        )
                    })
                    .collect()
            };
            roots
                .iter()
                .map(|(re, im)| (re * re + im * im).sqrt())
                .fold(0.0, f64::max)
        }

        fn cbrt(x: f64) -> f64 {
            x.signum() * x.abs().powf(1.0 / 3.0)
        }

        let mut rng = RngStream::new(77, 0);
        for _ in 0..50 {
            let m: Vec<f64> = (0..9).map(|_| rng.uniform_open01() * 2.0).collect();
            let power = spectral_radius(&m, 3).unwrap();
            let oracle = char_poly_radius(&m);
            assert!(
                (power - oracle).abs() < 1e-8,
                "power {power} vs oracle {oracle} for {m:?}"
            );
        }
    }

    #[test]
    fn spectral_radius_rejects_negative_entries() {
        assert!(spectral_radius(&[1.0, -0.1, 0.0, 1.0], 2).is_err());
        assert!(spectral_radius(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn theta_validation() {
        assert!(ThetaNbin::new(0.0, 0.3, 0.1, 4.0).is_err());
        assert!(ThetaNbin::new(1.0, -0.1, 0.1, 4.0).is_err());
        assert!(ThetaNbin::new(1.0, 0.3, 0.1, 0.0).is_err());
        assert!(ThetaNbin::new(1.0, 0.0, 0.0, 1.0).is_ok()); // degenerate corners allowed

        assert!(ThetaNm::new(vec![0.6, 0.6], vec![1.0, 1.0], vec![0.0; 4], vec![0.0, 0.0]).is_err());
        assert!(ThetaNm::new(vec![0.5, 0.5], vec![0.0, 1.0], vec![0.0; 4], vec![0.0, 0.0]).is_err());
        assert!(ThetaNm::new(vec![0.5, 0.5], vec![1.0, 1.0], vec![0.0; 3], vec![0.0, 0.0]).is_err());
    }
}
