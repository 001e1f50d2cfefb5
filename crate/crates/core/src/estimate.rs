//! Maximum-likelihood fitting and consistency experiments.
//!
//! This module ties the model engines together behind a single parameter
//! vector interface so that one fitting pipeline (coarse grid scan plus
//! box-clipped Nelder-Mead refinement) serves all three model families.
//! Around it sit the experiment primitives:
//!
//! * [`kl_profile`]: Monte Carlo profile of the expected one-step
//!   log-density gap between the true parameter and a candidate grid, the
//!   quantity whose argmax set is the equivalence class of the truth;
//! * [`class_distance`]: distance of a fitted point to the orbit of the
//!   true parameter under the model's law-preserving symmetry group;
//! * [`consistency_curve`]: simulate-fit-measure sweeps over growing
//!   sample sizes.
//!
//! Everything here is deterministic given the input streams: parallel grid
//! scans and replicate sweeps reduce their results by task index.

use crate::error::{Error, Result};
use crate::ergodicity::batch_means_stderr;
use crate::hmm::{loglik_grid, simulate_hmm, Grid, GridSpec, HmmNoise, ThetaHmm, Xi};
use crate::odm::{
    cond_loglik, psi_iterate, simulate_odm, NbParametrization, NbinGarch, NmGarch, ObservationDriven,
    ThetaNbin, ThetaNm,
};
use crate::rng::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Parameter points and the model dispatch enum
// ---------------------------------------------------------------------------

/// A parameter point of one of the supported model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ParamPoint {
    Hmm(ThetaHmm),
    Nbin(ThetaNbin),
    Nm(ThetaNm),
}

/// Observation sample of a single model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observations {
    Real(Vec<f64>),
    Count(Vec<u64>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Real(v) => v.len(),
            Observations::Count(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Hmm1,
    Nbin,
    Nm(usize),
}

/// A fully specified model: family plus everything needed to evaluate its
/// likelihood (noise laws, likelihood grid, emission convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelSpec {
    Hmm1 {
        noise: HmmNoise,
        grid: GridSpec,
        xi: Xi,
    },
    Nbin {
        parametrization: NbParametrization,
    },
    Nm {
        d: usize,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Hmm1 { .. } => ModelKind::Hmm1,
            ModelSpec::Nbin { .. } => ModelKind::Nbin,
            ModelSpec::Nm { d } => ModelKind::Nm(*d),
        }
    }

    /// Length of the flattened parameter vector.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Hmm1 { .. } => 2,
            ModelSpec::Nbin { .. } => 4,
            ModelSpec::Nm { d } => (d - 1) + d + d * d + d,
        }
    }

    /// Coordinate names of the flattened parameter vector.
    pub fn param_names(&self) -> Vec<String> {
        match self {
            ModelSpec::Hmm1 { .. } => vec!["m".into(), "a".into()],
            ModelSpec::Nbin { .. } => {
                vec!["omega".into(), "a".into(), "b".into(), "r".into()]
            }
            ModelSpec::Nm { d } => {
                let d = *d;
                let mut names = Vec::with_capacity(self.dim());
                for i in 1..d {
                    names.push(format!("gamma{i}"));
                }
                for i in 1..=d {
                    names.push(format!("omega{i}"));
                }
                for i in 1..=d {
                    for j in 1..=d {
                        names.push(format!("a{i}{j}"));
                    }
                }
                for i in 1..=d {
                    names.push(format!("b{i}"));
                }
                names
            }
        }
    }

    /// Builds a validated parameter point from the flattened vector. For
    /// the mixture model the last weight is implied by the simplex
    /// constraint.
    pub fn param_from_vec(&self, v: &[f64]) -> Result<ParamPoint> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        match self {
            ModelSpec::Hmm1 { .. } => Ok(ParamPoint::Hmm(ThetaHmm::new(v[0], v[1])?)),
            ModelSpec::Nbin { .. } => {
                Ok(ParamPoint::Nbin(ThetaNbin::new(v[0], v[1], v[2], v[3])?))
            }
            ModelSpec::Nm { d } => {
                let d = *d;
                let mut gamma: Vec<f64> = v[..d - 1].to_vec();
                let sum: f64 = gamma.iter().sum();
                gamma.push(1.0 - sum);
                let omega = v[d - 1..2 * d - 1].to_vec();
                let a = v[2 * d - 1..2 * d - 1 + d * d].to_vec();
                let b = v[2 * d - 1 + d * d..].to_vec();
                Ok(ParamPoint::Nm(ThetaNm::new(gamma, omega, a, b)?))
            }
        }
    }

    /// Flattens a parameter point; inverse of [`ModelSpec::param_from_vec`].
    pub fn vec_from_param(&self, p: &ParamPoint) -> Result<Vec<f64>> {
        match (self, p) {
            (ModelSpec::Hmm1 { .. }, ParamPoint::Hmm(t)) => Ok(vec![t.m, t.a]),
            (ModelSpec::Nbin { .. }, ParamPoint::Nbin(t)) => {
                Ok(vec![t.omega, t.a, t.b, t.r])
            }
            (ModelSpec::Nm { d }, ParamPoint::Nm(t)) if t.dim() == *d => {
                let mut v = Vec::with_capacity(self.dim());
                v.extend_from_slice(&t.gamma[..d - 1]);
                v.extend_from_slice(&t.omega);
                v.extend_from_slice(&t.a);
                v.extend_from_slice(&t.b);
                Ok(v)
            }
            _ => Err(Error::InvalidParameter(
                "parameter point does not belong to this model".into(),
            )),
        }
    }

    /// Normalized log-likelihood of `data` at `theta`.
    ///
    /// Observation-driven families evaluate the conditional likelihood
    /// from a data-derived fixed starting state (mean count for NBIN,
    /// per-coordinate second moment for NM); the HMM evaluates the grid
    /// filter likelihood with its configured grid and initial law.
    pub fn loglik(&self, theta: &ParamPoint, data: &Observations) -> Result<f64> {
        match (self, theta, data) {
            (ModelSpec::Hmm1 { noise, grid, xi }, ParamPoint::Hmm(t), Observations::Real(ys)) => {
                let grid = Grid::new(grid)?;
                loglik_grid(t, noise, &grid, xi, ys)
            }
            (
                ModelSpec::Nbin { parametrization },
                ParamPoint::Nbin(t),
                Observations::Count(ys),
            ) => {
                let model = NbinGarch::with_parametrization(*t, *parametrization);
                cond_loglik(&model, &nbin_start_state(ys), ys)
            }
            (ModelSpec::Nm { d }, ParamPoint::Nm(t), Observations::Real(ys)) if t.dim() == *d => {
                let model = NmGarch::new(t.clone());
                cond_loglik(&model, &nm_start_state(ys, *d), ys)
            }
            _ => Err(Error::InvalidParameter(
                "model, parameter and data families do not match".into(),
            )),
        }
    }

    /// Simulates `n` observations under `theta`, discarding a burn-in
    /// prefix so the kept segment is close to stationary.
    pub fn simulate(
        &self,
        theta: &ParamPoint,
        n: usize,
        burn: usize,
        rng: &RngStream,
    ) -> Result<Observations> {
        match (self, theta) {
            (ModelSpec::Hmm1 { noise, .. }, ParamPoint::Hmm(t)) => {
                let (_, ys) = simulate_hmm(t, noise, 0.0, n + burn, rng)?;
                Ok(Observations::Real(ys[burn..].to_vec()))
            }
            (ModelSpec::Nbin { parametrization }, ParamPoint::Nbin(t)) => {
                let model = NbinGarch::with_parametrization(*t, *parametrization);
                let (_, ys) = simulate_odm(&model, &t.omega, n + burn, rng)?;
                Ok(Observations::Count(ys[burn..].to_vec()))
            }
            (ModelSpec::Nm { d }, ParamPoint::Nm(t)) if t.dim() == *d => {
                let model = NmGarch::new(t.clone());
                let (_, ys) = simulate_odm(&model, &t.omega.clone(), n + burn, rng)?;
                Ok(Observations::Real(ys[burn..].to_vec()))
            }
            _ => Err(Error::InvalidParameter(
                "model and parameter families do not match".into(),
            )),
        }
    }

    /// Stability check for observation-driven parameters; the HMM chain is
    /// ergodic for every admissible parameter, so it always passes.
    pub fn check_stable(&self, theta: &ParamPoint) -> Result<()> {
        let stab = match theta {
            ParamPoint::Hmm(_) => return Ok(()),
            ParamPoint::Nbin(t) => t.stability(),
            ParamPoint::Nm(t) => t.stability()?,
        };
        if !stab.stable {
            return Err(Error::Instability(format!(
                "parameter violates the stability condition (margin {})",
                stab.margin
            )));
        }
        Ok(())
    }
}

/// Fixed conditional-likelihood starting state for count data: one plus
/// the sample mean. Any fixed choice works (the recursion forgets it);
/// this one keeps the emission well scaled from the first step.
fn nbin_start_state(ys: &[u64]) -> f64 {
    let mean = ys.iter().map(|&y| y as f64).sum::<f64>() / ys.len().max(1) as f64;
    1.0 + mean
}

/// Fixed starting state for mixture data: the sample second moment in
/// every coordinate.
fn nm_start_state(ys: &[f64], d: usize) -> Vec<f64> {
    let m2 = ys.iter().map(|y| y * y).sum::<f64>() / ys.len().max(1) as f64;
    vec![(m2).max(1e-3); d]
}

// ---------------------------------------------------------------------------
// Parameter boxes
// ---------------------------------------------------------------------------

/// Closed per-coordinate box over a model's flattened parameter vector.
///
/// Construction verifies that the whole box is admissible: the NBIN corner
/// condition `r_hi b_hi + a_hi < 1` is exact (the stability functional is
/// entrywise monotone); the NM box is probed by corner and random sampling
/// of the spectral radius, which cannot certify the box but catches
/// grossly unstable presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    kind: ModelKind,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ThetaBox {
    pub fn hmm(m: (f64, f64), a: (f64, f64)) -> Result<Self> {
        if !(m.0 > 0.0) || !(m.0 < m.1) || !(a.0 < a.1) {
            return Err(Error::InvalidParameter(format!(
                "hmm box requires 0 < m_lo < m_hi and a_lo < a_hi, got m={m:?}, a={a:?}"
            )));
        }
        Ok(ThetaBox { kind: ModelKind::Hmm1, lo: vec![m.0, a.0], hi: vec![m.1, a.1] })
    }

    pub fn nbin(omega: (f64, f64), a: (f64, f64), b: (f64, f64), r: (f64, f64)) -> Result<Self> {
        for (name, lohi) in [("omega", omega), ("a", a), ("b", b), ("r", r)] {
            if !(lohi.0 < lohi.1) {
                return Err(Error::InvalidParameter(format!(
                    "nbin box {name} has empty interior: {lohi:?}"
                )));
            }
        }
        if !(omega.0 > 0.0) || a.0 < 0.0 || b.0 < 0.0 || !(r.0 > 0.0) {
            return Err(Error::InvalidParameter(
                "nbin box must satisfy omega>0, a>=0, b>=0, r>0".into(),
            ));
        }
        // stability at the worst corner covers the whole box
        if !(r.1 * b.1 + a.1 < 1.0) {
            return Err(Error::Instability(format!(
                "nbin box corner violates r b + a < 1: {}",
                r.1 * b.1 + a.1
            )));
        }
        Ok(ThetaBox {
            kind: ModelKind::Nbin,
            lo: vec![omega.0, a.0, b.0, r.0],
            hi: vec![omega.1, a.1, b.1, r.1],
        })
    }

    pub fn nm(
        d: usize,
        gamma: Vec<(f64, f64)>,
        omega: Vec<(f64, f64)>,
        a: Vec<(f64, f64)>,
        b: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if d < 1 || gamma.len() != d - 1 || omega.len() != d || a.len() != d * d || b.len() != d {
            return Err(Error::InvalidParameter(
                "nm box blocks have inconsistent dimensions".into(),
            ));
        }
        let spec = ModelSpec::Nm { d };
        let mut lo = Vec::with_capacity(spec.dim());
        let mut hi = Vec::with_capacity(spec.dim());
        for block in [&gamma[..], &omega[..], &a[..], &b[..]] {
            for &(l, h) in block {
                if !(l < h) {
                    return Err(Error::InvalidParameter(format!(
                        "nm box interval ({l}, {h}) has empty interior"
                    )));
                }
                lo.push(l);
                hi.push(h);
            }
        }
        let boxed = ThetaBox { kind: ModelKind::Nm(d), lo, hi };

        // probe stability: corners of the free-gamma block at the
        // entrywise-largest A and b (the radius is monotone in those), plus
        // seeded interior samples
        let dim = boxed.lo.len();
        let worst = |v: &[f64]| -> Vec<f64> {
            let mut w = v.to_vec();
            w[d - 1..dim].copy_from_slice(&boxed.hi[d - 1..dim]);
            w
        };
        let mut probes: Vec<Vec<f64>> = Vec::new();
        let corners = 1usize << (d - 1);
        for mask in 0..corners {
            let mut v = boxed.lo.clone();
            for (bit, vk) in v.iter_mut().enumerate().take(d - 1) {
                if mask >> bit & 1 == 1 {
                    *vk = boxed.hi[bit];
                }
            }
            probes.push(worst(&v));
        }
        let mut rng = RngStream::new(0x0B0C_5EED, 0);
        for _ in 0..32 {
            let v: Vec<f64> = boxed
                .lo
                .iter()
                .zip(&boxed.hi)
                .map(|(&l, &h)| l + (h - l) * rng.uniform_open01())
                .collect();
            probes.push(worst(&v));
        }
        for v in probes {
            match spec.param_from_vec(&v) {
                Ok(p) => spec.check_stable(&p).map_err(|_| {
                    Error::Instability(
                        "nm box contains parameters with spectral radius >= 1".into(),
                    )
                })?,
                Err(_) => continue, // outside the simplex; not part of the feasible box
            }
        }
        Ok(boxed)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.lo.len()
            && v.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn clip(&self, v: &mut [f64]) {
        for (x, (l, h)) in v.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *x = x.clamp(*l, *h);
        }
    }

    /// Per-axis scan grids with `resolution` points each.
    fn axes(&self, resolution: usize) -> Vec<Vec<f64>> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| linspace(l, h, resolution))
            .collect()
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    assert!(k >= 2);
    (0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// Equivalence classes
// ---------------------------------------------------------------------------

/// A transformation of parameter space that leaves the stationary
/// observation law unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Generator {
    Identity,
    /// Joint relabeling of the mixture components: weights, intercepts,
    /// squared-observation loads and both axes of the recursion matrix are
    /// permuted together, which leaves the emission mixture and the state
    /// recursion law invariant.
    NmPermutation(Vec<usize>),
}

/// The symmetry group used to measure distance-to-class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivClassSpec {
    pub generators: Vec<Generator>,
}

impl EquivClassSpec {
    /// Identity only: no nontrivial law-preserving symmetry is known for
    /// the HMM and NBIN families.
    pub fn identity() -> Self {
        EquivClassSpec { generators: vec![Generator::Identity] }
    }

    /// The full component-permutation group for the `d`-component mixture.
    pub fn nm_permutations(d: usize) -> Result<Self> {
        if d == 0 || d > 6 {
            return Err(Error::InvalidParameter(format!(
                "component permutations supported for 1 <= d <= 6, got {d}"
            )));
        }
        let mut generators = Vec::new();
        permutations(d, &mut (0..d).collect::<Vec<_>>(), 0, &mut generators);
        Ok(EquivClassSpec { generators })
    }

    pub fn for_model(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::Hmm1 | ModelKind::Nbin => Ok(Self::identity()),
            ModelKind::Nm(d) => Self::nm_permutations(d),
        }
    }

    /// All images of `p` under the group.
    pub fn orbit(&self, p: &ParamPoint) -> Result<Vec<ParamPoint>> {
        self.generators.iter().map(|g| apply_generator(g, p)).collect()
    }
}

fn permutations(d: usize, scratch: &mut Vec<usize>, k: usize, out: &mut Vec<Generator>) {
    if k == d {
        out.push(if scratch.iter().enumerate().all(|(i, &s)| i == s) {
            Generator::Identity
        } else {
            Generator::NmPermutation(scratch.clone())
        });
        return;
    }
    for i in k..d {
        scratch.swap(k, i);
        permutations(d, scratch, k + 1, out);
        scratch.swap(k, i);
    }
}

fn apply_generator(g: &Generator, p: &ParamPoint) -> Result<ParamPoint> {
    match (g, p) {
        (Generator::Identity, _) => Ok(p.clone()),
        (Generator::NmPermutation(perm), ParamPoint::Nm(t)) => {
            let d = t.dim();
            if perm.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: perm.len() });
            }
            let gamma: Vec<f64> = perm.iter().map(|&i| t.gamma[i]).collect();
            let omega: Vec<f64> = perm.iter().map(|&i| t.omega[i]).collect();
            let b: Vec<f64> = perm.iter().map(|&i| t.b[i]).collect();
            let mut a = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    a[i * d + j] = t.a[perm[i] * d + perm[j]];
                }
            }
            Ok(ParamPoint::Nm(ThetaNm::new(gamma, omega, a, b)?))
        }
        (Generator::NmPermutation(_), _) => Err(Error::InvalidParameter(
            "component permutations only apply to mixture parameters".into(),
        )),
    }
}

fn coords_of(p: &ParamPoint) -> Vec<f64> {
    match p {
        ParamPoint::Hmm(t) => vec![t.m, t.a],
        ParamPoint::Nbin(t) => vec![t.omega, t.a, t.b, t.r],
        ParamPoint::Nm(t) => {
            let mut v = t.gamma.clone();
            v.extend_from_slice(&t.omega);
            v.extend_from_slice(&t.a);
            v.extend_from_slice(&t.b);
            v
        }
    }
}

/// Distance from `theta_hat` to the orbit of `theta_star`:
/// the orbit-minimal, coordinate-maximal relative error
/// `max_i |hat_i - star_i| / (1 + |star_i|)`.
pub fn class_distance(
    theta_hat: &ParamPoint,
    theta_star: &ParamPoint,
    spec: &EquivClassSpec,
) -> Result<f64> {
    if std::mem::discriminant(theta_hat) != std::mem::discriminant(theta_star) {
        return Err(Error::InvalidParameter(
            "class distance requires parameters of the same family".into(),
        ));
    }
    let hat = coords_of(theta_hat);
    let mut best = f64::INFINITY;
    for image in spec.orbit(theta_star)? {
        let star = coords_of(&image);
        if star.len() != hat.len() {
            return Err(Error::DimensionMismatch { expected: hat.len(), got: star.len() });
        }
        let d = hat
            .iter()
            .zip(&star)
            .map(|(h, s)| (h - s).abs() / (1.0 + s.abs()))
            .fold(0.0, f64::max);
        best = best.min(d);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Box-clipped Nelder-Mead
// ---------------------------------------------------------------------------

struct NmOutcome {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Minimizes `f` over the box with the classical simplex moves; every
/// candidate is clipped coordinatewise. `f` may return `None` for
/// infeasible points (treated as +inf).
fn nelder_mead<F: Fn(&[f64]) -> Option<f64>>(
    f: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
    ftol: f64,
) -> NmOutcome {
    let dim = x0.len();
    let eval = |x: &[f64]| f(x).unwrap_or(f64::INFINITY);
    let clip = |x: &mut Vec<f64>| {
        for (v, (l, h)) in x.iter_mut().zip(lo.iter().zip(hi)) {
            *v = v.clamp(*l, *h);
        }
    };

    // initial simplex: x0 plus a step of 10% of the box width per axis,
    // flipped where the step would leave the box
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut base = x0.to_vec();
    clip(&mut base);
    simplex.push((base.clone(), eval(&base)));
    for k in 0..dim {
        let mut p = base.clone();
        let step = 0.10 * (hi[k] - lo[k]);
        p[k] = if p[k] + step <= hi[k] { p[k] + step } else { p[k] - step };
        clip(&mut p);
        simplex.push((p.clone(), eval(&p)));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if worst.is_finite() && (worst - best).abs() <= ftol * (best.abs() + 1e-12) {
            converged = true;
            break;
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; dim];
        for (p, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }

        let blend = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            clip(&mut p);
            p
        };

        let reflected = blend(alpha);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = blend(gamma);
            let fe = eval(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let contracted = blend(-rho);
            let fc = eval(&contracted);
            if fc < simplex[dim].1 {
                simplex[dim] = (contracted, fc);
            } else {
                // shrink toward the best point
                let best_point = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = best_point
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, v)| b + sigma * (v - b))
                        .collect();
                    clip(&mut p);
                    let fp = eval(&p);
                    *entry = (p, fp);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    NmOutcome {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        iterations,
        converged,
    }
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Fitting controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitCfg {
    /// Minimum sample size accepted.
    pub min_n: usize,
    /// Scan points per axis; shrunk automatically when the full grid would
    /// exceed `scan_budget` evaluations.
    pub resolution: usize,
    pub scan_budget: usize,
    pub nm_max_iter: usize,
    pub nm_ftol: f64,
}

impl Default for FitCfg {
    fn default() -> Self {
        FitCfg {
            min_n: 50,
            resolution: 15,
            scan_budget: 20_000,
            nm_max_iter: 200,
            nm_ftol: 1e-9,
        }
    }
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: ParamPoint,
    pub theta_hat_vec: Vec<f64>,
    pub loglik_at_hat: f64,
    /// Scan evaluations `(theta vector, normalized log-likelihood)`.
    pub surface_samples: Vec<(Vec<f64>, f64)>,
    pub refine_iterations: usize,
    pub converged: bool,
}

/// Maximum-likelihood fit: deterministic coarse scan over the box followed
/// by Nelder-Mead refinement clipped to the box.
pub fn fit_mle(
    model: &ModelSpec,
    data: &Observations,
    bounds: &ThetaBox,
    cfg: &FitCfg,
) -> Result<FitResult> {
    if data.len() < cfg.min_n {
        return Err(Error::InsufficientData(format!(
            "fit requires at least {} observations, got {}",
            cfg.min_n,
            data.len()
        )));
    }
    if bounds.kind() != model.kind() {
        return Err(Error::InvalidParameter(
            "parameter box belongs to a different model family".into(),
        ));
    }
    let dim = bounds.dim();
    let res = effective_resolution(cfg.resolution, cfg.scan_budget, dim);
    let axes = bounds.axes(res);

    // deterministic scan, parallel over grid points, reduced in index order
    let total: usize = axes.iter().map(|a| a.len()).product();
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut p = Vec::with_capacity(dim);
            for axis in &axes {
                p.push(axis[idx % axis.len()]);
                idx /= axis.len();
            }
            p
        })
        .collect();
    let values: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            model
                .param_from_vec(p)
                .and_then(|theta| model.loglik(&theta, data))
                .ok()
                .filter(|v| v.is_finite())
        })
        .collect();

    let mut surface = Vec::with_capacity(total);
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            surface.push((points[i].clone(), *v));
            if best.is_none_or(|(_, bv)| *v > bv) {
                best = Some((i, *v));
            }
        }
    }
    let (best_idx, best_scan) =
        best.ok_or_else(|| Error::NonConvergence("no feasible scan point in the box".into()))?;

    let objective = |v: &[f64]| -> Option<f64> {
        model
            .param_from_vec(v)
            .and_then(|theta| model.loglik(&theta, data))
            .ok()
            .filter(|x| x.is_finite())
            .map(|ll| -ll)
    };
    let outcome = nelder_mead(
        &objective,
        &points[best_idx],
        bounds.lo(),
        bounds.hi(),
        cfg.nm_max_iter,
        cfg.nm_ftol,
    );

    // refinement never loses to the scan
    let (theta_hat_vec, loglik_at_hat) = if -outcome.value >= best_scan {
        (outcome.x.clone(), -outcome.value)
    } else {
        (points[best_idx].clone(), best_scan)
    };
    let theta_hat = model.param_from_vec(&theta_hat_vec)?;

    Ok(FitResult {
        theta_hat,
        theta_hat_vec,
        loglik_at_hat,
        surface_samples: surface,
        refine_iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

fn effective_resolution(resolution: usize, budget: usize, dim: usize) -> usize {
    let mut r = resolution.max(2);
    while r > 2 && (r as f64).powi(dim as i32) > budget as f64 {
        r -= 1;
    }
    r
}

// ---------------------------------------------------------------------------
// Kullback-Leibler profile
// ---------------------------------------------------------------------------

/// One evaluated grid point of a KL profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub theta: ParamPoint,
    /// Monte Carlo estimate of
    /// `E[ln p(Y|past; theta_star) - ln p(Y|past; theta)]`.
    pub estimate: f64,
    /// Batch-means standard error of the estimate.
    pub stderr: f64,
}

/// A KL profile over a parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlProfile {
    pub points: Vec<KlPoint>,
    /// Largest change of any estimate when the past truncation (or filter
    /// warmup) is halved; a report on the truncation error, not a bound.
    pub truncation_sensitivity: f64,
    pub n: usize,
    pub warmup: usize,
}

/// Monte Carlo KL profile along `theta_grid`, from one long path simulated
/// under `theta_star`.
///
/// Observation-driven models evaluate the one-step predictive density
/// `g(f_{y window}(x_ref); y)` through a truncated past window of length
/// `warmup_m`; the HMM runs its grid filter along the whole path and
/// discards the first `warmup_m` predictive increments. Both terms of each
/// difference go through the same code path, so the estimate at the true
/// parameter is exactly zero with zero spread.
pub fn kl_profile(
    model: &ModelSpec,
    theta_star: &ParamPoint,
    theta_grid: &[ParamPoint],
    n: usize,
    warmup_m: usize,
    rng: &RngStream,
) -> Result<KlProfile> {
    if theta_grid.is_empty() {
        return Err(Error::InsufficientData("empty profile grid".into()));
    }
    if n < 60 || warmup_m == 0 {
        return Err(Error::InvalidParameter(
            "kl profile needs n >= 60 and a positive warmup".into(),
        ));
    }
    model.check_stable(theta_star)?;
    for theta in theta_grid {
        model.check_stable(theta)?;
    }

    match model {
        ModelSpec::Nbin { .. } | ModelSpec::Nm { .. } => {
            let data = model.simulate(theta_star, n + warmup_m, warmup_m.max(500), rng)?;
            let star_full = odm_window_terms(model, theta_star, &data, warmup_m)?;
            let star_half = odm_window_terms(model, theta_star, &data, warmup_m / 2)?;
            let evals: Vec<Result<(KlPoint, f64)>> = theta_grid
                .par_iter()
                .map(|theta| {
                    let full = odm_window_terms(model, theta, &data, warmup_m)?;
                    let half = odm_window_terms(model, theta, &data, warmup_m / 2)?;
                    Ok(profile_point(theta, &star_full, &full, &star_half, &half))
                })
                .collect();
            collect_profile(evals, n, warmup_m)
        }
        ModelSpec::Hmm1 { noise, grid, xi } => {
            let data = model.simulate(theta_star, n + warmup_m, 500, rng)?;
            let ys = match &data {
                Observations::Real(v) => v.as_slice(),
                _ => unreachable!("hmm simulation yields real observations"),
            };
            let grid = Grid::new(grid)?;
            let star_incr = hmm_increments(theta_star, noise, &grid, xi, ys)?;
            let evals: Vec<Result<(KlPoint, f64)>> = theta_grid
                .par_iter()
                .map(|theta| {
                    let incr = hmm_increments(theta, noise, &grid, xi, ys)?;
                    let full = diff_stats(&star_incr[warmup_m..], &incr[warmup_m..]);
                    let half = diff_stats(
                        &star_incr[warmup_m / 2..n + warmup_m / 2],
                        &incr[warmup_m / 2..n + warmup_m / 2],
                    );
                    let point = KlPoint { theta: theta.clone(), estimate: full.0, stderr: full.1 };
                    Ok((point, (full.0 - half.0).abs()))
                })
                .collect();
            collect_profile(evals, n, warmup_m)
        }
    }
}

fn collect_profile(
    evals: Vec<Result<(KlPoint, f64)>>,
    n: usize,
    warmup: usize,
) -> Result<KlProfile> {
    let mut points = Vec::with_capacity(evals.len());
    let mut sensitivity: f64 = 0.0;
    for e in evals {
        let (p, s) = e?;
        sensitivity = sensitivity.max(s);
        points.push(p);
    }
    Ok(KlProfile { points, truncation_sensitivity: sensitivity, n, warmup })
}

fn profile_point(
    theta: &ParamPoint,
    star_full: &[f64],
    full: &[f64],
    star_half: &[f64],
    half: &[f64],
) -> (KlPoint, f64) {
    let (est, se) = diff_stats(star_full, full);
    // align the half-window terms on the same observations before
    // differencing; both series index the path tail identically
    let k = star_half.len().min(half.len()).min(star_full.len());
    let (est_half, _) = diff_stats(
        &star_half[star_half.len() - k..],
        &half[half.len() - k..],
    );
    (
        KlPoint { theta: theta.clone(), estimate: est, stderr: se },
        (est - est_half).abs(),
    )
}

fn diff_stats(star: &[f64], cand: &[f64]) -> (f64, f64) {
    let diffs: Vec<f64> = star.iter().zip(cand).map(|(s, c)| s - c).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    (mean, batch_means_stderr(&diffs))
}

/// One-step predictive log-densities `ln g(f_{y[t-m..t]}(x_ref); y[t])`
/// for `t = m .. len`, with the state rebuilt through the truncated window
/// at every `t`.
fn odm_window_terms(
    model: &ModelSpec,
    theta: &ParamPoint,
    data: &Observations,
    m: usize,
) -> Result<Vec<f64>> {
    let m = m.max(1);
    match (model, theta, data) {
        (ModelSpec::Nbin { parametrization }, ParamPoint::Nbin(t), Observations::Count(ys)) => {
            let engine = NbinGarch::with_parametrization(*t, *parametrization);
            let x_ref = 1.0;
            let mut out = Vec::with_capacity(ys.len().saturating_sub(m));
            for t_idx in m..ys.len() {
                let x = psi_iterate(&engine, &x_ref, &ys[t_idx - m..t_idx])?;
                out.push(engine.emission_logpdf(&x, ys[t_idx])?.value());
            }
            Ok(out)
        }
        (ModelSpec::Nm { d }, ParamPoint::Nm(t), Observations::Real(ys)) if t.dim() == *d => {
            let engine = NmGarch::new(t.clone());
            let x_ref = vec![1.0; *d];
            let mut out = Vec::with_capacity(ys.len().saturating_sub(m));
            for t_idx in m..ys.len() {
                let x = psi_iterate(&engine, &x_ref, &ys[t_idx - m..t_idx])?;
                out.push(engine.emission_logpdf(&x, ys[t_idx])?.value());
            }
            Ok(out)
        }
        _ => Err(Error::InvalidParameter(
            "window terms require an observation-driven model".into(),
        )),
    }
}

/// Per-observation predictive log-mass increments of the grid filter.
fn hmm_increments(
    theta: &ParamPoint,
    noise: &HmmNoise,
    grid: &Grid,
    xi: &Xi,
    ys: &[f64],
) -> Result<Vec<f64>> {
    let t = match theta {
        ParamPoint::Hmm(t) => t,
        _ => {
            return Err(Error::InvalidParameter(
                "hmm increments require an hmm parameter".into(),
            ))
        }
    };
    let engine = crate::hmm::GridFilter::new(t, noise, grid)?;
    let mut state = crate::hmm::filter_init(grid, xi)?;
    let mut out = Vec::with_capacity(ys.len());
    for &y in ys {
        let (log_mass, _) = engine.step(&mut state, y)?;
        out.push(log_mass);
    }
    Ok(out)
}

/// Checks that every exact minimizer of the profile lies within `tol` of
/// the orbit of the true parameter.
pub fn argmax_check(
    profile: &KlProfile,
    theta_star: &ParamPoint,
    spec: &EquivClassSpec,
    tol: f64,
) -> Result<bool> {
    if profile.points.is_empty() {
        return Err(Error::InsufficientData("empty profile".into()));
    }
    let min = profile
        .points
        .iter()
        .map(|p| p.estimate)
        .fold(f64::INFINITY, f64::min);
    for p in profile.points.iter().filter(|p| p.estimate == min) {
        if class_distance(&p.theta, theta_star, spec)? > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Consistency curve
// ---------------------------------------------------------------------------

/// Controls for the simulate-fit-measure sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCfg {
    pub n_list: Vec<usize>,
    pub replicates: usize,
    /// Burn-in discarded before each simulated sample.
    pub burn: usize,
    pub fit: FitCfg,
}

/// Aggregated class-distance statistics at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub replicates_ok: usize,
    pub replicates_failed: usize,
    pub mean_delta: f64,
    pub min_delta: f64,
    pub median_delta: f64,
    pub max_delta: f64,
}

/// For each sample size and replicate: simulate under the true parameter,
/// fit over the box, measure the class distance of the fit. Replicate
/// failures are counted, not fatal. Tasks are independent and reduce by
/// index, so the table does not depend on the worker count.
pub fn consistency_curve(
    model: &ModelSpec,
    theta_star: &ParamPoint,
    bounds: &ThetaBox,
    eq: &EquivClassSpec,
    cfg: &ConsistencyCfg,
    rng: &RngStream,
) -> Result<Vec<ConsistencyRow>> {
    if cfg.replicates < 3 {
        return Err(Error::InvalidParameter(
            "consistency curve needs at least 3 replicates".into(),
        ));
    }
    if cfg.n_list.is_empty() || cfg.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "n_list must be strictly increasing and nonempty".into(),
        ));
    }
    model.check_stable(theta_star)?;

    let tasks: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .enumerate()
        .flat_map(|(i, _)| (0..cfg.replicates).map(move |r| (i, r)))
        .collect();

    let deltas: Vec<(usize, Option<f64>)> = tasks
        .par_iter()
        .map(|&(n_idx, rep)| {
            let n = cfg.n_list[n_idx];
            let task_rng = rng.substream(n_idx as u64).substream(rep as u64);
            let run = || -> Result<f64> {
                let data = model.simulate(theta_star, n, cfg.burn, &task_rng)?;
                let fit = fit_mle(model, &data, bounds, &cfg.fit)?;
                class_distance(&fit.theta_hat, theta_star, eq)
            };
            (n_idx, run().ok())
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for (i, &n) in cfg.n_list.iter().enumerate() {
        let mut ok: Vec<f64> = deltas
            .iter()
            .filter(|(idx, _)| *idx == i)
            .filter_map(|(_, d)| *d)
            .collect();
        let failed = cfg.replicates - ok.len();
        ok.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (mean, min, median, max) = if ok.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                ok.iter().sum::<f64>() / ok.len() as f64,
                ok[0],
                ok[ok.len() / 2],
                ok[ok.len() - 1],
            )
        };
        rows.push(ConsistencyRow {
            n,
            replicates_ok: ok.len(),
            replicates_failed: failed,
            mean_delta: mean,
            min_delta: min,
            median_delta: median,
            max_delta: max,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nbin_model() -> ModelSpec {
        ModelSpec::Nbin { parametrization: NbParametrization::MeanRx }
    }

    fn nbin_star() -> ParamPoint {
        ParamPoint::Nbin(ThetaNbin::new(1.0, 0.3, 0.1, 4.0).unwrap())
    }

    fn nbin_box() -> ThetaBox {
        ThetaBox::nbin((0.3, 3.0), (0.05, 0.55), (0.01, 0.2), (1.0, 2.0)).unwrap()
    }

    #[test]
    fn param_vec_roundtrip_all_families() {
        let hmm = ModelSpec::Hmm1 {
            noise: HmmNoise::default_pareto_gauss(),
            grid: GridSpec::default_for(1.0),
            xi: Xi::Dirac { x: 0.0 },
        };
        let p = ParamPoint::Hmm(ThetaHmm::new(1.2, -0.4).unwrap());
        let v = hmm.vec_from_param(&p).unwrap();
        assert_eq!(hmm.param_from_vec(&v).unwrap(), p);

        let nbin = nbin_model();
        let p = nbin_star();
        let v = nbin.vec_from_param(&p).unwrap();
        assert_eq!(nbin.param_from_vec(&v).unwrap(), p);

        let nm = ModelSpec::Nm { d: 2 };
        let p = ParamPoint::Nm(
            ThetaNm::new(
                vec![0.4, 0.6],
                vec![0.5, 0.5],
                vec![0.05, 0.0, 0.0, 0.05],
                vec![0.3, 0.15],
            )
            .unwrap(),
        );
        let v = nm.vec_from_param(&p).unwrap();
        assert_eq!(v.len(), nm.dim());
        assert_eq!(nm.param_from_vec(&v).unwrap(), p);
        assert_eq!(nm.param_names().len(), nm.dim());
    }

    #[test]
    fn box_validation_catches_unstable_corners() {
        assert!(ThetaBox::nbin((0.5, 1.0), (0.1, 0.6), (0.05, 0.2), (1.0, 4.0)).is_err());
        assert!(ThetaBox::nbin((0.5, 1.0), (0.1, 0.5), (0.01, 0.1), (1.0, 4.0)).is_ok());
        assert!(ThetaBox::hmm((0.0, 2.0), (0.1, 0.9)).is_err());
        assert!(ThetaBox::hmm((0.2, 2.0), (0.9, 0.1)).is_err());

        // NM box with a clearly unstable region: b gamma^T alone has radius ~ 1.5
        assert!(ThetaBox::nm(
            2,
            vec![(0.4, 0.6)],
            vec![(0.1, 1.0), (0.1, 1.0)],
            vec![(0.0, 0.1); 4],
            vec![(1.2, 1.8), (1.2, 1.8)],
        )
        .is_err());
        assert!(ThetaBox::nm(
            2,
            vec![(0.2, 0.8)],
            vec![(0.1, 1.0), (0.1, 1.0)],
            vec![(0.0, 0.1); 4],
            vec![(0.05, 0.4), (0.05, 0.4)],
        )
        .is_ok());
    }

    #[test]
    fn class_distance_identity_and_orbit() {
        let spec = EquivClassSpec::identity();
        let p = nbin_star();
        assert_eq!(class_distance(&p, &p, &spec).unwrap(), 0.0);

        // component swap lands exactly on the orbit
        let nm_spec = EquivClassSpec::nm_permutations(2).unwrap();
        assert_eq!(nm_spec.generators.len(), 2);
        let star = ParamPoint::Nm(
            ThetaNm::new(
                vec![0.4, 0.6],
                vec![0.5, 0.9],
                vec![0.05, 0.01, 0.02, 0.03],
                vec![0.3, 0.15],
            )
            .unwrap(),
        );
        let swapped = ParamPoint::Nm(
            ThetaNm::new(
                vec![0.6, 0.4],
                vec![0.9, 0.5],
                vec![0.03, 0.02, 0.01, 0.05],
                vec![0.15, 0.3],
            )
            .unwrap(),
        );
        assert_eq!(class_distance(&swapped, &star, &nm_spec).unwrap(), 0.0);

        // orbit substitution on either argument leaves the distance alone
        let other = ParamPoint::Nm(
            ThetaNm::new(
                vec![0.45, 0.55],
                vec![0.6, 0.8],
                vec![0.04, 0.02, 0.02, 0.04],
                vec![0.25, 0.18],
            )
            .unwrap(),
        );
        let d1 = class_distance(&other, &star, &nm_spec).unwrap();
        let d2 = class_distance(&other, &swapped, &nm_spec).unwrap();
        let other_swapped = nm_spec.orbit(&other).unwrap().pop().unwrap();
        let d3 = class_distance(&other_swapped, &star, &nm_spec).unwrap();
        assert_relative_eq!(d1, d2, epsilon = 1e-15);
        assert_relative_eq!(d1, d3, epsilon = 1e-15);
    }

    #[test]
    fn class_distance_rejects_family_mismatch() {
        let spec = EquivClassSpec::identity();
        let a = nbin_star();
        let b = ParamPoint::Hmm(ThetaHmm::new(1.0, 0.5).unwrap());
        assert!(class_distance(&a, &b, &spec).is_err());
    }

    #[test]
    fn fit_recovers_degenerate_feedback() {
        // data simulated with b = 0 over a box that contains b = 0: the
        // fitted b must land within one scan cell of zero
        let model = nbin_model();
        let star = ParamPoint::Nbin(ThetaNbin::new(1.5, 0.4, 0.0, 1.5).unwrap());
        let bounds = ThetaBox::nbin((0.3, 3.0), (0.05, 0.5), (0.0, 0.12), (1.0, 2.0)).unwrap();
        let data = model
            .simulate(&star, 3_000, 500, &RngStream::new(61, 0))
            .unwrap();
        let cfg = FitCfg { resolution: 5, ..FitCfg::default() };
        let fit = fit_mle(&model, &data, &bounds, &cfg).unwrap();
        let b_hat = fit.theta_hat_vec[2];
        let b_spacing = 0.12 / 4.0;
        assert!(
            b_hat <= b_spacing,
            "b_hat = {b_hat} not within one grid cell of zero"
        );
    }

    #[test]
    fn fit_beats_truth_on_the_same_data_and_is_deterministic() {
        let model = nbin_model();
        let star = nbin_star();
        // the true r = 4 lies outside this box on purpose: the argmax
        // property must hold regardless
        let bounds = nbin_box();
        let data = model
            .simulate(&star, 1_500, 500, &RngStream::new(62, 0))
            .unwrap();
        let cfg = FitCfg { resolution: 5, ..FitCfg::default() };
        let fit1 = fit_mle(&model, &data, &bounds, &cfg).unwrap();
        let fit2 = fit_mle(&model, &data, &bounds, &cfg).unwrap();
        assert_eq!(fit1.theta_hat_vec, fit2.theta_hat_vec);

        // against every surface sample
        for (_, v) in &fit1.surface_samples {
            assert!(fit1.loglik_at_hat >= *v);
        }
        // and against an in-box reference point
        let reference = model
            .param_from_vec(&[1.0, 0.3, 0.1, 1.9])
            .unwrap();
        let ll_ref = model.loglik(&reference, &data).unwrap();
        assert!(fit1.loglik_at_hat >= ll_ref);
    }

    #[test]
    fn fit_rejects_short_samples_and_wrong_box() {
        let model = nbin_model();
        let data = Observations::Count(vec![1; 10]);
        assert!(fit_mle(&model, &data, &nbin_box(), &FitCfg::default()).is_err());

        let hmm_box = ThetaBox::hmm((0.2, 2.0), (0.1, 1.2)).unwrap();
        let data = Observations::Count(vec![1; 100]);
        assert!(fit_mle(&model, &data, &hmm_box, &FitCfg::default()).is_err());
    }

    #[test]
    fn kl_profile_zero_at_truth_and_nonnegative_elsewhere() {
        let model = nbin_model();
        let star = nbin_star();
        let grid: Vec<ParamPoint> = [0.1, 0.2, 0.3, 0.4, 0.5]
            .iter()
            .map(|&a| ParamPoint::Nbin(ThetaNbin::new(1.0, a, 0.1, 4.0).unwrap()))
            .collect();
        let profile = kl_profile(&model, &star, &grid, 20_000, 100, &RngStream::new(63, 0)).unwrap();
        assert_eq!(profile.points.len(), 5);

        for p in &profile.points {
            // KL nonnegativity up to Monte Carlo noise
            assert!(
                p.estimate + 2.0 * p.stderr >= 0.0,
                "estimate {} +- {} at {:?}",
                p.estimate,
                p.stderr,
                p.theta
            );
        }
        // the grid contains the truth: exactly zero, no spread
        let at_truth = &profile.points[2];
        assert_eq!(at_truth.estimate, 0.0);
        assert_eq!(at_truth.stderr, 0.0);

        // minimum sits at the true slice point
        let spec = EquivClassSpec::identity();
        assert!(argmax_check(&profile, &star, &spec, 0.11).unwrap());
    }

    #[test]
    fn kl_profile_rejects_unstable_grid_points() {
        let model = nbin_model();
        let star = nbin_star();
        let bad = ParamPoint::Nbin(ThetaNbin::new(1.0, 0.95, 0.1, 4.0).unwrap());
        assert!(matches!(
            kl_profile(&model, &star, &[bad], 1_000, 50, &RngStream::new(1, 0)),
            Err(Error::Instability(_))
        ));
    }

    #[test]
    fn argmax_check_flags_off_orbit_minimizer() {
        let star = nbin_star();
        let off = ParamPoint::Nbin(ThetaNbin::new(2.5, 0.1, 0.05, 1.0).unwrap());
        let profile = KlProfile {
            points: vec![
                KlPoint { theta: star.clone(), estimate: 0.5, stderr: 0.01 },
                KlPoint { theta: off, estimate: 0.1, stderr: 0.01 },
            ],
            truncation_sensitivity: 0.0,
            n: 1000,
            warmup: 10,
        };
        let spec = EquivClassSpec::identity();
        assert!(!argmax_check(&profile, &star, &spec, 0.05).unwrap());

        let single = KlProfile {
            points: vec![KlPoint { theta: star.clone(), estimate: 0.0, stderr: 0.0 }],
            truncation_sensitivity: 0.0,
            n: 1000,
            warmup: 10,
        };
        assert!(argmax_check(&single, &star, &spec, 1e-12).unwrap());
    }

    #[test]
    fn consistency_curve_is_reproducible_and_sane() {
        let model = nbin_model();
        let star = ParamPoint::Nbin(ThetaNbin::new(1.0, 0.3, 0.1, 1.5).unwrap());
        let bounds = nbin_box();
        let eq = EquivClassSpec::identity();
        let cfg = ConsistencyCfg {
            n_list: vec![100, 400],
            replicates: 3,
            burn: 200,
            fit: FitCfg { resolution: 4, ..FitCfg::default() },
        };
        let rng = RngStream::new(64, 0);
        let rows = consistency_curve(&model, &star, &bounds, &eq, &cfg, &rng).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert_eq!(row.replicates_ok, 3);
            assert!(row.mean_delta.is_finite() && row.mean_delta >= 0.0);
            assert!(row.min_delta <= row.median_delta && row.median_delta <= row.max_delta);
        }
        let rows2 = consistency_curve(&model, &star, &bounds, &eq, &cfg, &rng).unwrap();
        assert_eq!(rows, rows2);
    }

    #[test]
    fn consistency_curve_validates_inputs() {
        let model = nbin_model();
        let star = nbin_star();
        let bounds = nbin_box();
        let eq = EquivClassSpec::identity();
        let bad_reps = ConsistencyCfg {
            n_list: vec![100, 200],
            replicates: 2,
            burn: 10,
            fit: FitCfg::default(),
        };
        assert!(consistency_curve(&model, &star, &bounds, &eq, &bad_reps, &RngStream::new(1, 0))
            .is_err());
        let bad_ns = ConsistencyCfg {
            n_list: vec![200, 100],
            replicates: 3,
            burn: 10,
            fit: FitCfg::default(),
        };
        assert!(consistency_curve(&model, &star, &bounds, &eq, &bad_ns, &RngStream::new(1, 0))
            .is_err());
    }

    #[test]
    fn effective_resolution_respects_budget() {
        assert_eq!(effective_resolution(15, 20_000, 2), 15);
        assert!(effective_resolution(15, 20_000, 4) <= 11);
        // 3^9 = 19683 still fits the budget; 4^9 does not
        assert_eq!(effective_resolution(15, 20_000, 9), 3);
    }

    #[test]
    fn nelder_mead_minimizes_quadratic_within_box() {
        let f = |x: &[f64]| Some((x[0] - 0.7).powi(2) + (x[1] + 0.2).powi(2));
        let out = nelder_mead(&f, &[0.1, 0.5], &[0.0, -1.0], &[1.0, 1.0], 500, 1e-12);
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 0.7, epsilon = 1e-4);
        assert_relative_eq!(out.x[1], -0.2, epsilon = 1e-4);

        // unconstrained minimum outside the box lands on the boundary
        let g = |x: &[f64]| Some((x[0] - 5.0).powi(2));
        let out = nelder_mead(&g, &[0.5], &[0.0], &[1.0], 500, 1e-12);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-6);
    }
}
