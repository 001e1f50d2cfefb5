//! Adaptive Simpson quadrature.
//!
//! Used for the high-accuracy reference integrals: density normalization
//! checks and the brute-force likelihood evaluation. The implementation is
//! the classical recursive Simpson scheme with interval-local error
//! control, which is plenty for the smooth, fast-decaying integrands here.

/// Integrates `f` over `[a, b]` with target absolute tolerance `tol`.
///
/// `max_depth` bounds the recursion; the result simply stops refining past
/// it, so a too-small value degrades accuracy rather than erroring.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    if a == b {
        return 0.0;
    }
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = simpson(a, b, fa, fc, fb);
    simpson_rec(f, a, b, fa, fc, fb, whole, tol, max_depth)
}

/// Integrates `f` over a half-open split of `[a, b]`, forcing subdivision
/// points at each interior knot. Use this when the integrand has kinks or
/// sharp peaks at known locations.
pub fn adaptive_simpson_split<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    interior_knots: &[f64],
    tol: f64,
    max_depth: u32,
) -> f64 {
    let mut pts: Vec<f64> = interior_knots
        .iter()
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    pts.dedup();
    let mut total = 0.0;
    let mut left = a;
    let per_piece_tol = tol / (pts.len() + 1) as f64;
    for knot in pts.into_iter().chain(std::iter::once(b)) {
        total += adaptive_simpson(f, left, knot, per_piece_tol, max_depth);
        left = knot;
    }
    total
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fc: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = simpson(a, c, fa, fd, fc);
    let right = simpson(c, b, fc, fe, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        left + right + err / 15.0
    } else {
        simpson_rec(f, a, c, fa, fd, fc, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, c, b, fc, fe, fb, right, 0.5 * tol, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_polynomials_exactly() {
        let f = |x: f64| 3.0 * x * x;
        assert_relative_eq!(adaptive_simpson(&f, 0.0, 2.0, 1e-12, 30), 8.0, epsilon = 1e-10);
    }

    #[test]
    fn integrates_gaussian_density() {
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = adaptive_simpson(&f, -10.0, 10.0, 1e-12, 40);
        assert_relative_eq!(v, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn split_handles_kink_better_than_plain_low_depth() {
        // |x| has a kink at 0; forcing a knot there keeps the result exact.
        let f = |x: f64| x.abs();
        let v = adaptive_simpson_split(&f, -1.0, 1.0, &[0.0], 1e-12, 8);
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_interval_is_zero() {
        let f = |x: f64| x;
        assert_eq!(adaptive_simpson(&f, 2.0, 2.0, 1e-10, 10), 0.0);
    }
}
