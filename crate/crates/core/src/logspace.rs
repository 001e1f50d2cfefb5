//! Log-space probability arithmetic.
//!
//! Density products along long paths underflow in linear space, so every
//! density in this crate is carried as a natural logarithm. Exact zero
//! density is encoded as negative infinity; NaN is never a valid value.

/// A probability density (or mass) value in natural-log scale.
///
/// The wrapped value may be `-inf` (exact zero density) but never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogDensity(f64);

impl LogDensity {
    /// Wraps a log-scale density value.
    ///
    /// Panics on NaN: a NaN log-density is always a programming error
    /// upstream, not a data condition.
    pub fn new(value: f64) -> Self {
        assert!(!value.is_nan(), "LogDensity cannot be NaN");
        LogDensity(value)
    }

    /// The log-density encoding an exact zero.
    pub fn zero_density() -> Self {
        LogDensity(f64::NEG_INFINITY)
    }

    /// The raw log-scale value.
    pub fn value(self) -> f64 {
        self.0
    }

    /// Exponentiates back to linear scale.
    pub fn density(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero_density(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl From<LogDensity> for f64 {
    fn from(ld: LogDensity) -> f64 {
        ld.value()
    }
}

/// Numerically stable `log(exp(a) + exp(b))`.
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-sum-exp over a slice; empty input yields `-inf`.
pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_matches_direct_formula() {
        assert_relative_eq!(log_sum_exp(0.0, 0.0), 2.0_f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(
            log_sum_exp(-1.0, -2.0),
            ((-1.0_f64).exp() + (-2.0_f64).exp()).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, 3.0), 3.0);
        assert_eq!(log_sum_exp(3.0, f64::NEG_INFINITY), 3.0);
        assert_eq!(
            log_sum_exp(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
        // no overflow for large magnitudes
        let v = log_sum_exp(750.0, 750.0);
        assert!(v.is_finite());
        assert_relative_eq!(v, 750.0 + 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn slice_version_agrees_with_pairwise() {
        let xs = [-3.0, -1.5, -20.0, -0.2];
        let pairwise = xs.iter().fold(f64::NEG_INFINITY, |acc, &x| log_sum_exp(acc, x));
        assert_relative_eq!(log_sum_exp_slice(&xs), pairwise, epsilon = 1e-13);
    }

    #[test]
    #[should_panic(expected = "NaN")]
    fn log_density_rejects_nan() {
        let _ = LogDensity::new(f64::NAN);
    }

    #[test]
    fn zero_density_roundtrip() {
        let z = LogDensity::zero_density();
        assert!(z.is_zero_density());
        assert_eq!(z.density(), 0.0);
    }
}
