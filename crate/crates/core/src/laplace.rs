//! Common interface for multivariate Laplace exponents evaluated at
//! nonnegative-integer argument vectors.

use crate::error::Result;

/// Per-node values of `exp(-(psi_u(r) - psi_u(l)))` along a sorted grid.
///
/// Posterior exponents jump at exact observation times, so each node carries
/// a left and a right limit; they coincide everywhere else. Quadrature over
/// `[u_i, u_{i+1}]` pairs `right[i]` with `left[i+1]`.
#[derive(Debug, Clone)]
pub struct RatioProfile {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// A prior or posterior Laplace exponent of a two-dimensional vector of
/// subordinators, evaluable at nonnegative integer arguments.
pub trait LaplaceExponent: Sync {
    /// `psi_t(r)`; zero for `r = (0, 0)` or `t = 0`.
    fn psi(&self, r: [u64; 2], t: f64) -> Result<f64>;

    /// `exp(-(psi_u(r) - psi_u(l)))` for componentwise `l <= r`, evaluated at
    /// every node of a sorted grid.
    fn ratio_factors(&self, r: [u64; 2], l: [u64; 2], nodes: &[f64]) -> Result<RatioProfile>;

    /// Interior breakpoints of the piecewise structure inside `(s, t)`.
    ///
    /// Quadrature grids must include these so integrands stay smooth between
    /// consecutive nodes.
    fn breakpoints(&self, s: f64, t: f64) -> Vec<f64>;
}

pub(crate) fn check_leq(l: [u64; 2], r: [u64; 2]) -> Result<()> {
    if l[0] > r[0] || l[1] > r[1] {
        return Err(crate::error::Error::domain(format!(
            "ratio factor needs componentwise l <= r, got l={l:?}, r={r:?}"
        )));
    }
    Ok(())
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(crate::error::Error::domain(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    Ok(())
}
