//! Shared numeric helpers: log-gamma ratio sums, compensated summation,
//! adaptive quadrature, and small combinatorial utilities.

use statrs::function::gamma::ln_gamma;

/// Below this count the log-ratio sums are evaluated term by term, which is
/// both faster and slightly more accurate than four `ln_gamma` calls.
const DIRECT_SUM_MAX: u64 = 32;

/// `sum_{j=lo}^{hi-1} ln((a + j) / (b + j))` for `0 < b <= a`.
///
/// Empty ranges return 0. Large ranges go through log-gamma:
/// `ln Γ(a+hi) − ln Γ(a+lo) − ln Γ(b+hi) + ln Γ(b+lo)`.
pub fn sum_log_ratio_range(lo: u64, hi: u64, a: f64, b: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    debug_assert!(a > 0.0 && b > 0.0, "log-ratio sums need positive offsets");
    if hi - lo <= DIRECT_SUM_MAX {
        let mut acc = KahanSum::new();
        for j in lo..hi {
            let j = j as f64;
            acc.add(((a + j) / (b + j)).ln());
        }
        acc.value()
    } else {
        let (lo, hi) = (lo as f64, hi as f64);
        (ln_gamma(a + hi) - ln_gamma(a + lo)) - (ln_gamma(b + hi) - ln_gamma(b + lo))
    }
}

/// `sum_{j=0}^{m-1} ln((a + j) / (b + j))`.
pub fn sum_log_ratio(m: u64, a: f64, b: f64) -> f64 {
    sum_log_ratio_range(0, m, a, b)
}

/// Kahan–Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Binomial coefficient as f64; only used for small arguments.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Multinomial coefficient `n! / (l_1! ... l_m!)` with `sum l_i = n`.
pub fn multinomial(parts: &[u64]) -> f64 {
    let mut acc = 1.0;
    let mut seen = 0u64;
    for &l in parts {
        seen += l;
        acc *= binomial(seen, l);
    }
    acc
}

/// `ln(sum_i exp(x_i))` with max-shift stabilization.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add((x - m).exp());
    }
    m + acc.value().ln()
}

/// Adaptive Simpson quadrature over `[a, b]`.
///
/// Stops when the local Richardson estimate meets `abs_tol + rel_tol * |I|`,
/// or at `max_depth` subdivisions.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_depth: u32,
) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        rel_tol: f64,
        abs_tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * (abs_tol + rel_tol * (left + right).abs()) {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, rel_tol, 0.5 * abs_tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, rel_tol, 0.5 * abs_tol, depth - 1)
    }

    if a >= b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, rel_tol, abs_tol, max_depth)
}
