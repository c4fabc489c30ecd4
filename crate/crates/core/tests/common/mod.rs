//! Shared test oracles, independent of the closed-form implementation path:
//! direct numerical integration of the Lévy intensities, and a
//! compound-Poisson path simulator for Monte Carlo moment checks.

#![allow(dead_code)]

use betastacy::numeric::adaptive_simpson;
use betastacy::prior::{CompoundPriorSpec, LogBetaDirecting, ScoreDistribution};
use betastacy::SurvivalDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};

/// `-expm1(-x)`, i.e. `1 - e^{-x}` without cancellation.
fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// Adaptive quadrature over dyadic pieces `[0,1], [1,2], [2,4], ...` so
/// integrands concentrated near the origin are never missed by the initial
/// probe points.
fn integrate_dyadic(f: &impl Fn(f64) -> f64, hi: f64, tol: f64) -> f64 {
    let mut total = 0.0;
    let mut a = 0.0;
    let mut b = 1.0f64.min(hi);
    loop {
        total += adaptive_simpson(f, a, b, tol, tol, 48);
        if b >= hi {
            return total;
        }
        a = b;
        b = (2.0 * b).min(hi);
    }
}

/// Inner Lévy integral `int_0^inf (1 - e^{-m x}) e^{-c x} / (1 - e^{-x}) dx`
/// by adaptive quadrature.
fn inner_levy_integral(c: f64, m: u64, tol: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let mf = m as f64;
    let f = |x: f64| {
        if x == 0.0 {
            return mf;
        }
        one_minus_exp_neg(mf * x) * (-c * x).exp() / one_minus_exp_neg(x)
    };
    let x_max = 60.0 / c.min(1.0) + 60.0;
    integrate_dyadic(&f, x_max, tol)
}

/// Two-dimensional quadrature oracle for the directing Laplace-exponent
/// increment over `(s, t]` at integer `m`: the outer integral runs over the
/// jump time, the inner over the jump size.
pub fn directing_psi_oracle_2d(d: &LogBetaDirecting, m: u64, s: f64, t: f64) -> f64 {
    let outer = |u: f64| {
        d.gamma * d.baseline.density(u) * inner_levy_integral(d.gb(u), m, 1e-12)
    };
    adaptive_simpson(&outer, s, t, 1e-11, 1e-12, 40)
}

/// One-dimensional oracle for a tilted Laplace-exponent increment over a
/// partition segment, with the jump-time integral done analytically:
/// `int_0^inf (1-e^{-m x}) e^{-shift x} (e^{-lo x} - e^{-hi x})
///  / (x (1 - e^{-x})) dx` with `lo = gb(segment end) <= hi = gb(segment start)`.
pub fn segment_psi_oracle(lo: f64, hi: f64, shift: f64, m: u64, tol: f64) -> f64 {
    if m == 0 || lo >= hi {
        return 0.0;
    }
    let mf = m as f64;
    let f = |x: f64| {
        if x == 0.0 {
            return mf * (hi - lo);
        }
        let num = one_minus_exp_neg(mf * x)
            * (-shift * x).exp()
            * ((-lo * x).exp() - (-hi * x).exp());
        num / (x * one_minus_exp_neg(x))
    };
    let x_max = 60.0 / (lo + shift).min(1.0) + 60.0;
    integrate_dyadic(&f, x_max, tol)
}

/// Unnormalized jump-weight integrand at a fixed exact time: score point
/// `z`, exact counts `c`, at-risk `r`, tilt `m`, and `gb = gamma beta(T)`.
fn jump_integrand(x: f64, z: [u64; 2], c: [u64; 2], r: [u64; 2], m: [u64; 2], gb: f64) -> f64 {
    if x == 0.0 {
        // O(x^{c1+c2-1}) near zero.
        return match c[0] + c[1] {
            1 => {
                let g = if c[0] == 1 { 0 } else { 1 };
                z[g] as f64
            }
            _ => 0.0,
        };
    }
    let decay = ((r[0] - c[0] + m[0]) * z[0] + (r[1] - c[1] + m[1]) * z[1]) as f64 + gb;
    let mut num = (-decay * x).exp();
    for g in 0..2 {
        for _ in 0..c[g] {
            num *= one_minus_exp_neg(z[g] as f64 * x);
        }
    }
    num / one_minus_exp_neg(x)
}

/// Quadrature value of the score-expected jump integral `N(m)`.
pub fn jump_expectation_oracle(
    score: &ScoreDistribution,
    c: [u64; 2],
    r: [u64; 2],
    m: [u64; 2],
    gb: f64,
) -> f64 {
    let mut total = 0.0;
    for (z, w) in score.points() {
        let f = |x: f64| jump_integrand(x, z, c, r, m, gb);
        let x_max = 60.0 / gb.min(1.0) + 60.0;
        total += w * integrate_dyadic(&f, x_max, 1e-12);
    }
    total
}

/// Breakpoint partition of `(0, t]`: distinct observation times, `tau`, `t`.
fn partition(spec: &CompoundPriorSpec, data: &SurvivalDataset, t: f64) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> =
        data.distinct_times().iter().copied().filter(|&x| x < t).collect();
    if let Some(tau) = spec.score.tau() {
        if tau < t && !cuts.contains(&tau) {
            cuts.push(tau);
        }
    }
    cuts.push(t);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::new();
    let mut start = 0.0;
    for &end in &cuts {
        out.push((start, end));
        start = end;
    }
    out
}

/// Quadrature oracle for the full posterior Laplace exponent
/// `psi_t(r | data)`: tilted intensity integrals per segment plus jump
/// Laplace transforms per exact time.
pub fn posterior_psi_oracle(
    spec: &CompoundPriorSpec,
    data: &SurvivalDataset,
    r: [u64; 2],
    t: f64,
) -> f64 {
    let d = &spec.directing;
    let mut total = 0.0;
    for (a, b) in partition(spec, data, t) {
        let at_risk = data.at_risk_after(a);
        let score = spec.score.at_time(b);
        for (z, w) in score.points() {
            let m = r[0] * z[0] + r[1] * z[1];
            let shift = (at_risk[0] * z[0] + at_risk[1] * z[1]) as f64;
            total += w * segment_psi_oracle(d.gb(b), d.gb(a), shift, m, 1e-11);
        }
    }
    for (time, exact) in data.exact_sites() {
        if time > t {
            break;
        }
        let score = spec.score.at_time(time);
        let at_risk = data.at_risk(time);
        let den = jump_expectation_oracle(score, exact, at_risk, [0, 0], d.gb(time));
        let num = jump_expectation_oracle(score, exact, at_risk, r, d.gb(time));
        total -= (num / den).ln();
    }
    total
}

// ---------------------------------------------------------------------------
// Monte Carlo path simulation (compound-Poisson approximation).
// ---------------------------------------------------------------------------

/// Small-jump truncation for the compound-Poisson approximation.
pub const JUMP_TRUNCATION: f64 = 1e-6;
const TABLE_SIZE: usize = 4096;

/// Inverse-CDF sampler tabulated on a log-spaced grid.
pub struct TabulatedSampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    pub mass: f64,
}

impl TabulatedSampler {
    pub fn build(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Self {
        let ratio = (hi / lo).ln() / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| lo * (ratio * i as f64).exp()).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]);
        }
        let mass = cdf[n - 1];
        Self { xs, cdf, mass }
    }

    pub fn sample(&self, u01: f64) -> f64 {
        let target = u01 * self.mass;
        let i = self.cdf.partition_point(|&c| c < target).clamp(1, self.xs.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.xs[i - 1] + w * (self.xs[i] - self.xs[i - 1])
    }
}

struct ClassSim {
    z: [f64; 2],
    /// Poisson intensity: score weight times the truncated Lévy mass.
    intensity: f64,
    gb_hi: f64,
    gb_lo: f64,
    sampler: TabulatedSampler,
}

struct SegmentSim {
    start: f64,
    end: f64,
    classes: Vec<ClassSim>,
    drift: [f64; 2],
}

struct SiteSim {
    time: f64,
    // (cumulative class weight, z, conditional x sampler)
    classes: Vec<(f64, [f64; 2], TabulatedSampler)>,
    total_weight: f64,
}

/// Samples paths of the two-component compound subordinator, a priori or a
/// posteriori, on `(0, t_max]`: Poisson jump counts per partition segment
/// and score class, fixed jumps at exact observation times, and a small
/// deterministic drift compensating the truncated jumps.
pub struct PathSampler {
    segments: Vec<SegmentSim>,
    sites: Vec<SiteSim>,
    baseline_rate: f64,
    gamma: f64,
    pub t_max: f64,
}

impl PathSampler {
    pub fn prior(spec: &CompoundPriorSpec, t_max: f64) -> Self {
        let empty = SurvivalDataset::new(vec![]).unwrap();
        Self::build(spec, &empty, t_max)
    }

    pub fn posterior(spec: &CompoundPriorSpec, data: &SurvivalDataset, t_max: f64) -> Self {
        Self::build(spec, data, t_max)
    }

    fn build(spec: &CompoundPriorSpec, data: &SurvivalDataset, t_max: f64) -> Self {
        let d = &spec.directing;
        let baseline_rate = match d.baseline {
            betastacy::Baseline::Exponential { rate } => rate,
        };
        let eps = JUMP_TRUNCATION;
        let mut segments = Vec::new();
        for (a, b) in partition(spec, data, t_max) {
            let at_risk = data.at_risk_after(a);
            let score = spec.score.at_time(b);
            let (gb_hi, gb_lo) = (d.gb(a), d.gb(b));
            let mut classes = Vec::new();
            let mut drift = [0.0f64; 2];
            for (z, w) in score.points() {
                let shift = (at_risk[0] * z[0] + at_risk[1] * z[1]) as f64;
                let density = move |x: f64| {
                    ((-(gb_lo + shift) * x).exp() - (-(gb_hi + shift) * x).exp())
                        / (x * one_minus_exp_neg(x))
                };
                let x_max = 60.0 / (gb_lo + shift).min(1.0) + 60.0;
                let sampler = TabulatedSampler::build(density, eps, x_max, TABLE_SIZE);
                let intensity = w * sampler.mass;
                // E of the removed small jumps, accrued as a lump.
                let small = adaptive_simpson(
                    &|x: f64| {
                        if x == 0.0 {
                            gb_hi - gb_lo
                        } else {
                            ((-(gb_lo + shift) * x).exp() - (-(gb_hi + shift) * x).exp())
                                / one_minus_exp_neg(x)
                        }
                    },
                    0.0,
                    eps,
                    1e-10,
                    1e-16,
                    30,
                );
                for g in 0..2 {
                    drift[g] += w * small * z[g] as f64;
                }
                classes.push(ClassSim {
                    z: [z[0] as f64, z[1] as f64],
                    intensity,
                    gb_hi,
                    gb_lo,
                    sampler,
                });
            }
            segments.push(SegmentSim { start: a, end: b, classes, drift });
        }

        let mut sites = Vec::new();
        for (time, exact) in data.exact_sites() {
            if time > t_max {
                break;
            }
            let score = spec.score.at_time(time);
            let at_risk = data.at_risk(time);
            let gb = d.gb(time);
            let mut classes = Vec::new();
            let mut total = 0.0;
            for (z, w) in score.points() {
                let f = move |x: f64| jump_integrand(x, z, exact, at_risk, [0, 0], gb);
                let x_max = 60.0 / gb.min(1.0) + 60.0;
                let sampler = TabulatedSampler::build(f, 1e-12, x_max, TABLE_SIZE);
                let mass = w * sampler.mass;
                if mass > 0.0 {
                    total += mass;
                    classes.push((total, [z[0] as f64, z[1] as f64], sampler));
                }
            }
            assert!(total > 0.0, "degenerate jump site in path sampler");
            sites.push(SiteSim { time, classes, total_weight: total });
        }

        Self { segments, sites, baseline_rate, gamma: d.gamma, t_max }
    }

    /// One path: sorted `(time, increment per component)` events.
    pub fn sample_path(&self, rng: &mut ChaCha12Rng) -> Vec<(f64, [f64; 2])> {
        let mut events: Vec<(f64, [f64; 2])> = Vec::with_capacity(32);
        for seg in &self.segments {
            if seg.drift[0] > 0.0 || seg.drift[1] > 0.0 {
                events.push((seg.start, seg.drift));
            }
            for class in &seg.classes {
                if class.intensity <= 0.0 {
                    continue;
                }
                let count =
                    Poisson::new(class.intensity).expect("positive mass").sample(rng) as u64;
                for _ in 0..count {
                    let x = class.sampler.sample(rng.random::<f64>());
                    let time = self.sample_jump_time(class, x, rng);
                    events.push((time, [class.z[0] * x, class.z[1] * x]));
                }
            }
        }
        for site in &self.sites {
            let pick = rng.random::<f64>() * site.total_weight;
            let idx = site.classes.partition_point(|(cum, _, _)| *cum < pick);
            let (_, z, sampler) = &site.classes[idx.min(site.classes.len() - 1)];
            let x = sampler.sample(rng.random::<f64>());
            events.push((site.time, [z[0] * x, z[1] * x]));
        }
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        events
    }

    /// Jump-time conditional on size `x`: `w = gamma beta(s)` has density
    /// proportional to `e^{-w x}` on `(gb(end), gb(start))`.
    fn sample_jump_time(&self, class: &ClassSim, x: f64, rng: &mut ChaCha12Rng) -> f64 {
        let (e_lo, e_hi) = ((-class.gb_hi * x).exp(), (-class.gb_lo * x).exp());
        let w = if e_hi - e_lo > 1e-14 {
            let u = e_lo + rng.random::<f64>() * (e_hi - e_lo);
            -u.ln() / x
        } else {
            class.gb_lo + rng.random::<f64>() * (class.gb_hi - class.gb_lo)
        };
        // Exponential baseline inversion: s = -ln(w / gamma) / rate.
        (-(w / self.gamma).ln() / self.baseline_rate).clamp(0.0, self.t_max)
    }
}

/// `k int_0^t u^{k-1} e^{-xi_g(u)} du` evaluated exactly on a step path.
pub fn path_exp_functional(events: &[(f64, [f64; 2])], g: usize, k: u32, t: f64) -> f64 {
    let mut total = 0.0;
    let mut level = 0.0f64;
    let mut prev = 0.0f64;
    for &(time, inc) in events {
        if time >= t {
            break;
        }
        total += (-level).exp() * (time.powi(k as i32) - prev.powi(k as i32));
        level += inc[g];
        prev = time;
    }
    total + (-level).exp() * (t.powi(k as i32) - prev.powi(k as i32))
}

/// Monte Carlo estimate `(mean, standard error)` of a path functional.
pub fn monte_carlo<F: Fn(&[(f64, [f64; 2])]) -> f64>(
    sampler: &PathSampler,
    n_paths: usize,
    seed: u64,
    f: F,
) -> (f64, f64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n_paths {
        let path = sampler.sample_path(&mut rng);
        let v = f(&path);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n_paths as f64;
    let var = (sumsq / n_paths as f64 - mean * mean).max(0.0);
    (mean, (var / n_paths as f64).sqrt())
}
