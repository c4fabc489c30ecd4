//! Simulation harness: Weibull-mixture event times, exponential censoring
//! calibrated by Robbins-Monro stochastic approximation, and quadrature
//! truth oracles for restricted moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Weibull};
use serde::{Deserialize, Serialize};

use crate::data::{Observation, SurvivalDataset};
use crate::error::{Error, Result};
use crate::numeric::adaptive_simpson;
use crate::prior::Group;

/// One Weibull mixture component (shape/scale parameterization:
/// `S(x) = exp(-(x / scale)^shape)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullComponent {
    pub shape: f64,
    pub scale: f64,
    pub weight: f64,
}

/// Finite mixture of Weibull distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<WeibullComponent>,
}

impl MixtureSpec {
    pub fn new(components: Vec<WeibullComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain("mixture needs at least one component".to_string()));
        }
        for c in &components {
            if !(c.shape > 0.0 && c.scale > 0.0 && c.weight >= 0.0) {
                return Err(Error::domain(format!("invalid mixture component {c:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    /// Equal-weight pair of components.
    pub fn half_and_half(a: (f64, f64), b: (f64, f64)) -> Self {
        Self {
            components: vec![
                WeibullComponent { shape: a.0, scale: a.1, weight: 0.5 },
                WeibullComponent { shape: b.0, scale: b.1, weight: 0.5 },
            ],
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        self.components
            .iter()
            .map(|c| c.weight * (-(t / c.scale).powf(c.shape)).exp())
            .sum()
    }

    pub fn density(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.components
            .iter()
            .map(|c| {
                let z = t / c.scale;
                c.weight * (c.shape / c.scale) * z.powf(c.shape - 1.0) * (-z.powf(c.shape)).exp()
            })
            .sum()
    }

    /// Quantile by bisection on the survival function.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::domain(format!("quantile level must be in (0, 1), got {q}")));
        }
        let target = 1.0 - q;
        let mut hi = 1.0f64;
        while self.survival(hi) > target {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::domain("quantile bracket expansion failed".to_string()));
            }
        }
        let mut lo = 0.0f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.survival(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let mut u: f64 = rng.random();
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            if u < c.weight {
                idx = i;
                break;
            }
            u -= c.weight;
        }
        let c = &self.components[idx];
        Weibull::new(c.scale, c.shape).expect("validated parameters").sample(rng)
    }
}

/// Calibration settings for the censoring rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    /// Target `P(Y < C)`, the probability of observing the event exactly.
    pub target_event_prob: f64,
    pub iterations: usize,
    pub initial: f64,
    /// Gains are `i^{-step_exponent}`.
    pub step_exponent: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self { target_event_prob: 0.8, iterations: 10_000, initial: 3.0, step_exponent: 0.75 }
    }
}

/// Exponential censoring: a fixed rate (0 disables censoring) or a rate
/// calibrated by Robbins-Monro.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringSpec {
    Rate(f64),
    Calibrate(CalibrationSpec),
}

/// Full two-sample generation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_per_group: usize,
    pub groups: [MixtureSpec; 2],
    pub censoring: [CensoringSpec; 2],
    pub seed: u64,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
}

fn default_horizons() -> Vec<f64> {
    vec![30.0]
}

impl ScenarioSpec {
    /// The benchmark design used throughout this crate's studies: two
    /// half-and-half Weibull mixtures sharing one component, censoring
    /// calibrated to an 80% event probability.
    pub fn benchmark_two_mixtures(n_per_group: usize, seed: u64) -> Self {
        Self {
            n_per_group,
            groups: [
                MixtureSpec::half_and_half((2.1, 5.0), (1.2, 5.5)),
                MixtureSpec::half_and_half((2.1, 5.0), (5.3, 4.75)),
            ],
            censoring: [
                CensoringSpec::Calibrate(CalibrationSpec::default()),
                CensoringSpec::Calibrate(CalibrationSpec::default()),
            ],
            seed,
            horizons: vec![30.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_group == 0 {
            return Err(Error::domain("n_per_group must be positive".to_string()));
        }
        for g in &self.groups {
            MixtureSpec::new(g.components.clone())?;
        }
        for c in &self.censoring {
            match c {
                CensoringSpec::Rate(r) if !(*r >= 0.0) || !r.is_finite() => {
                    return Err(Error::domain(format!("censoring rate must be >= 0, got {r}")))
                }
                CensoringSpec::Calibrate(cal)
                    if !(cal.target_event_prob > 0.0 && cal.target_event_prob < 1.0) =>
                {
                    return Err(Error::domain(format!(
                        "target event probability must be in (0, 1), got {}",
                        cal.target_event_prob
                    )))
                }
                _ => {}
            }
        }
        if self.horizons.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::domain("horizons must be positive and finite".to_string()));
        }
        Ok(())
    }
}

/// A generated dataset together with the censoring rates actually used.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: SurvivalDataset,
    pub censoring_rates: [f64; 2],
}

/// Robbins-Monro root finding for the censoring rate `theta` with
/// `C ~ Exponential(theta)`: drive `P(Y < C)` to `target`.
///
/// `P(Y < C) = E[e^{-theta Y}]` decreases in `theta`, so the convergent
/// update is `theta_{i+1} = theta_i + a_i (1{Y < C} - target)` with gains
/// `a_i = i^{-step_exponent}`, clamped positive.
pub fn robbins_monro_rate(
    mixture: &MixtureSpec,
    cal: &CalibrationSpec,
    rng: &mut impl Rng,
) -> f64 {
    let mut theta = cal.initial.max(1e-12);
    for i in 1..=cal.iterations {
        let y = mixture.sample(rng);
        let c = sample_censoring(theta, rng);
        let gain = (i as f64).powf(-cal.step_exponent);
        theta += gain * ((y < c) as u8 as f64 - cal.target_event_prob);
        theta = theta.max(1e-12);
    }
    theta
}

fn sample_censoring(rate: f64, rng: &mut impl Rng) -> f64 {
    if rate <= 0.0 {
        f64::INFINITY
    } else {
        Exp::new(rate).expect("positive rate").sample(rng)
    }
}

/// Draws `Y ~ mixture`, `C ~ Exponential(rate)`, records `(min(Y, C), 1{Y <= C})`.
/// Deterministic in the scenario seed; calibration and the two groups use
/// disjoint ChaCha streams.
pub fn generate(scenario: &ScenarioSpec) -> Result<GeneratedData> {
    scenario.validate()?;
    let mut rates = [0.0f64; 2];
    for (g, spec) in scenario.censoring.iter().enumerate() {
        rates[g] = match spec {
            CensoringSpec::Rate(r) => *r,
            CensoringSpec::Calibrate(cal) => {
                let mut rng = ChaCha12Rng::seed_from_u64(scenario.seed);
                rng.set_stream(1 + g as u64);
                robbins_monro_rate(&scenario.groups[g], cal, &mut rng)
            }
        };
    }
    let mut observations = Vec::with_capacity(2 * scenario.n_per_group);
    for (g, group) in Group::BOTH.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(scenario.seed);
        rng.set_stream(3 + g as u64);
        for _ in 0..scenario.n_per_group {
            let y = scenario.groups[g].sample(&mut rng);
            let c = sample_censoring(rates[g], &mut rng);
            observations.push(Observation::new(y.min(c), y <= c, *group)?);
        }
    }
    Ok(GeneratedData { dataset: SurvivalDataset::new(observations)?, censoring_rates: rates })
}

/// Ground-truth functionals of the generating mixtures, by quadrature of
/// the closed-form survival functions.
#[derive(Debug, Clone)]
pub struct TruthOracle {
    pub groups: [MixtureSpec; 2],
}

impl TruthOracle {
    pub fn new(groups: [MixtureSpec; 2]) -> Self {
        Self { groups }
    }

    pub fn from_scenario(scenario: &ScenarioSpec) -> Self {
        Self::new(scenario.groups.clone())
    }

    pub fn survival(&self, group: Group, t: f64) -> f64 {
        self.groups[group.index()].survival(t)
    }

    /// True restricted moment `k int_0^t S(u) u^{k-1} du`.
    pub fn restricted_moment(&self, group: Group, t: f64, k: u32) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::domain(format!("horizon must be finite and >= 0, got {t}")));
        }
        let mix = &self.groups[group.index()];
        let f = |u: f64| mix.survival(u) * u.powi(k as i32 - 1);
        Ok(k as f64 * adaptive_simpson(&f, 0.0, t, 1e-12, 1e-14, 48))
    }

    /// True restricted variance `mu^(2) - mu^2` of the survival curve.
    pub fn restricted_variance(&self, group: Group, t: f64) -> Result<f64> {
        let m1 = self.restricted_moment(group, t, 1)?;
        let m2 = self.restricted_moment(group, t, 2)?;
        Ok(m2 - m1 * m1)
    }

    pub fn quantile(&self, group: Group, q: f64) -> Result<f64> {
        self.groups[group.index()].quantile(q)
    }
}
