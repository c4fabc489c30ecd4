//! Compound Beta-Stacy prior specification: Log-Beta directing Lévy measure,
//! categorical score distributions (optionally stratified in time), and
//! closed-form prior Laplace exponents at integer arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{check_leq, check_time, LaplaceExponent, RatioProfile};
use crate::numeric::{sum_log_ratio, sum_log_ratio_range, KahanSum};

/// Sample label for the two-group model; serializes as 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Group {
    One,
    Two,
}

impl From<Group> for u8 {
    fn from(g: Group) -> u8 {
        g.label()
    }
}

impl TryFrom<u8> for Group {
    type Error = Error;

    fn try_from(label: u8) -> Result<Self> {
        Group::from_label(label)
    }
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::One, Group::Two];

    pub fn index(self) -> usize {
        match self {
            Group::One => 0,
            Group::Two => 1,
        }
    }

    /// Unit argument vector `e_i` for this group.
    pub fn unit(self) -> [u64; 2] {
        match self {
            Group::One => [1, 0],
            Group::Two => [0, 1],
        }
    }

    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            1 => Ok(Group::One),
            2 => Ok(Group::Two),
            other => Err(Error::domain(format!("group must be 1 or 2, got {other}"))),
        }
    }
}

/// Centering distribution of the prior: density `alpha` and survival `beta`.
///
/// Only the exponential family ships; the enum leaves room for others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Baseline {
    Exponential { rate: f64 },
}

impl Baseline {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::domain(format!("baseline rate must be positive, got {rate}")));
        }
        Ok(Baseline::Exponential { rate })
    }

    /// Density `alpha(s)`.
    pub fn density(&self, s: f64) -> f64 {
        match *self {
            Baseline::Exponential { rate } => {
                if s < 0.0 {
                    0.0
                } else {
                    rate * (-rate * s).exp()
                }
            }
        }
    }

    /// Survival `beta(s) = int_s^inf alpha(u) du`; `beta(0) = 1`.
    pub fn survival(&self, s: f64) -> f64 {
        match *self {
            Baseline::Exponential { rate } => {
                if s <= 0.0 {
                    1.0
                } else {
                    (-rate * s).exp()
                }
            }
        }
    }
}

/// Log-Beta directing Lévy measure with precision `gamma` and a baseline
/// centering. The Lévy density `gamma e^{-gamma beta(s) x} alpha(s) / (1-e^{-x})`
/// is never materialized; everything is integrated in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBetaDirecting {
    pub gamma: f64,
    pub baseline: Baseline,
}

impl LogBetaDirecting {
    pub fn new(gamma: f64, baseline: Baseline) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::domain(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma, baseline })
    }

    /// `gamma * beta(s)`, the offset appearing in every closed form.
    pub fn gb(&self, s: f64) -> f64 {
        self.gamma * self.baseline.survival(s)
    }

    /// Directing Laplace exponent increment `psi*_t(m) - psi*_s(m)` over
    /// `(s, t]` at a nonnegative integer `m`:
    /// `sum_{i=0}^{m-1} ln((gamma beta(s) + i) / (gamma beta(t) + i))`.
    pub fn psi_star_increment(&self, m: u64, s: f64, t: f64) -> Result<f64> {
        if !t.is_finite() || s < 0.0 || s >= t {
            return Err(Error::domain(format!(
                "psi* increment needs 0 <= s < t < inf, got s={s}, t={t}"
            )));
        }
        Ok(self.increment_unchecked(m, s, t))
    }

    /// Same as [`psi_star_increment`](Self::psi_star_increment) but allowing
    /// the empty window `s == t`.
    pub(crate) fn increment_unchecked(&self, m: u64, s: f64, t: f64) -> f64 {
        if m == 0 || s >= t {
            return 0.0;
        }
        sum_log_ratio(m, self.gb(s), self.gb(t))
    }

    /// Fused increment of `psi*(hi) - psi*(lo)` over `(s, t]`:
    /// only the index range `[lo, hi)` of the log-ratio sum.
    pub(crate) fn increment_range(&self, lo: u64, hi: u64, s: f64, t: f64) -> f64 {
        if hi <= lo || s >= t {
            return 0.0;
        }
        sum_log_ratio_range(lo, hi, self.gb(s), self.gb(t))
    }
}

/// Categorical score distribution on the support `{(1,1), (1,0), (0,1)}`.
///
/// `pi[0]` is the weight of the shared jump, `pi[1]` and `pi[2]` the
/// idiosyncratic weights for groups one and two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pi: [f64; 3],
}

impl ScoreDistribution {
    pub const SUPPORT: [[u64; 2]; 3] = [[1, 1], [1, 0], [0, 1]];

    pub fn new(pi: [f64; 3]) -> Result<Self> {
        if pi.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain(format!("score weights must be nonnegative, got {pi:?}")));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "score weights must sum to 1 (got {sum}); weights {pi:?}"
            )));
        }
        Ok(Self { pi })
    }

    pub fn weights(&self) -> [f64; 3] {
        self.pi
    }

    /// Support points with strictly positive weight.
    pub fn points(&self) -> impl Iterator<Item = ([u64; 2], f64)> + '_ {
        Self::SUPPORT
            .iter()
            .zip(self.pi.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&z, &w)| (z, w))
    }

    /// Total weight of support points active for `group`, i.e. `P(W_g = 1)`.
    pub fn group_mass(&self, group: Group) -> f64 {
        self.points().filter(|(z, _)| z[group.index()] == 1).map(|(_, w)| w).sum()
    }
}

/// Score distribution that switches at a time threshold `tau`: jumps at or
/// before `tau` use `pre`, later jumps use `post`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratifiedScore {
    pub pre: ScoreDistribution,
    pub post: ScoreDistribution,
    pub tau: f64,
}

impl StratifiedScore {
    pub fn new(pre: ScoreDistribution, post: ScoreDistribution, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!("tau must be positive and finite, got {tau}")));
        }
        Ok(Self { pre, post, tau })
    }
}

/// Either a single score distribution or a stratified pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Score {
    Single(ScoreDistribution),
    Stratified(StratifiedScore),
}

impl Score {
    /// Score triplet governing a jump at time `t`.
    pub fn at_time(&self, t: f64) -> &ScoreDistribution {
        match self {
            Score::Single(s) => s,
            Score::Stratified(s) => {
                if t <= s.tau {
                    &s.pre
                } else {
                    &s.post
                }
            }
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            Score::Single(_) => None,
            Score::Stratified(s) => Some(s.tau),
        }
    }
}

/// Hyperparameters of the two-sample compound Beta-Stacy prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundPriorSpec {
    pub directing: LogBetaDirecting,
    pub score: Score,
}

impl CompoundPriorSpec {
    pub fn new(directing: LogBetaDirecting, score: Score) -> Self {
        Self { directing, score }
    }

    /// Prior Laplace exponent `psi_t(r) = E_{Z~score}[psi*_t(r . Z)]`.
    ///
    /// For a stratified score the expectation splits at `tau`: the `pre`
    /// triplet weighs the increment over `(0, min(t, tau)]` and the `post`
    /// triplet the increment over `(tau, t]`.
    pub fn prior_psi(&self, r: [u64; 2], t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        let mut acc = KahanSum::new();
        for (a, b, score) in self.strata(0.0, t) {
            for (z, w) in score.points() {
                let m = r[0] * z[0] + r[1] * z[1];
                acc.add(w * self.directing.increment_unchecked(m, a, b));
            }
        }
        Ok(acc.value())
    }

    /// Prior mean survival `E[S_g(t)] = exp(-psi_t(e_g))`.
    pub fn prior_survival(&self, t: f64, group: Group) -> Result<f64> {
        Ok((-self.prior_psi(group.unit(), t)?).exp())
    }

    /// Fused `psi_u(r) - psi_u(l)` for componentwise `l <= r`.
    pub fn prior_psi_diff(&self, r: [u64; 2], l: [u64; 2], u: f64) -> Result<f64> {
        check_leq(l, r)?;
        check_time(u)?;
        let mut acc = KahanSum::new();
        for (a, b, score) in self.strata(0.0, u) {
            for (z, w) in score.points() {
                let lo = l[0] * z[0] + l[1] * z[1];
                let hi = r[0] * z[0] + r[1] * z[1];
                acc.add(w * self.directing.increment_range(lo, hi, a, b));
            }
        }
        Ok(acc.value())
    }

    /// Sub-intervals of `(s, t]` with a constant score triplet.
    pub(crate) fn strata(&self, s: f64, t: f64) -> Vec<(f64, f64, &ScoreDistribution)> {
        match &self.score {
            Score::Single(sc) => vec![(s, t, sc)],
            Score::Stratified(st) => {
                if t <= st.tau {
                    vec![(s, t, &st.pre)]
                } else if s >= st.tau {
                    vec![(s, t, &st.post)]
                } else {
                    vec![(s, st.tau, &st.pre), (st.tau, t, &st.post)]
                }
            }
        }
    }
}

impl LaplaceExponent for CompoundPriorSpec {
    fn psi(&self, r: [u64; 2], t: f64) -> Result<f64> {
        self.prior_psi(r, t)
    }

    fn ratio_factors(&self, r: [u64; 2], l: [u64; 2], nodes: &[f64]) -> Result<RatioProfile> {
        check_leq(l, r)?;
        let mut vals = Vec::with_capacity(nodes.len());
        for &u in nodes {
            vals.push((-self.prior_psi_diff(r, l, u)?).exp());
        }
        Ok(RatioProfile { left: vals.clone(), right: vals })
    }

    fn breakpoints(&self, s: f64, t: f64) -> Vec<f64> {
        match self.score.tau() {
            Some(tau) if s < tau && tau < t => vec![tau],
            _ => Vec::new(),
        }
    }
}

/// JSON-facing prior configuration:
/// `{"gamma": g, "baseline": {"family": "exponential", "rate": r},
///   "score": {"pi1": [..], "pi2": [..]?, "tau": t?}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorConfig {
    pub gamma: f64,
    pub baseline: Baseline,
    pub score: ScoreConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub pi1: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi2: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl TryFrom<PriorConfig> for CompoundPriorSpec {
    type Error = Error;

    fn try_from(cfg: PriorConfig) -> Result<Self> {
        let baseline = match cfg.baseline {
            Baseline::Exponential { rate } => Baseline::exponential(rate)?,
        };
        let directing = LogBetaDirecting::new(cfg.gamma, baseline)?;
        let pre = ScoreDistribution::new(cfg.score.pi1)?;
        let score = match (cfg.score.pi2, cfg.score.tau) {
            (None, None) => Score::Single(pre),
            (Some(pi2), Some(tau)) => {
                Score::Stratified(StratifiedScore::new(pre, ScoreDistribution::new(pi2)?, tau)?)
            }
            _ => {
                return Err(Error::domain(
                    "stratified score configs need both pi2 and tau".to_string(),
                ))
            }
        };
        Ok(CompoundPriorSpec::new(directing, score))
    }
}

impl From<&CompoundPriorSpec> for PriorConfig {
    fn from(spec: &CompoundPriorSpec) -> Self {
        let score = match spec.score {
            Score::Single(s) => ScoreConfig { pi1: s.weights(), pi2: None, tau: None },
            Score::Stratified(s) => ScoreConfig {
                pi1: s.pre.weights(),
                pi2: Some(s.post.weights()),
                tau: Some(s.tau),
            },
        };
        PriorConfig { gamma: spec.directing.gamma, baseline: spec.directing.baseline, score }
    }
}
