//! Posterior Laplace exponents, jump-weight Laplace transforms, posterior
//! survival estimates, marginal likelihood, and MAP hyperparameter search
//! for the two-sample compound Beta-Stacy model.
//!
//! Given right-censored data, the posterior subordinator vector splits into
//! a continuous part (the prior Lévy intensity exponentially tilted by the
//! at-risk process) and fixed jumps at the distinct exact observation times.
//! Everything here is an exact finite sum over the categorical score support
//! and the breakpoint partition; there is no Monte Carlo.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::laplace::{check_leq, check_time, LaplaceExponent, RatioProfile};
use crate::numeric::{binomial, sum_log_ratio, sum_log_ratio_range, KahanSum};
use crate::prior::{
    CompoundPriorSpec, Group, LogBetaDirecting, Score, ScoreDistribution, StratifiedScore,
};

/// One piece of the breakpoint partition: the at-risk vector and score
/// triplet are constant on `(start, end]`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    end: f64,
    at_risk: [u64; 2],
    score: ScoreDistribution,
}

/// Fixed posterior jump at a distinct exact observation time.
#[derive(Debug, Clone, Copy)]
pub struct JumpSite {
    pub time: f64,
    /// Exact counts per group at this time.
    pub exact: [u64; 2],
    /// At-risk per group at this time (ties included).
    pub at_risk: [u64; 2],
    gb: f64,
    score: ScoreDistribution,
}

/// Posterior multivariate Laplace exponent for a prior spec and a dataset.
///
/// With an empty dataset every quantity reduces exactly to the prior.
#[derive(Debug, Clone)]
pub struct PosteriorLaplace<'a> {
    spec: &'a CompoundPriorSpec,
    data: &'a SurvivalDataset,
    segments: Vec<Segment>,
    jumps: Vec<JumpSite>,
}

impl<'a> PosteriorLaplace<'a> {
    pub fn new(spec: &'a CompoundPriorSpec, data: &'a SurvivalDataset) -> Self {
        let mut breakpoints: Vec<f64> = data.distinct_times().to_vec();
        if let Some(tau) = spec.score.tau() {
            if !breakpoints.contains(&tau) {
                breakpoints.push(tau);
            }
        }
        breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut segments = Vec::with_capacity(breakpoints.len() + 1);
        let mut start = 0.0;
        for &end in &breakpoints {
            segments.push(Segment {
                start,
                end,
                at_risk: data.at_risk_after(start),
                score: *spec.score.at_time(end),
            });
            start = end;
        }
        // Tail beyond the data (and tau): prior intensity, post-tau score.
        segments.push(Segment {
            start,
            end: f64::INFINITY,
            at_risk: [0, 0],
            score: *spec.score.at_time(start + 1.0),
        });

        let jumps = data
            .exact_sites()
            .map(|(time, exact)| JumpSite {
                time,
                exact,
                at_risk: data.at_risk(time),
                gb: spec.directing.gb(time),
                score: *spec.score.at_time(time),
            })
            .collect();

        Self { spec, data, segments, jumps }
    }

    pub fn spec(&self) -> &CompoundPriorSpec {
        self.spec
    }

    pub fn dataset(&self) -> &SurvivalDataset {
        self.data
    }

    pub fn jump_sites(&self) -> &[JumpSite] {
        &self.jumps
    }

    fn directing(&self) -> &LogBetaDirecting {
        &self.spec.directing
    }

    /// Continuous part `psi°_t(r)`: per segment and score point, the
    /// at-risk-shifted log-ratio sum
    /// `sum_{j=0}^{r.z-1} ln((gb(a) + R.z + j) / (gb(b) + R.z + j))`.
    fn psi_continuous(&self, r: [u64; 2], t: f64) -> f64 {
        let d = self.directing();
        let mut acc = KahanSum::new();
        for seg in &self.segments {
            if seg.start >= t {
                break;
            }
            let b = seg.end.min(t);
            for (z, w) in seg.score.points() {
                let m = r[0] * z[0] + r[1] * z[1];
                if m == 0 {
                    continue;
                }
                let shift = (seg.at_risk[0] * z[0] + seg.at_risk[1] * z[1]) as f64;
                acc.add(w * sum_log_ratio(m, d.gb(seg.start) + shift, d.gb(b) + shift));
            }
        }
        acc.value()
    }

    /// Posterior Laplace exponent `psi_t(r | data)`, fixed jumps included.
    pub fn posterior_psi(&self, r: [u64; 2], t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 || r == [0, 0] {
            return Ok(0.0);
        }
        let mut acc = KahanSum::new();
        acc.add(self.psi_continuous(r, t));
        for site in &self.jumps {
            if site.time > t {
                break;
            }
            acc.add(-self.jump_log_laplace(site, r)?);
        }
        Ok(acc.value())
    }

    /// Posterior mean survival `exp(-psi_t(e_g | data))`.
    pub fn posterior_survival(&self, group: Group, t: f64) -> Result<f64> {
        Ok((-self.posterior_psi(group.unit(), t)?).exp())
    }

    /// `ln E[e^{-r . J}]` for the fixed jump at `site`; 0 at `r = (0, 0)`.
    pub fn jump_log_laplace(&self, site: &JumpSite, r: [u64; 2]) -> Result<f64> {
        let den = self.jump_expectation_sum(site, [0, 0]);
        if !(den > 0.0) {
            return Err(Error::DegenerateScore { time: site.time });
        }
        if r == [0, 0] {
            return Ok(0.0);
        }
        let num = self.jump_expectation_sum(site, r);
        Ok((num / den).ln())
    }

    /// `E[e^{-r . J}]`, a value in `(0, 1]`.
    pub fn jump_laplace(&self, site: &JumpSite, r: [u64; 2]) -> Result<f64> {
        Ok(self.jump_log_laplace(site, r)?.exp())
    }

    /// Score expectation of the jump integral at tilt `m`:
    /// `N(m) = sum_z w_z int_0^inf e^{-((R-c+m).z) x}
    ///         (1-e^{-z1 x})^{c1} (1-e^{-z2 x})^{c2} e^{-gb x} / (1-e^{-x}) dx`.
    fn jump_expectation_sum(&self, site: &JumpSite, m: [u64; 2]) -> f64 {
        let mut acc = KahanSum::new();
        for (z, w) in site.score.points() {
            acc.add(w * jump_integral(z, site.exact, site.at_risk, m, site.gb));
        }
        acc.value()
    }

    /// Fused `psi_u(r | data) - psi_u(l | data)` for componentwise `l <= r`.
    fn psi_diff(&self, r: [u64; 2], l: [u64; 2], u: f64) -> Result<f64> {
        let d = self.directing();
        let mut acc = KahanSum::new();
        for seg in &self.segments {
            if seg.start >= u {
                break;
            }
            let b = seg.end.min(u);
            for (z, w) in seg.score.points() {
                let lo = l[0] * z[0] + l[1] * z[1];
                let hi = r[0] * z[0] + r[1] * z[1];
                if hi <= lo {
                    continue;
                }
                let shift = (seg.at_risk[0] * z[0] + seg.at_risk[1] * z[1]) as f64;
                acc.add(w * sum_log_ratio_range(lo, hi, d.gb(seg.start) + shift, d.gb(b) + shift));
            }
        }
        for site in &self.jumps {
            if site.time > u {
                break;
            }
            acc.add(self.jump_log_laplace(site, l)? - self.jump_log_laplace(site, r)?);
        }
        Ok(acc.value())
    }

    /// `exp(-(psi_u(r | data) - psi_u(l | data)))`, a value in `(0, 1]`,
    /// computed in fused form (interval log-ratio ranges and jump-transform
    /// ratios) rather than as a difference of two large exponents.
    pub fn psi_ratio(&self, r: [u64; 2], l: [u64; 2], u: f64) -> Result<f64> {
        check_leq(l, r)?;
        check_time(u)?;
        Ok((-self.psi_diff(r, l, u)?).exp())
    }
}

/// `int_0^inf e^{-((R-c+m).z) x} (1-e^{-z1 x})^{c1} (1-e^{-z2 x})^{c2}
///  e^{-gb x} / (1-e^{-x}) dx` as a finite reciprocal sum.
///
/// The `1/(1-e^{-x})` factor is absorbed into a geometric sum over a pivot
/// group with an exact observation; repeated exacts expand binomially. A
/// score point giving zero weight to a group with exacts contributes 0.
fn jump_integral(z: [u64; 2], c: [u64; 2], at_risk: [u64; 2], m: [u64; 2], gb: f64) -> f64 {
    debug_assert!(c[0] + c[1] > 0, "jump sites carry at least one exact observation");
    for g in 0..2 {
        if c[g] >= 1 && z[g] == 0 {
            return 0.0;
        }
    }
    let g = if c[0] >= 1 { 0 } else { 1 };
    let h = 1 - g;
    let base = gb
        + ((at_risk[0] - c[0] + m[0]) * z[0]) as f64
        + ((at_risk[1] - c[1] + m[1]) * z[1]) as f64;
    let mut acc = KahanSum::new();
    for j in 0..z[g] {
        for lg in 0..c[g] {
            for lh in 0..=c[h] {
                let sign = if (lg + lh) % 2 == 0 { 1.0 } else { -1.0 };
                let coeff = binomial(c[g] - 1, lg) * binomial(c[h], lh);
                let offset = (j + lg * z[g] + lh * z[h]) as f64;
                acc.add(sign * coeff / (base + offset));
            }
        }
    }
    acc.value()
}

impl LaplaceExponent for PosteriorLaplace<'_> {
    fn psi(&self, r: [u64; 2], t: f64) -> Result<f64> {
        self.posterior_psi(r, t)
    }

    fn ratio_factors(&self, r: [u64; 2], l: [u64; 2], nodes: &[f64]) -> Result<RatioProfile> {
        check_leq(l, r)?;
        let d = self.directing();
        let last = match nodes.last() {
            Some(&u) => u,
            None => return Ok(RatioProfile { left: Vec::new(), right: Vec::new() }),
        };

        // ln(N(r)/N(l)) per jump site, nonpositive.
        let mut site_ln: Vec<(f64, f64)> = Vec::new();
        for site in &self.jumps {
            if site.time > last {
                break;
            }
            site_ln
                .push((site.time, self.jump_log_laplace(site, r)? - self.jump_log_laplace(site, l)?));
        }

        let seg_increment = |seg: &Segment, b: f64| -> f64 {
            let mut acc = KahanSum::new();
            for (z, w) in seg.score.points() {
                let lo = l[0] * z[0] + l[1] * z[1];
                let hi = r[0] * z[0] + r[1] * z[1];
                if hi <= lo {
                    continue;
                }
                let shift = (seg.at_risk[0] * z[0] + seg.at_risk[1] * z[1]) as f64;
                acc.add(w * sum_log_ratio_range(lo, hi, d.gb(seg.start) + shift, d.gb(b) + shift));
            }
            acc.value()
        };

        let mut left = Vec::with_capacity(nodes.len());
        let mut right = Vec::with_capacity(nodes.len());
        let mut seg_idx = 0usize;
        let mut site_idx = 0usize;
        // -(psi_u(r) - psi_u(l)) accumulated over (0, segments[seg_idx].start]
        // with all sites at times <= that start included.
        let mut ln_prefix = 0.0f64;
        for &u in nodes {
            while self.segments[seg_idx].end < u {
                let seg = &self.segments[seg_idx];
                ln_prefix -= seg_increment(seg, seg.end);
                if site_idx < site_ln.len() && site_ln[site_idx].0 == seg.end {
                    ln_prefix += site_ln[site_idx].1;
                    site_idx += 1;
                }
                seg_idx += 1;
            }
            let seg = &self.segments[seg_idx];
            let ln_left =
                if u > seg.start { ln_prefix - seg_increment(seg, u) } else { ln_prefix };
            let ln_right = if site_idx < site_ln.len() && site_ln[site_idx].0 == u {
                ln_left + site_ln[site_idx].1
            } else {
                ln_left
            };
            left.push(ln_left.exp());
            right.push(ln_right.exp());
        }
        Ok(RatioProfile { left, right })
    }

    fn breakpoints(&self, s: f64, t: f64) -> Vec<f64> {
        let mut pts: Vec<f64> =
            self.data.distinct_times().iter().copied().filter(|&x| s < x && x < t).collect();
        if let Some(tau) = self.spec.score.tau() {
            if s < tau && tau < t && !pts.contains(&tau) {
                pts.push(tau);
                pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
        }
        pts
    }
}

/// Marginal log-likelihood of the data with the subordinator vector
/// integrated out: summed tilted Laplace-exponent increments over the
/// partition plus one integral factor per distinct exact time.
pub fn marginal_log_likelihood(spec: &CompoundPriorSpec, data: &SurvivalDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("marginal likelihood needs a nonempty dataset".to_string()));
    }
    let post = PosteriorLaplace::new(spec, data);
    let d = &spec.directing;
    let t_max = data.max_time().unwrap();
    let mut acc = KahanSum::new();
    for seg in &post.segments {
        if seg.start >= t_max {
            break;
        }
        let b = seg.end.min(t_max);
        for (z, w) in seg.score.points() {
            let m = seg.at_risk[0] * z[0] + seg.at_risk[1] * z[1];
            if m == 0 {
                continue;
            }
            acc.add(-w * sum_log_ratio(m, d.gb(seg.start), d.gb(b)));
        }
    }
    for site in &post.jumps {
        let n0 = post.jump_expectation_sum(site, [0, 0]);
        if !(n0 > 0.0) {
            return Err(Error::DegenerateScore { time: site.time });
        }
        acc.add((d.gamma * d.baseline.density(site.time)).ln());
        acc.add(n0.ln());
    }
    Ok(acc.value())
}

/// Search grid for MAP hyperparameter selection.
#[derive(Debug, Clone)]
pub struct FitGrid {
    /// Simplex step for the score triplets (0.1 gives 66 points).
    pub simplex_step: f64,
    /// Candidate thresholds; ignored when `stratified` is false.
    pub taus: Vec<f64>,
    pub stratified: bool,
}

impl FitGrid {
    /// Step 0.1 with tau candidates at the observed-time deciles.
    pub fn default_for(data: &SurvivalDataset) -> Result<Self> {
        let mut taus = Vec::new();
        for i in 1..=9 {
            let q = data.pooled_quantile(i as f64 / 10.0)?;
            if !taus.contains(&q) {
                taus.push(q);
            }
        }
        Ok(Self { simplex_step: 0.1, taus, stratified: true })
    }

}

/// One evaluated grid point of the likelihood surface.
#[derive(Debug, Clone, Serialize)]
pub struct SurfacePoint {
    pub pi1: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi2: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub log_likelihood: f64,
}

/// MAP fit result: the best score configuration and the full surface.
#[derive(Debug, Clone)]
pub struct HyperFit {
    pub best: Score,
    pub best_log_likelihood: f64,
    pub surface: Vec<SurfacePoint>,
}

fn simplex_points(step: f64) -> Vec<[f64; 3]> {
    let steps = (1.0 / step).round() as u64;
    let h = 1.0 / steps as f64;
    let mut out = Vec::new();
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let k = steps - i - j;
            out.push([i as f64 * h, j as f64 * h, k as f64 * h]);
        }
    }
    out
}

/// Groups with at least one exact observation in `(lo, hi]`.
fn groups_with_exacts(data: &SurvivalDataset, lo: f64, hi: f64) -> [bool; 2] {
    let mut present = [false; 2];
    for (t, c) in data.exact_sites() {
        if t > lo && t <= hi {
            for g in 0..2 {
                present[g] |= c[g] > 0;
            }
        }
    }
    present
}

fn feasible(score: &ScoreDistribution, needed: [bool; 2]) -> bool {
    Group::BOTH
        .iter()
        .all(|&g| !needed[g.index()] || score.group_mass(g) > 0.0)
}

/// Exhaustive marginal-likelihood maximization over a score grid.
///
/// Grid points that give zero weight to the group of some exact observation
/// (per stratum) are excluded: their likelihood is degenerate. Evaluation is
/// parallel; the returned surface preserves grid order and the argmax is the
/// first maximizer.
pub fn fit_map(
    directing: LogBetaDirecting,
    data: &SurvivalDataset,
    grid: &FitGrid,
) -> Result<HyperFit> {
    if data.is_empty() {
        return Err(Error::domain("cannot fit an empty dataset".to_string()));
    }
    let triplets: Vec<ScoreDistribution> = simplex_points(grid.simplex_step)
        .into_iter()
        .map(ScoreDistribution::new)
        .collect::<Result<_>>()?;

    let mut candidates: Vec<Score> = Vec::new();
    if grid.stratified {
        let t_max = data.max_time().unwrap();
        for &tau in &grid.taus {
            let pre_needed = groups_with_exacts(data, 0.0, tau);
            let post_needed = groups_with_exacts(data, tau, t_max);
            for pre in triplets.iter().filter(|s| feasible(s, pre_needed)) {
                for post in triplets.iter().filter(|s| feasible(s, post_needed)) {
                    candidates.push(Score::Stratified(StratifiedScore::new(*pre, *post, tau)?));
                }
            }
        }
    } else {
        let needed = groups_with_exacts(data, 0.0, f64::INFINITY);
        for s in triplets.iter().filter(|s| feasible(s, needed)) {
            candidates.push(Score::Single(*s));
        }
    }
    if candidates.is_empty() {
        return Err(Error::domain("score grid is empty after degeneracy filtering".to_string()));
    }

    let surface: Vec<SurfacePoint> = candidates
        .par_iter()
        .map(|score| {
            let spec = CompoundPriorSpec::new(directing, *score);
            let log_likelihood = marginal_log_likelihood(&spec, data)?;
            let (pi1, pi2, tau) = match score {
                Score::Single(s) => (s.weights(), None, None),
                Score::Stratified(s) => {
                    (s.pre.weights(), Some(s.post.weights()), Some(s.tau))
                }
            };
            Ok(SurfacePoint { pi1, pi2, tau, log_likelihood })
        })
        .collect::<Result<_>>()?;

    let best_idx = surface
        .iter()
        .enumerate()
        .filter(|(_, p)| p.log_likelihood.is_finite())
        .max_by(|(ia, a), (ib, b)| {
            a.log_likelihood
                .partial_cmp(&b.log_likelihood)
                .unwrap()
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::domain("no finite likelihood on the grid".to_string()))?;

    Ok(HyperFit {
        best: candidates[best_idx],
        best_log_likelihood: surface[best_idx].log_likelihood,
        surface,
    })
}
