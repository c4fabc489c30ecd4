//! Restricted mixed moments of RMST-type exponential functionals.
//!
//! The central object is
//! `M_{s,t}^{(r)}(xi; k) = E[ prod_i ( k_i int_s^t e^{-xi_i(u)} u^{k_i - 1} du )^{r_i} ]`
//! for a vector of (possibly repeated) subordinator entries. It satisfies
//! the recursion
//! `M_{s,t}^{(r)} = sum_i r_i k_i int_s^t M_{u,t}^{(r - e_i)}
//!   e^{-(psi_u(r) - psi_u(r - e_i))} u^{k_i - 1} du`,
//! which holds a priori and a posteriori once the exponent ratio includes
//! the fixed-jump transforms. Dynamic programming ascends in total order
//! `|r|`; one backward cumulative pass yields `M_{u,t}` at every grid node.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::laplace::LaplaceExponent;
use crate::numeric::{binomial, multinomial, KahanSum};
use crate::prior::Group;

/// Default number of uniform refinement nodes for the quadrature grid.
pub const DEFAULT_REFINE: usize = 512;
/// Relative two-grid discrepancy beyond which a warning is logged.
pub const RICHARDSON_REL_TOL: f64 = 1e-4;
/// Default cap on the number of expansion terms in moment combinations.
pub const COMPOSITION_CAP: usize = 100_000;

/// Ratio-factor profiles keyed by the collapsed (r, l) argument pair.
type FactorCache = HashMap<([u64; 2], [u64; 2]), Rc<crate::laplace::RatioProfile>>;

/// One mixed-moment request.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpec {
    /// Underlying process per slot; repeats allowed, e.g. `(1, 1, 2, 2)`.
    pub entries: Vec<Group>,
    /// Time-power orders `k_i >= 1`.
    pub k: Vec<u32>,
    /// Moment powers `r_i >= 0`.
    pub r: Vec<u32>,
    /// Restriction interval `(s, t)` with `0 <= s < t < inf`.
    pub window: (f64, f64),
}

impl MomentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty()
            || self.entries.len() != self.k.len()
            || self.entries.len() != self.r.len()
        {
            return Err(Error::domain(format!(
                "entries/k/r must be nonempty and of equal length, got {}/{}/{}",
                self.entries.len(),
                self.k.len(),
                self.r.len()
            )));
        }
        if self.k.contains(&0) {
            return Err(Error::domain("time powers k_i must be >= 1".to_string()));
        }
        let (s, t) = self.window;
        if !(s >= 0.0 && s < t) || !t.is_finite() {
            return Err(Error::domain(format!(
                "restriction window needs 0 <= s < t < inf, got ({s}, {t})"
            )));
        }
        Ok(())
    }
}

/// Memoized table of `M_{u,t}^{(r)}` values on a quadrature grid, for fixed
/// entries and time powers.
///
/// Repeated entries collapse at the Laplace level:
/// `psi(r_1, ..., r_m) = psi(sum_{entries=1} r_i, sum_{entries=2} r_i)`.
pub struct MomentTable<'a> {
    psi: &'a dyn LaplaceExponent,
    entries: Vec<Group>,
    k: Vec<u32>,
    window: (f64, f64),
    nodes: Vec<f64>,
    values: RefCell<HashMap<Vec<u32>, Rc<Vec<f64>>>>,
    factors: RefCell<FactorCache>,
}

impl<'a> MomentTable<'a> {
    /// Builds the grid: `refine + 1` uniform nodes on `[s, t]` merged with
    /// the evaluator's interior breakpoints.
    pub fn new(
        psi: &'a dyn LaplaceExponent,
        entries: Vec<Group>,
        k: Vec<u32>,
        window: (f64, f64),
        refine: usize,
    ) -> Result<Self> {
        MomentSpec { entries: entries.clone(), k: k.clone(), r: vec![0; entries.len()], window }
            .validate()?;
        let refine = refine.max(8);
        let (s, t) = window;
        let mut nodes: Vec<f64> = (0..=refine)
            .map(|i| s + (t - s) * i as f64 / refine as f64)
            .collect();
        nodes.extend(psi.breakpoints(s, t));
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();
        Ok(Self {
            psi,
            entries,
            k,
            window,
            nodes,
            values: RefCell::new(HashMap::new()),
            factors: RefCell::new(HashMap::new()),
        })
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    fn collapse(&self, r: &[u32]) -> [u64; 2] {
        let mut out = [0u64; 2];
        for (entry, &ri) in self.entries.iter().zip(r) {
            out[entry.index()] += ri as u64;
        }
        out
    }

    fn factor_profile(
        &self,
        rc: [u64; 2],
        lc: [u64; 2],
    ) -> Result<Rc<crate::laplace::RatioProfile>> {
        if let Some(hit) = self.factors.borrow().get(&(rc, lc)) {
            return Ok(hit.clone());
        }
        let prof = Rc::new(self.psi.ratio_factors(rc, lc, &self.nodes)?);
        self.factors.borrow_mut().insert((rc, lc), prof.clone());
        Ok(prof)
    }

    /// `M_{u,t}^{(r)}` at every grid node, memoized.
    fn grid_values(&self, r: &[u32]) -> Result<Rc<Vec<f64>>> {
        if let Some(hit) = self.values.borrow().get(r) {
            return Ok(hit.clone());
        }
        let n = self.nodes.len();
        if r.iter().all(|&x| x == 0) {
            let ones = Rc::new(vec![1.0; n]);
            self.values.borrow_mut().insert(r.to_vec(), ones.clone());
            return Ok(ones);
        }

        let mut out = vec![0.0; n];
        let rc = self.collapse(r);
        for i in 0..r.len() {
            if r[i] == 0 {
                continue;
            }
            let mut child_r = r.to_vec();
            child_r[i] -= 1;
            let child = self.grid_values(&child_r)?;
            let prof = self.factor_profile(rc, self.collapse(&child_r))?;
            let coeff = (r[i] * self.k[i]) as f64;
            let pw = (self.k[i] - 1) as i32;
            // Backward cumulative trapezoid of
            //   g(u) = M_{u,t}^{(r-e_i)} e^{-(psi_u(r)-psi_u(r-e_i))} u^{k_i-1},
            // pairing right limits at the lower node with left limits at the
            // upper node so each panel sees a continuous integrand.
            let mut acc = KahanSum::new();
            for j in (0..n - 1).rev() {
                let h = self.nodes[j + 1] - self.nodes[j];
                let lo = child[j] * prof.right[j] * self.nodes[j].powi(pw);
                let hi = child[j + 1] * prof.left[j + 1] * self.nodes[j + 1].powi(pw);
                acc.add(0.5 * h * (lo + hi));
                out[j] += coeff * acc.value();
            }
        }
        debug_assert!(
            {
                let bound: f64 = self
                    .k
                    .iter()
                    .zip(r)
                    .map(|(&k, &ri)| self.window.1.powi((k * ri) as i32))
                    .product();
                out.iter().all(|&v| v >= 0.0 && v <= bound * (1.0 + 1e-9) + 1e-12)
            },
            "moment values must stay within [0, prod t^(k_i r_i)]"
        );
        let rc_vals = Rc::new(out);
        self.values.borrow_mut().insert(r.to_vec(), rc_vals.clone());
        Ok(rc_vals)
    }

    /// `M_{s,t}^{(r)}` for this table's window.
    pub fn moment(&self, r: &[u32]) -> Result<f64> {
        if r.len() != self.entries.len() {
            return Err(Error::domain(format!(
                "moment vector length {} does not match {} entries",
                r.len(),
                self.entries.len()
            )));
        }
        Ok(self.grid_values(r)?[0])
    }

    /// Dumps every memoized moment as `r1,..,rm,k1,..,km,s,t,value` rows.
    pub fn export_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        let m = self.entries.len();
        for i in 0..m {
            write!(w, "r{},", i + 1)?;
        }
        for i in 0..m {
            write!(w, "k{},", i + 1)?;
        }
        writeln!(w, "s,t,value")?;
        let mut keys: Vec<Vec<u32>> = self.values.borrow().keys().cloned().collect();
        keys.sort();
        let values = self.values.borrow();
        for key in keys {
            let v = values[&key][0];
            for ri in &key {
                write!(w, "{ri},")?;
            }
            for ki in &self.k {
                write!(w, "{ki},")?;
            }
            writeln!(w, "{},{},{v}", self.window.0, self.window.1)?;
        }
        Ok(())
    }
}

/// A coarse/fine table pair: every moment is evaluated on both grids,
/// checked for agreement, and Richardson-extrapolated (the trapezoid error
/// is `O(h^2)` per smooth segment, so `(4 fine - coarse) / 3` cancels the
/// leading term).
pub struct MomentPair<'a> {
    coarse: MomentTable<'a>,
    fine: MomentTable<'a>,
    refine: usize,
}

impl<'a> MomentPair<'a> {
    pub fn new(
        psi: &'a dyn LaplaceExponent,
        entries: Vec<Group>,
        k: Vec<u32>,
        window: (f64, f64),
        refine: usize,
    ) -> Result<Self> {
        let refine = refine.max(8);
        Ok(Self {
            coarse: MomentTable::new(psi, entries.clone(), k.clone(), window, refine)?,
            fine: MomentTable::new(psi, entries, k, window, refine * 2)?,
            refine,
        })
    }

    /// Extrapolated `M_{s,t}^{(r)}`; logs a grid-too-coarse warning when the
    /// two grids disagree beyond [`RICHARDSON_REL_TOL`].
    pub fn moment(&self, r: &[u32]) -> Result<f64> {
        let coarse = self.coarse.moment(r)?;
        let fine = self.fine.moment(r)?;
        if (fine - coarse).abs() > RICHARDSON_REL_TOL * fine.abs().max(f64::MIN_POSITIVE) {
            log::warn!(
                "moment grid may be too coarse at r={r:?}: G={} gives {coarse:.9e}, 2G gives {fine:.9e}",
                self.refine
            );
        }
        Ok(fine + (fine - coarse) / 3.0)
    }
}

/// `M_{s,t}^{(r)}` with the two-grid Richardson check and extrapolation.
pub fn mixed_moment(
    psi: &dyn LaplaceExponent,
    spec: &MomentSpec,
    refine: usize,
) -> Result<f64> {
    spec.validate()?;
    MomentPair::new(psi, spec.entries.clone(), spec.k.clone(), spec.window, refine)?
        .moment(&spec.r)
}

/// One term `a * (mu_{g,t}^{(k)})^rho` of a linear combination.
#[derive(Debug, Clone, Copy)]
pub struct LinearTerm {
    pub coefficient: f64,
    pub group: Group,
    pub k: u32,
    pub rho: u32,
}

/// Which difference functional a moment sequence describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    MeanDifference,
    VarianceDifference,
    Custom,
}

/// Moments `c^(1..N)` of a scalar functional of the RMST vector at one
/// horizon; `c^(0) = 1` is implicit.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionalMoments {
    pub functional: Functional,
    pub horizon: f64,
    pub values: Vec<f64>,
}

impl FunctionalMoments {
    pub fn order(&self) -> usize {
        self.values.len()
    }
}

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; parts];
    fn rec(total: u32, idx: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if idx == current.len() - 1 {
            current[idx] = total;
            out.push(current.clone());
            return;
        }
        for v in 0..=total {
            current[idx] = v;
            rec(total - v, idx + 1, current, out);
        }
    }
    rec(total, 0, &mut current, &mut out);
    out
}

/// `E[(sum_l a_l (mu_{g_l,t}^{(k_l)})^{rho_l})^n]` via the multinomial
/// expansion into mixed moments.
///
/// When the coefficients sum to exactly zero (difference functionals), the
/// expansion is recentred with a reference moment so that exchangeable
/// configurations cancel exactly instead of leaving rounding residue.
pub fn linear_combination_moment(
    psi: &dyn LaplaceExponent,
    terms: &[LinearTerm],
    n: u32,
    window: (f64, f64),
    refine: usize,
    cap: usize,
) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::domain("linear combination needs at least one term".to_string()));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let m = terms.len();
    let needed = binomial((n as u64) + m as u64 - 1, m as u64 - 1);
    if needed > cap as f64 {
        return Err(Error::CombinatorialCap { needed: needed as usize, cap });
    }
    let entries: Vec<Group> = terms.iter().map(|t| t.group).collect();
    let k: Vec<u32> = terms.iter().map(|t| t.k).collect();
    let table = MomentPair::new(psi, entries, k, window, refine)?;

    let combos = compositions(n, m);
    let moment_for = |l: &[u32]| -> Result<f64> {
        let r: Vec<u32> = l.iter().zip(terms).map(|(&li, t)| li * t.rho).collect();
        table.moment(&r)
    };

    let coeff_sum: f64 = terms.iter().map(|t| t.coefficient).sum();
    let reference = if coeff_sum == 0.0 {
        // Any fixed moment works as the recentring constant; the mid
        // composition keeps magnitudes comparable.
        moment_for(&combos[combos.len() / 2])?
    } else {
        0.0
    };

    let mut acc = KahanSum::new();
    for l in &combos {
        let mut weight = multinomial(&l.iter().map(|&x| x as u64).collect::<Vec<_>>());
        for (li, t) in l.iter().zip(terms) {
            weight *= t.coefficient.powi(*li as i32);
        }
        if weight == 0.0 {
            continue;
        }
        acc.add(weight * (moment_for(l)? - reference));
    }
    if coeff_sum != 0.0 {
        acc.add(reference * coeff_sum.powi(n as i32));
    }
    Ok(acc.value())
}

/// Moments of order `1..=max_order` of `mu_{1,t} - mu_{2,t}`:
/// `c_n = sum_l (-1)^l C(n,l) M_t^{(n-l, l)}(xi; (1,1))`.
pub fn mean_difference_moments(
    psi: &dyn LaplaceExponent,
    t: f64,
    max_order: u32,
    refine: usize,
) -> Result<FunctionalMoments> {
    let table =
        MomentPair::new(psi, vec![Group::One, Group::Two], vec![1, 1], (0.0, t), refine)?;
    let mut values = Vec::with_capacity(max_order as usize);
    for n in 1..=max_order {
        let reference = table.moment(&[n - n / 2, n / 2])?;
        let mut acc = KahanSum::new();
        for l in 0..=n {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            let m = table.moment(&[n - l, l])?;
            acc.add(sign * binomial(n as u64, l as u64) * (m - reference));
        }
        values.push(acc.value());
    }
    Ok(FunctionalMoments { functional: Functional::MeanDifference, horizon: t, values })
}

/// Moments of order `1..=max_order` of `sigma^2_{1,t} - sigma^2_{2,t}` over
/// the entry vector `(xi_1, xi_1, xi_2, xi_2)` with time powers `(2,1,2,1)`:
/// the composition `l` contributes sign `(-1)^{l_2+l_3}` and moment vector
/// `(l_1, 2 l_2, l_3, 2 l_4)`.
pub fn variance_difference_moments(
    psi: &dyn LaplaceExponent,
    t: f64,
    max_order: u32,
    refine: usize,
) -> Result<FunctionalMoments> {
    let entries = vec![Group::One, Group::One, Group::Two, Group::Two];
    let table = MomentPair::new(psi, entries, vec![2, 1, 2, 1], (0.0, t), refine)?;
    let mut values = Vec::with_capacity(max_order as usize);
    for n in 1..=max_order {
        let combos = compositions(n, 4);
        let moment_for = |l: &[u32]| -> Result<f64> {
            table.moment(&[l[0], 2 * l[1], l[2], 2 * l[3]])
        };
        let reference = moment_for(&combos[combos.len() / 2])?;
        let mut acc = KahanSum::new();
        for l in &combos {
            let sign = if (l[1] + l[2]) % 2 == 0 { 1.0 } else { -1.0 };
            let weight = multinomial(&l.iter().map(|&x| x as u64).collect::<Vec<_>>());
            acc.add(sign * weight * (moment_for(l)? - reference));
        }
        values.push(acc.value());
    }
    Ok(FunctionalMoments { functional: Functional::VarianceDifference, horizon: t, values })
}

fn correlation_from(cov: f64, var1: f64, var2: f64, what: &str) -> Result<f64> {
    if !(var1 > 0.0) || !(var2 > 0.0) {
        return Err(Error::DegenerateVariance(format!(
            "{what} needs positive marginal variances, got ({var1:.3e}, {var2:.3e})"
        )));
    }
    let corr = cov / (var1 * var2).sqrt();
    if corr.abs() > 1.0 + 1e-6 {
        log::warn!("{what} outside [-1, 1] by more than 1e-6: {corr}");
    }
    Ok(corr.clamp(-1.0, 1.0))
}

/// `Corr(mu_{1,t}, mu_{2,t})`.
pub fn rmst_correlation(psi: &dyn LaplaceExponent, t: f64, refine: usize) -> Result<f64> {
    let table =
        MomentPair::new(psi, vec![Group::One, Group::Two], vec![1, 1], (0.0, t), refine)?;
    let m11 = table.moment(&[1, 1])?;
    let m1 = [table.moment(&[1, 0])?, table.moment(&[0, 1])?];
    let m2 = [table.moment(&[2, 0])?, table.moment(&[0, 2])?];
    correlation_from(
        m11 - m1[0] * m1[1],
        m2[0] - m1[0] * m1[0],
        m2[1] - m1[1] * m1[1],
        "RMST correlation",
    )
}

/// `Corr(sigma^2_{1,t}, sigma^2_{2,t})` from the closed moment combination.
pub fn variance_correlation(psi: &dyn LaplaceExponent, t: f64, refine: usize) -> Result<f64> {
    let both = |k: Vec<u32>, r: [u32; 2]| -> Result<f64> {
        MomentPair::new(psi, vec![Group::One, Group::Two], k, (0.0, t), refine)?
            .moment(&[r[0], r[1]])
    };
    let single = |g: Group, k: u32, r: u32| -> Result<f64> {
        MomentPair::new(psi, vec![g], vec![k], (0.0, t), refine)?.moment(&[r])
    };
    // E[sigma^2_i] = M^(1)(xi_i; 2) - M^(2)(xi_i; 1).
    let e1 = single(Group::One, 2, 1)? - single(Group::One, 1, 2)?;
    let e2 = single(Group::Two, 2, 1)? - single(Group::Two, 1, 2)?;
    // E[sigma^2_1 sigma^2_2] expanded into four mixed moments.
    let cross = both(vec![2, 2], [1, 1])? - both(vec![2, 1], [1, 2])?
        - both(vec![1, 2], [2, 1])?
        + both(vec![1, 1], [2, 2])?;
    let var = |g: Group, e: f64| -> Result<f64> {
        let repeated =
            MomentPair::new(psi, vec![g, g], vec![2, 1], (0.0, t), refine)?.moment(&[1, 2])?;
        Ok(single(g, 2, 2)? - 2.0 * repeated + single(g, 1, 4)? - e * e)
    };
    correlation_from(
        cross - e1 * e2,
        var(Group::One, e1)?,
        var(Group::Two, e2)?,
        "variance correlation",
    )
}
