//! Discrete maximum-entropy densities under moment constraints, plus
//! highest-posterior-density regions and the end-to-end pipeline from a
//! Laplace exponent to a density of an RMST difference functional.
//!
//! The solution of `max H(p)` subject to `E[X^k] = c^(k)` on a mesh is the
//! exponential family `p_i ∝ exp(sum_k lambda_k u_i^k)`; the dual is smooth
//! and strictly convex, and a damped Newton iteration on the multipliers
//! converges fast. Raw power moments on wide meshes are badly conditioned,
//! so the mesh is affinely rescaled to `[-1, 1]` and the input moments are
//! transformed to match before solving.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::laplace::LaplaceExponent;
use crate::moments::{
    mean_difference_moments, variance_difference_moments, Functional, FunctionalMoments,
};
use crate::numeric::{binomial, KahanSum};

const MAX_NEWTON_ITERATIONS: usize = 200;
const RESIDUAL_TOL: f64 = 1e-8;
/// Newton keeps polishing past the acceptance gate until it stalls here;
/// wide meshes amplify rescaled residuals by `(half-width)^N` when mapped
/// back to raw moment units.
const POLISH_TOL: f64 = 1e-13;
const LAMBDA_DIVERGENCE: f64 = 1e6;

/// Strictly increasing evaluation points `x_1 < ... < x_m`, `m >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh {
    points: Vec<f64>,
}

impl Mesh {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::domain("mesh needs at least two points".to_string()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) || points.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("mesh points must be finite and strictly increasing".to_string()));
        }
        Ok(Self { points })
    }

    pub fn equidistant(count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count < 2 || !(lo < hi) {
            return Err(Error::domain(format!(
                "equidistant mesh needs count >= 2 and lo < hi, got {count}, [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (count - 1) as f64;
        Self::new((0..count).map(|i| lo + step * i as f64).collect())
    }

    /// Default rule: centre on the first moment with half-width six standard
    /// deviations (Chebyshev covers at least 1 - 1/36 of the mass).
    pub fn from_first_two_moments(c1: f64, c2: f64, count: usize) -> Result<Self> {
        let var = c2 - c1 * c1;
        if !(var > 0.0) {
            return Err(Error::InfeasibleMoments(format!(
                "second moment {c2} is not above the squared mean {}",
                c1 * c1
            )));
        }
        let half = 6.0 * var.sqrt();
        Self::equidistant(count, c1 - half, c1 + half)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell width attributed to point `j` when converting masses to density
    /// heights: `x_j - x_{j-1}`, with the first point borrowing the first
    /// gap.
    fn width(&self, j: usize) -> f64 {
        if j == 0 {
            self.points[1] - self.points[0]
        } else {
            self.points[j] - self.points[j - 1]
        }
    }
}

/// A solved max-ent distribution on a mesh.
#[derive(Debug, Clone, Serialize)]
pub struct MaxEntDensity {
    pub mesh: Mesh,
    /// Point masses, nonnegative, summing to one.
    pub p: Vec<f64>,
    /// Dual multipliers in the rescaled coordinates.
    pub lambda: Vec<f64>,
    /// Final constraint residuals (rescaled moments).
    pub residuals: Vec<f64>,
    /// Shannon entropy of `p`.
    pub entropy: f64,
    pub iterations: usize,
}

impl MaxEntDensity {
    /// Raw-unit moment `E[X^k]` of the solved distribution.
    pub fn moment(&self, k: u32) -> f64 {
        let mut acc = KahanSum::new();
        for (x, p) in self.mesh.points().iter().zip(&self.p) {
            acc.add(p * x.powi(k as i32));
        }
        acc.value()
    }

    /// Density heights `p_j / (x_j - x_{j-1})` per mesh point; the first
    /// point remains a boundary atom and borrows the first gap for ranking
    /// purposes.
    pub fn density_heights(&self) -> Vec<f64> {
        (0..self.p.len()).map(|j| self.p[j] / self.mesh.width(j)).collect()
    }

    /// Piecewise-constant density on `(x_{j-1}, x_j]` cells, `j >= 2`.
    /// Together with the `p_1` atom at `x_1` the masses sum to one.
    pub fn density_cells(&self) -> Vec<DensityCell> {
        (1..self.p.len())
            .map(|j| DensityCell {
                lo: self.mesh.points()[j - 1],
                hi: self.mesh.points()[j],
                height: self.p[j] / self.mesh.width(j),
            })
            .collect()
    }

    /// Mass of the boundary atom at `x_1` not covered by the cells.
    pub fn boundary_atom(&self) -> f64 {
        self.p[0]
    }

    /// Total probability: boundary atom plus integrated cells; one by
    /// construction.
    pub fn total_mass(&self) -> f64 {
        let mut acc = KahanSum::new();
        acc.add(self.boundary_atom());
        for c in self.density_cells() {
            acc.add(c.height * (c.hi - c.lo));
        }
        acc.value()
    }

    /// `P(|X| > c)` on the mesh.
    pub fn tail_mass_abs(&self, c: f64) -> f64 {
        let mut acc = KahanSum::new();
        for (x, p) in self.mesh.points().iter().zip(&self.p) {
            if x.abs() > c {
                acc.add(*p);
            }
        }
        acc.value()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DensityCell {
    pub lo: f64,
    pub hi: f64,
    pub height: f64,
}

/// Rescaled mesh and transformed moments: `u = (x - centre) / half`.
struct Rescaled {
    u: Vec<f64>,
    mu: Vec<f64>,
}

fn rescale(mesh: &Mesh, moments: &[f64]) -> Result<Rescaled> {
    let pts = mesh.points();
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let u: Vec<f64> = pts.iter().map(|x| (x - centre) / half).collect();

    // E[u^k] = h^{-k} sum_j C(k, j) (-centre)^{k-j} E[x^j] with E[x^0] = 1.
    let mut raw = vec![1.0];
    raw.extend_from_slice(moments);
    let mut mu = Vec::with_capacity(moments.len());
    for k in 1..=moments.len() {
        let mut acc = KahanSum::new();
        for (j, raw_j) in raw.iter().enumerate().take(k + 1) {
            acc.add(binomial(k as u64, j as u64) * (-centre).powi((k - j) as i32) * raw_j);
        }
        mu.push(acc.value() / half.powi(k as i32));
    }
    Ok(Rescaled { u, mu })
}

/// Maximizes Shannon entropy on the mesh subject to `E[X^k] = moments[k-1]`
/// for `k = 1..=N`, via damped Newton on the strictly convex dual.
pub fn solve_maxent(mesh: &Mesh, moments: &[f64]) -> Result<MaxEntDensity> {
    let n_constraints = moments.len();
    if n_constraints == 0 {
        return Err(Error::domain("need at least one moment constraint".to_string()));
    }
    if moments.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("moment constraints must be finite".to_string()));
    }
    let pts = mesh.points();
    if moments[0] <= pts[0] || moments[0] >= pts[pts.len() - 1] {
        return Err(Error::InfeasibleMoments(format!(
            "mean {} lies outside the mesh hull [{}, {}]",
            moments[0],
            pts[0],
            pts[pts.len() - 1]
        )));
    }
    if n_constraints >= 2 && moments[1] <= moments[0] * moments[0] {
        return Err(Error::InfeasibleMoments(format!(
            "second moment {} is below the squared mean {}",
            moments[1],
            moments[0] * moments[0]
        )));
    }
    let Rescaled { u, mu } = rescale(mesh, moments)?;
    if mu.iter().any(|m| m.abs() > 1.0) {
        return Err(Error::InfeasibleMoments(
            "a rescaled moment exceeds 1 in absolute value; impossible on the mesh hull".into(),
        ));
    }

    let m = u.len();
    // powers[i][k] = u_i^k for k = 0..=2N (Hessian needs up to 2N).
    let maxpow = 2 * n_constraints;
    let mut powers = vec![vec![1.0f64; maxpow + 1]; m];
    for (i, &ui) in u.iter().enumerate() {
        for k in 1..=maxpow {
            powers[i][k] = powers[i][k - 1] * ui;
        }
    }

    let distribution = |lambda: &DVector<f64>| -> Vec<f64> {
        let mut q: Vec<f64> = (0..m)
            .map(|i| (1..=n_constraints).map(|k| lambda[k - 1] * powers[i][k]).sum())
            .collect();
        let qmax = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = KahanSum::new();
        for qi in q.iter_mut() {
            *qi = (*qi - qmax).exp();
            z.add(*qi);
        }
        let z = z.value();
        q.iter().map(|w| w / z).collect()
    };

    let gradient = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(
            n_constraints,
            (1..=n_constraints).map(|k| {
                let mut e = KahanSum::new();
                for i in 0..m {
                    e.add(p[i] * powers[i][k]);
                }
                e.value() - mu[k - 1]
            }),
        )
    };

    let mut lambda = DVector::zeros(n_constraints);
    let mut p = distribution(&lambda);
    let mut grad = gradient(&p);
    let mut iterations = 0usize;
    while grad.amax() > POLISH_TOL {
        if iterations >= MAX_NEWTON_ITERATIONS {
            if grad.amax() <= RESIDUAL_TOL {
                break;
            }
            return Err(Error::NonConvergence { residual: grad.amax(), iterations });
        }
        iterations += 1;

        // Hessian: covariance of the rescaled powers under p.
        let mut ex = vec![0.0; maxpow + 1];
        for (k, e) in ex.iter_mut().enumerate() {
            let mut acc = KahanSum::new();
            for i in 0..m {
                acc.add(p[i] * powers[i][k]);
            }
            *e = acc.value();
        }
        let mut hess = DMatrix::zeros(n_constraints, n_constraints);
        for j in 1..=n_constraints {
            for k in 1..=n_constraints {
                hess[(j - 1, k - 1)] = ex[j + k] - ex[j] * ex[k];
            }
        }
        for d in 0..n_constraints {
            hess[(d, d)] += 1e-13;
        }
        let step = hess
            .clone()
            .lu()
            .solve(&(-&grad))
            .ok_or_else(|| Error::NonConvergence { residual: grad.amax(), iterations })?;

        // Halve the step until the residual does not increase.
        let current = grad.amax();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &lambda + scale * &step;
            let tp = distribution(&trial);
            let tg = gradient(&tp);
            if tg.amax() < current {
                lambda = trial;
                p = tp;
                grad = tg;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // Stalling below the gate is rounding-limited convergence.
            if current <= RESIDUAL_TOL {
                break;
            }
            return Err(Error::NonConvergence { residual: current, iterations });
        }
        if lambda.amax() > LAMBDA_DIVERGENCE {
            return Err(Error::InfeasibleMoments(format!(
                "dual multipliers diverged (|lambda| > {LAMBDA_DIVERGENCE:.0e}); \
                 the moment vector is infeasible on this mesh"
            )));
        }
    }

    let entropy = -p
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum::<f64>();
    Ok(MaxEntDensity {
        mesh: mesh.clone(),
        residuals: grad.iter().copied().collect(),
        lambda: lambda.iter().copied().collect(),
        entropy,
        iterations,
        p,
    })
}

/// Highest-posterior-density region at a coverage level.
#[derive(Debug, Clone, Serialize)]
pub struct HpdRegion {
    pub level: f64,
    /// Disjoint sorted intervals `[lo, hi]` of mesh points.
    pub intervals: Vec<[f64; 2]>,
    /// Probability mass actually attained (>= level).
    pub mass: f64,
}

impl HpdRegion {
    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|iv| iv[0] <= x && x <= iv[1])
    }
}

/// Greedy Hyndman-style HPD: rank mesh points by density height, accumulate
/// mass to the level, and report maximal runs of selected points.
pub fn hpd(density: &MaxEntDensity, level: f64) -> Result<HpdRegion> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::domain(format!("HPD level must lie in (0, 1), got {level}")));
    }
    let heights = density.density_heights();
    let mut order: Vec<usize> = (0..heights.len()).collect();
    // Ties break toward lower x (stable sort on descending height).
    order.sort_by(|&a, &b| heights[b].partial_cmp(&heights[a]).unwrap());
    let mut selected = vec![false; heights.len()];
    let mut mass = 0.0;
    for &idx in &order {
        if mass >= level {
            break;
        }
        selected[idx] = true;
        mass += density.p[idx];
    }
    let pts = density.mesh.points();
    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=selected.len() {
        let inside = i < selected.len() && selected[i];
        match (run_start, inside) {
            (None, true) => run_start = Some(i),
            (Some(s), false) => {
                intervals.push([pts[s], pts[i - 1]]);
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(HpdRegion { level, intervals, mass })
}

/// Moment-count policy for the density pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentsChoice {
    Fixed(u32),
    /// Increase `N` until densities with `N` and `N-1` constraints differ by
    /// less than `sup_tol` in supremum norm over mesh points in
    /// `[0, horizon]`; hard-capped at `cap`.
    Adaptive { sup_tol: f64, cap: u32 },
}

impl Default for MomentsChoice {
    fn default() -> Self {
        MomentsChoice::Fixed(6)
    }
}

/// Configuration for the full density-estimation pipeline.
#[derive(Debug, Clone)]
pub struct Algorithm1Config {
    pub functional: Functional,
    pub horizon: f64,
    /// Explicit mesh, or `None` for the first-two-moments default rule.
    pub mesh: Option<Mesh>,
    /// Point count for the default mesh rule.
    pub mesh_points: usize,
    pub moments: MomentsChoice,
    pub level: f64,
    /// Uniform refinement of the moment-recursion grid.
    pub refine: usize,
}

impl Algorithm1Config {
    pub fn new(functional: Functional, horizon: f64) -> Self {
        Self {
            functional,
            horizon,
            mesh: None,
            mesh_points: 600,
            moments: MomentsChoice::default(),
            level: 0.95,
            refine: crate::moments::DEFAULT_REFINE,
        }
    }
}

/// Output of the pipeline: the moments used, the solved density, its HPD
/// region, and the number of constraints actually imposed.
#[derive(Debug, Clone)]
pub struct Algorithm1Output {
    pub moments: FunctionalMoments,
    pub density: MaxEntDensity,
    pub hpd: HpdRegion,
    pub n_used: u32,
}

/// Moment computation, max-ent solve, and HPD extraction for a difference
/// functional of the RMST vector under `psi`.
pub fn algorithm1(psi: &dyn LaplaceExponent, cfg: &Algorithm1Config) -> Result<Algorithm1Output> {
    let max_order = match cfg.moments {
        MomentsChoice::Fixed(n) => n,
        MomentsChoice::Adaptive { cap, .. } => cap,
    };
    if max_order == 0 {
        return Err(Error::domain("need at least one moment constraint".to_string()));
    }
    let all_moments = match cfg.functional {
        Functional::MeanDifference => {
            mean_difference_moments(psi, cfg.horizon, max_order, cfg.refine)?
        }
        Functional::VarianceDifference => {
            variance_difference_moments(psi, cfg.horizon, max_order, cfg.refine)?
        }
        Functional::Custom => {
            return Err(Error::domain(
                "algorithm1 drives mean or variance differences; compose custom \
                 functionals through linear_combination_moment",
            ))
        }
    };
    let c1 = all_moments.values[0];
    let c2 = all_moments.values.get(1).copied().unwrap_or(c1 * c1);
    let degenerate = c2 - c1 * c1 <= 1e-13 * c1.mul_add(c1, 1.0);
    let mesh = match &cfg.mesh {
        Some(m) => m.clone(),
        None => {
            if degenerate {
                // Exchangeable configurations have an a.s.-constant
                // difference; a zero-width moment rule would be ill-posed.
                Mesh::equidistant(cfg.mesh_points, c1 - 1e-3, c1 + 1e-3)?
            } else {
                Mesh::from_first_two_moments(c1, c2, cfg.mesh_points)?
            }
        }
    };
    if degenerate {
        let density = point_mass_on_mesh(&mesh, c1);
        let region = hpd(&density, cfg.level)?;
        let n_used = match cfg.moments {
            MomentsChoice::Fixed(n) => n,
            MomentsChoice::Adaptive { .. } => 1,
        };
        let mut moments = all_moments;
        moments.values.truncate(n_used as usize);
        return Ok(Algorithm1Output { moments, density, hpd: region, n_used });
    }

    let solve_n = |n: u32| -> Result<MaxEntDensity> {
        solve_maxent(&mesh, &all_moments.values[..n as usize])
    };

    let (density, n_used) = match cfg.moments {
        MomentsChoice::Fixed(n) => (solve_n(n)?, n),
        MomentsChoice::Adaptive { sup_tol, cap } => {
            let mut previous = solve_n(1)?;
            let mut chosen = None;
            for n in 2..=cap {
                let current = solve_n(n)?;
                let sup = sup_norm_on_window(&previous, &current, 0.0, cfg.horizon);
                if sup < sup_tol {
                    chosen = Some((current, n));
                    break;
                }
                previous = current;
            }
            match chosen {
                Some(hit) => hit,
                None => {
                    log::warn!("adaptive moment rule hit the cap N={cap} without stabilizing");
                    (previous, cap)
                }
            }
        }
    };
    let region = hpd(&density, cfg.level)?;
    let mut moments = all_moments;
    moments.values.truncate(n_used as usize);
    Ok(Algorithm1Output { moments, density, hpd: region, n_used })
}

/// A point mass at `location`, split across the two bracketing mesh points
/// so the mean is preserved exactly.
fn point_mass_on_mesh(mesh: &Mesh, location: f64) -> MaxEntDensity {
    let pts = mesh.points();
    let mut p = vec![0.0; pts.len()];
    let j = pts.partition_point(|&x| x < location).clamp(1, pts.len() - 1);
    let (lo, hi) = (pts[j - 1], pts[j]);
    let w = ((location - lo) / (hi - lo)).clamp(0.0, 1.0);
    p[j - 1] = 1.0 - w;
    p[j] = w;
    let entropy = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    MaxEntDensity {
        mesh: mesh.clone(),
        p,
        lambda: Vec::new(),
        residuals: Vec::new(),
        entropy,
        iterations: 0,
    }
}

/// Supremum over mesh points in `[lo, hi]` of the density-height difference;
/// falls back to the whole mesh when the window misses it entirely.
fn sup_norm_on_window(a: &MaxEntDensity, b: &MaxEntDensity, lo: f64, hi: f64) -> f64 {
    let ha = a.density_heights();
    let hb = b.density_heights();
    let mut sup: f64 = 0.0;
    let mut any = false;
    for (i, x) in a.mesh.points().iter().enumerate() {
        if lo <= *x && *x <= hi {
            sup = sup.max((ha[i] - hb[i]).abs());
            any = true;
        }
    }
    if any {
        sup
    } else {
        ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}
