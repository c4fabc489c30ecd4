//! Bayesian nonparametric comparison of survival experiences across two
//! samples via restricted mean survival times.
//!
//! The prior on the pair of survival functions is a compound Beta-Stacy
//! neutral-to-the-right process: a Log-Beta directing Lévy measure whose
//! jumps are shared between groups according to a categorical score
//! distribution, optionally switching at a time threshold. Posterior
//! Laplace exponents are available in closed form, restricted mixed moments
//! of the induced RMST vector follow from a one-dimensional integral
//! recursion, and posterior densities of RMST differences come out of a
//! discrete maximum-entropy solve with highest-posterior-density summaries.
//!
//! ```
//! use betastacy::maxent::{algorithm1, Algorithm1Config};
//! use betastacy::moments::Functional;
//! use betastacy::posterior::PosteriorLaplace;
//! use betastacy::prior::{
//!     Baseline, CompoundPriorSpec, Group, LogBetaDirecting, Score, ScoreDistribution,
//! };
//! use betastacy::{Observation, SurvivalDataset};
//!
//! # fn main() -> betastacy::Result<()> {
//! // Half the prior jump mass is shared between the two samples.
//! let spec = CompoundPriorSpec::new(
//!     LogBetaDirecting::new(1.0, Baseline::exponential(0.3)?)?,
//!     Score::Single(ScoreDistribution::new([0.5, 0.25, 0.25])?),
//! );
//! let data = SurvivalDataset::new(vec![
//!     Observation::new(2.0, true, Group::One)?,
//!     Observation::new(3.5, false, Group::One)?,
//!     Observation::new(1.2, true, Group::Two)?,
//!     Observation::new(4.0, true, Group::Two)?,
//! ])?;
//!
//! let post = PosteriorLaplace::new(&spec, &data);
//! let s1 = post.posterior_survival(Group::One, 2.5)?;
//! assert!(s1 > 0.0 && s1 < 1.0);
//!
//! // Posterior density and 95% HPD interval of the RMST difference
//! // mu_{1,5} - mu_{2,5}.
//! let mut cfg = Algorithm1Config::new(Functional::MeanDifference, 5.0);
//! cfg.moments = betastacy::maxent::MomentsChoice::Fixed(4);
//! cfg.refine = 128;
//! let out = algorithm1(&post, &cfg)?;
//! assert!(out.hpd.mass >= 0.95);
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod laplace;
pub mod maxent;
pub mod moments;
pub mod numeric;
pub mod posterior;
pub mod prior;
pub mod sim;

pub use data::{KmCurve, Observation, SurvivalDataset};
pub use error::{Error, Result};
pub use laplace::{LaplaceExponent, RatioProfile};
pub use maxent::{HpdRegion, MaxEntDensity, Mesh};
pub use moments::{FunctionalMoments, MomentSpec, MomentTable};
pub use posterior::{fit_map, marginal_log_likelihood, FitGrid, HyperFit, PosteriorLaplace};
pub use prior::{
    Baseline, CompoundPriorSpec, Group, LogBetaDirecting, PriorConfig, Score,
    ScoreDistribution, StratifiedScore,
};
pub use sim::{ScenarioSpec, TruthOracle};
