//! Multilevel Monte Carlo estimation of risk measures.
//!
//! The central object is the parametric expectation
//! `Φ(θ) = E[θ + (Q − θ)⁺ / (1 − τ)]` of a scalar quantity of interest `Q`.
//! Its minimiser is the Value-at-Risk `q_τ`, its minimum the
//! Conditional-Value-at-Risk `c_τ`, and its first two derivatives give the
//! distribution function and density of `Q`. `Φ` is estimated at a handful
//! of nodes with a multilevel Monte Carlo hierarchy, interpolated by a cubic
//! spline, and the whole pipeline is tuned to a mean-squared-error tolerance
//! by a continuation algorithm ([`tuning::cmlmc_run`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod errors;
pub mod estimator;
pub mod hierarchy;
pub mod kde;
pub mod models;
pub mod risk;
pub mod spline;
pub mod tuning;

pub use error::{Error, Result};
pub use errors::{ErrorReport, LevelStats, MseParts};
pub use estimator::{phi_of, PhiEstimate};
pub use hierarchy::{CorrelatedPair, CostModel, Hierarchy, LevelSamples, Model, Sampler};
pub use kde::KdeModel;
pub use models::{BlackScholesModel, PoissonModel};
pub use risk::RiskReport;
pub use spline::{SplineCurve, ThetaGrid};
pub use tuning::{cmlmc_run, CmlmcConfig, IterationRecord, RateModel, RunResult, StatisticKind, ToleranceBudget};
