//! Spliced mixed-Erlang (body) / Pareto (tail) loss models.
//!
//! The crate fits the spliced model to interval-censored and truncated loss
//! data with an EM algorithm, selects the mixture structure with a backward
//! IC search, and computes risk measures (excess-loss premiums, VaR, TVaR)
//! and goodness-of-fit diagnostics from the fitted model.
//!
//! Entry points:
//! - [`model::SplicedModel`] — densities, CDF, quantiles, sampling, JSON.
//! - [`em::fit`] — EM fit for fixed mixture shapes.
//! - [`search::search`] — component-count / shape selection over spread factors.
//! - [`risk`], [`diagnostics`], [`evt`] — downstream analyses.

// `!(x > 0.0)` rejects NaN along with the out-of-range values; keep it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod em;
pub mod error;
pub mod evt;
pub mod model;
pub mod risk;
pub mod search;
pub mod solve;
pub mod special;

pub use data::{
    classify_case, parse_observations, CaseLabel, CensoredObservation, TurnbullEstimate,
};
pub use em::{fit, loglik, FitConfig, FitReport, InfoCriterion};
pub use error::{Error, Result};
pub use model::{MeParams, ParetoParams, SplicedModel, UpperBound};
pub use search::{search, SearchConfig};
