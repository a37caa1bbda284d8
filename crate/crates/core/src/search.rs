//! Selection of the number of Erlang components and the shape vector:
//! backward deletion of the smallest-shape component while an information
//! criterion improves, a ±1 shape hill-climb on the log-likelihood, and an
//! outer sweep over spread factors.

use rayon::prelude::*;

use crate::data::CensoredObservation;
use crate::em::{
    fit_from, initialize_with, start_values, CaseSets, FitConfig, FitReport, StartValues,
};
use crate::error::{Error, Result};

/// Structure-search configuration; the per-candidate fitting controls,
/// `m_init`, the spread grid and the criterion all live in the embedded
/// [`FitConfig`].
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub fit: FitConfig,
    /// Cap on worker threads for the spread-factor sweep; `None` uses the
    /// global pool.
    pub threads: Option<usize>,
}

impl SearchConfig {
    pub fn new(fit: FitConfig) -> Self {
        SearchConfig { fit, threads: None }
    }
}

/// Fit one candidate shape vector from a fresh initialization. Warm-starting
/// at the incumbent's parameters looks tempting but stalls: those parameters
/// sit near a stationary point of the *previous* shapes, where the relative
/// log-likelihood stopping rule fires before the new structure can move.
fn fit_candidate(
    sets: &CaseSets,
    aux: &StartValues,
    cfg: &FitConfig,
    spread: f64,
    shapes: &[u32],
) -> Result<FitReport> {
    let start = initialize_with(aux, cfg, spread, Some(shapes))?;
    fit_from(sets, cfg, start, spread)
}

/// Backward reduction: delete the smallest-shape component, refit with the
/// remaining shapes fixed, and keep the deletion while the criterion strictly
/// decreases (or until a single component remains).
pub fn reduce_components(
    obs: &[CensoredObservation],
    cfg: &FitConfig,
    start: FitReport,
) -> Result<FitReport> {
    let sets = CaseSets::classify(obs, cfg.t_lower, cfg.t, cfg.upper)?;
    let aux = start_values(obs, &sets, cfg)?;
    reduce_components_inner(&sets, &aux, cfg, start)
}

pub(crate) fn reduce_components_inner(
    sets: &CaseSets,
    aux: &StartValues,
    cfg: &FitConfig,
    mut best: FitReport,
) -> Result<FitReport> {
    while best.chosen.m > 1 {
        let shapes = best.model.body.shapes[1..].to_vec();
        match fit_candidate(sets, aux, cfg, best.chosen.spread, &shapes) {
            Ok(rep) if rep.ic_value(cfg.ic) < best.ic_value(cfg.ic) => best = rep,
            _ => break,
        }
    }
    Ok(best)
}

/// ±1 shape adjustment: for each component in ascending shape order, try both
/// neighbors that keep the shape vector strictly increasing, refit, and
/// accept the better move when it raises the log-likelihood. Passes repeat
/// until none is accepted.
pub fn adjust_shapes(
    obs: &[CensoredObservation],
    cfg: &FitConfig,
    start: FitReport,
) -> Result<FitReport> {
    let sets = CaseSets::classify(obs, cfg.t_lower, cfg.t, cfg.upper)?;
    let aux = start_values(obs, &sets, cfg)?;
    adjust_shapes_inner(&sets, &aux, cfg, start)
}

pub(crate) fn adjust_shapes_inner(
    sets: &CaseSets,
    aux: &StartValues,
    cfg: &FitConfig,
    mut best: FitReport,
) -> Result<FitReport> {
    for _pass in 0..100 {
        let mut moved = false;
        for j in 0..best.chosen.m {
            let shapes = best.model.body.shapes.clone();
            let mut candidates: Vec<FitReport> = Vec::with_capacity(2);
            for delta in [1i64, -1] {
                let proposal = shapes[j] as i64 + delta;
                if proposal < 1 {
                    continue;
                }
                let proposal = proposal as u32;
                let below_ok = j == 0 || shapes[j - 1] < proposal;
                let above_ok = j + 1 == shapes.len() || proposal < shapes[j + 1];
                if !below_ok || !above_ok {
                    continue;
                }
                let mut new_shapes = shapes.clone();
                new_shapes[j] = proposal;
                if let Ok(rep) = fit_candidate(sets, aux, cfg, best.chosen.spread, &new_shapes) {
                    candidates.push(rep);
                }
            }
            if let Some(winner) = candidates
                .into_iter()
                .max_by(|a, b| a.loglik().partial_cmp(&b.loglik()).unwrap())
            {
                if winner.loglik() > best.loglik() {
                    best = winner;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(best)
}

impl FitReport {
    fn loglik(&self) -> f64 {
        -self.nll
    }
}

/// Full structure search: for each spread factor, initialize, fit, reduce the
/// component count, then interleave shape adjustment with further reduction
/// until neither changes the structure; the candidate with the lowest
/// criterion value wins.
pub fn search(obs: &[CensoredObservation], scfg: &SearchConfig) -> Result<FitReport> {
    let cfg = &scfg.fit;
    let sets = CaseSets::classify(obs, cfg.t_lower, cfg.t, cfg.upper)?;
    let aux = start_values(obs, &sets, cfg)?;

    let run = || -> Vec<(f64, Result<FitReport>)> {
        cfg.spread_factors
            .par_iter()
            .map(|&s| (s, search_one_spread(&sets, &aux, cfg, s)))
            .collect()
    };
    let outcomes: Vec<(f64, Result<FitReport>)> = match scfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let mut best: Option<FitReport> = None;
    let mut failures: Vec<String> = Vec::new();
    for (s, outcome) in outcomes {
        match outcome {
            Ok(rep) => {
                let better = match &best {
                    Some(b) => rep.ic_value(cfg.ic) < b.ic_value(cfg.ic),
                    None => true,
                };
                if better {
                    best = Some(rep);
                }
            }
            Err(e) => failures.push(format!("s={s}: {e}")),
        }
    }
    best.ok_or_else(|| {
        Error::Numerical(format!(
            "all spread candidates failed: {}",
            failures.join("; ")
        ))
    })
}

fn search_one_spread(
    sets: &CaseSets,
    aux: &StartValues,
    cfg: &FitConfig,
    s: f64,
) -> Result<FitReport> {
    let start = initialize_with(aux, cfg, s, None)?;
    let mut rep = fit_from(sets, cfg, start, s)?;
    rep = reduce_components_inner(sets, aux, cfg, rep)?;
    for _round in 0..50 {
        let shapes_before = rep.model.body.shapes.clone();
        rep = adjust_shapes_inner(sets, aux, cfg, rep)?;
        rep = reduce_components_inner(sets, aux, cfg, rep)?;
        if rep.model.body.shapes == shapes_before {
            break;
        }
    }
    Ok(rep)
}
