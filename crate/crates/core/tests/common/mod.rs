//! Shared oracles for the integration suites: adaptive quadrature, an
//! independent Kaplan-Meier implementation, censoring simulators and the
//! Danish fire dataset loader. Everything here is deliberately independent of
//! the library's own evaluation paths (no incomplete-gamma reuse).

#![allow(dead_code)]
#![allow(clippy::too_many_arguments)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splicefit::data::CensoredObservation;
use splicefit::model::{MeParams, SplicedModel, UpperBound};

// ---------------------------------------------------------------------------
// quadrature
// ---------------------------------------------------------------------------

fn simpson_panel(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_panel(fa, flm, fm, a, m);
    let right = simpson_panel(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature with a tolerance relative to the integral's
/// own magnitude, so that very small integrals still resolve.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    assert!(b > a);
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    // magnitude probe on a coarse grid
    let mut scale = 0.0f64;
    for i in 0..=32 {
        let x = a + (b - a) * i as f64 / 32.0;
        scale = scale.max(f(x).abs());
    }
    let whole = simpson_panel(fa, fm, fb, a, b);
    let tol = rel_tol * (scale * (b - a)).max(1e-300);
    adaptive_rec(&f, a, b, fa, fm, fb, whole, tol, 52)
}

// ---------------------------------------------------------------------------
// reference models
// ---------------------------------------------------------------------------

/// The published Danish-fire fitted model (printed parameter precision).
pub fn table1_model() -> SplicedModel {
    let body =
        MeParams::from_alphas(vec![0.938, 0.051, 0.011], vec![1, 6, 16], 0.811, 1.0, 17.0).unwrap();
    SplicedModel::new(0.976, body, 0.530, 1.0, 17.0, UpperBound::Infinite).unwrap()
}

/// Quantile of an *untruncated* mixed Erlang by bisection on its CDF.
pub fn untruncated_me_quantile(alphas: &[f64], shapes: &[u32], theta: f64, p: f64) -> f64 {
    let cdf = |x: f64| -> f64 {
        alphas
            .iter()
            .zip(shapes)
            .map(|(&a, &r)| a * splicefit::model::erlang_cdf(x, r, theta).unwrap())
            .sum()
    };
    let (mut lo, mut hi) = (0.0, theta * (*shapes.last().unwrap() as f64) * 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Ground-truth model for the parameter-recovery criterion: π = 0.9,
/// shapes (1, 4), θ = 1, γ = 0.5, t at the untruncated body's 0.9 quantile,
/// no upper truncation. Most weight sits on the shape-4 component, which
/// keeps θ well identified against the mixing weights.
pub fn recovery_truth() -> SplicedModel {
    let alphas = vec![0.3, 0.7];
    let shapes = vec![1u32, 4];
    let theta = 1.0;
    let t = untruncated_me_quantile(&alphas, &shapes, theta, 0.9);
    let body = MeParams::from_alphas(alphas, shapes, theta, 0.0, t).unwrap();
    SplicedModel::new(0.9, body, 0.5, 0.0, t, UpperBound::Infinite).unwrap()
}

// ---------------------------------------------------------------------------
// censoring simulators
// ---------------------------------------------------------------------------

/// Censor a fraction of the observations onto random inspection grids whose
/// origin and spacing are independent of the datum, so the coarsening is
/// noninformative and likelihood-based fits stay consistent.
pub fn apply_interval_censoring(
    xs: &[f64],
    frac: f64,
    grid_step: f64,
    t_lower: f64,
    big_t: f64,
    seed: u64,
) -> Vec<CensoredObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xs.iter()
        .map(|&x| {
            if rng.gen::<f64>() < frac {
                let h = grid_step * (0.5 + rng.gen::<f64>());
                let origin = h * rng.gen::<f64>();
                let k = ((x - origin) / h).floor();
                let l = (origin + k * h).max(t_lower);
                let u = (origin + (k + 1.0) * h).min(big_t);
                CensoredObservation::interval(l, u).unwrap()
            } else {
                CensoredObservation::exact(x)
            }
        })
        .collect()
}

/// Mixed censoring: interval widening, right censoring below the value, and
/// occasional left censoring, producing all five observation cases.
pub fn apply_mixed_censoring(
    xs: &[f64],
    t_lower: f64,
    big_t: f64,
    seed: u64,
) -> Vec<CensoredObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xs.iter()
        .map(|&x| {
            let roll: f64 = rng.gen();
            if roll < 0.15 {
                // right censoring at a uniform fraction of the value
                let c = (x * (0.4 + 0.55 * rng.gen::<f64>())).max(t_lower + 1e-9);
                CensoredObservation::interval(c, f64::INFINITY).unwrap()
            } else if roll < 0.30 {
                let l = (x * (1.0 - 0.4 * rng.gen::<f64>())).max(t_lower);
                let u = (x * (1.0 + 0.6 * rng.gen::<f64>())).min(big_t);
                CensoredObservation::interval(l, u).unwrap()
            } else if roll < 0.35 {
                // left censoring: only the upper bound observed
                let u = (x * (1.0 + 0.2 * rng.gen::<f64>())).min(big_t);
                CensoredObservation::interval(t_lower, u).unwrap()
            } else {
                CensoredObservation::exact(x)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Kaplan-Meier oracle
// ---------------------------------------------------------------------------

/// Product-limit CDF at each death time, for right-censored-only data
/// (exact observations are deaths, `(c, ∞)` intervals are censorings; ties
/// keep censored subjects at risk).
pub fn kaplan_meier_cdf(obs: &[CensoredObservation]) -> Vec<(f64, f64)> {
    let mut deaths: Vec<f64> = obs.iter().filter_map(|o| o.value()).collect();
    deaths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    deaths.dedup();
    let mut survival = 1.0;
    let mut out = Vec::with_capacity(deaths.len());
    for &t in &deaths {
        let at_risk = obs
            .iter()
            .filter(|o| match o.value() {
                Some(x) => x >= t,
                None => o.lower >= t,
            })
            .count();
        let d = obs.iter().filter(|o| o.value() == Some(t)).count();
        survival *= 1.0 - d as f64 / at_risk as f64;
        out.push((t, 1.0 - survival));
    }
    out
}

// ---------------------------------------------------------------------------
// Danish fire dataset
// ---------------------------------------------------------------------------

/// Locate the Danish fire CSV: `DANISH_FIRE_CSV` env var, then
/// `data/danish.csv` at the workspace root.
pub fn danish_path() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("DANISH_FIRE_CSV") {
        let p = PathBuf::from(p);
        if p.exists() {
            return Some(p);
        }
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/danish.csv");
    p.exists().then_some(p)
}

/// Load the Danish fire losses (expects the 2167 claims in the first CSV
/// column, with or without a header row). Returns `None` when the file is
/// absent or does not look like the expected dataset.
pub fn danish_losses() -> Option<Vec<f64>> {
    let path = danish_path()?;
    let text = std::fs::read_to_string(path).ok()?;
    let mut out = Vec::new();
    for line in text.lines() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) => continue, // header row
        }
    }
    if out.len() == 2167 && out.iter().all(|&v| v >= 1.0) {
        Some(out)
    } else {
        eprintln!(
            "danish CSV found but not usable: {} rows (expected 2167 values >= 1)",
            out.len()
        );
        None
    }
}
