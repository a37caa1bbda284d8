//! EM algorithm for the spliced ME-Pareto model under interval censoring and
//! truncation: initialization, E-step posteriors and conditional expectations
//! (all closed-form), M-step updates, convergence control, and a fast path
//! for fully uncensored data.

use serde::Serialize;

use crate::data::{classify_case, turnbull_fit, CaseLabel, CensoredObservation};
use crate::error::{Error, Result};
use crate::evt::hill;
use crate::model::{
    erlang_pdf_raw, erlang_window_mass, ln_erlang_pdf_raw, pareto_trunc_cdf, MeParams,
    ParetoParams, SplicedModel, UpperBound,
};
use crate::solve::newton_positive_with_bisection;
use crate::special::ln_gamma_int;

/// Information criterion used for model comparison and structure selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InfoCriterion {
    Aic,
    Bic,
}

/// Fitting controls plus the fixed structural points.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub t_lower: f64,
    pub t: f64,
    pub upper: UpperBound,
    /// Number of mixture components the initializer starts from.
    pub m_init: usize,
    /// Spread factors `s` with `θ⁽⁰⁾ = max(d̃)/s`; a plain [`fit`] uses the
    /// first entry, [`crate::search::search`] sweeps all of them.
    pub spread_factors: Vec<f64>,
    /// Relative log-likelihood change below which EM stops.
    pub em_tol: f64,
    /// Relative tolerance of the inner Newton solves for θ and γ.
    pub newton_tol: f64,
    pub max_em_iter: usize,
    pub ic: InfoCriterion,
}

impl FitConfig {
    pub fn new(t_lower: f64, t: f64, upper: UpperBound) -> Self {
        FitConfig {
            t_lower,
            t,
            upper,
            m_init: 10,
            spread_factors: (1..=10).map(|s| s as f64).collect(),
            em_tol: 1e-3,
            newton_tol: 1e-10,
            max_em_iter: 2000,
            ic: InfoCriterion::Aic,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_lower >= 0.0 && self.t_lower < self.t) {
            return Err(Error::invalid(format!(
                "need 0 <= t_lower < t, got t_lower={}, t={}",
                self.t_lower, self.t
            )));
        }
        if let UpperBound::Finite(big_t) = self.upper {
            if !(big_t > self.t) {
                return Err(Error::invalid(format!(
                    "need T > t, got T={big_t}, t={}",
                    self.t
                )));
            }
        }
        if self.m_init == 0 {
            return Err(Error::invalid("m_init must be >= 1"));
        }
        if self.spread_factors.is_empty() || self.spread_factors.iter().any(|&s| !(s >= 1.0)) {
            return Err(Error::invalid("spread factors must be >= 1 and nonempty"));
        }
        Ok(())
    }
}

/// Per-case observation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CaseCounts {
    pub i: usize,
    pub ii: usize,
    pub iii: usize,
    pub iv: usize,
    pub v: usize,
}

impl CaseCounts {
    pub fn total(&self) -> usize {
        self.i + self.ii + self.iii + self.iv + self.v
    }
}

/// The dataset split into the five cases, with intervals clipped to the
/// truncation range and original row indices retained for error reporting.
#[derive(Debug, Clone)]
pub(crate) struct CaseSets {
    pub x_i: Vec<f64>,
    pub x_ii: Vec<f64>,
    pub iv_iii: Vec<(usize, f64, f64)>,
    pub iv_iv: Vec<(usize, f64, f64)>,
    pub iv_v: Vec<(usize, f64, f64)>,
    pub idx_i: Vec<usize>,
    pub counts: CaseCounts,
}

impl CaseSets {
    pub(crate) fn classify(
        obs: &[CensoredObservation],
        t_lower: f64,
        t: f64,
        upper: UpperBound,
    ) -> Result<Self> {
        let big_t = upper.as_f64();
        let mut sets = CaseSets {
            x_i: Vec::new(),
            x_ii: Vec::new(),
            iv_iii: Vec::new(),
            iv_iv: Vec::new(),
            iv_v: Vec::new(),
            idx_i: Vec::new(),
            counts: CaseCounts::default(),
        };
        for (idx, o) in obs.iter().enumerate() {
            let label = classify_case(o, t_lower, t, upper)?;
            let u_eff = o.upper.min(big_t);
            match label {
                CaseLabel::I => {
                    sets.x_i.push(o.lower);
                    sets.idx_i.push(idx);
                    sets.counts.i += 1;
                }
                CaseLabel::II => {
                    sets.x_ii.push(o.lower);
                    sets.counts.ii += 1;
                }
                CaseLabel::III => {
                    sets.iv_iii.push((idx, o.lower, u_eff));
                    sets.counts.iii += 1;
                }
                CaseLabel::IV => {
                    sets.iv_iv.push((idx, o.lower, u_eff));
                    sets.counts.iv += 1;
                }
                CaseLabel::V => {
                    sets.iv_v.push((idx, o.lower, u_eff));
                    sets.counts.v += 1;
                }
            }
        }
        Ok(sets)
    }

    fn is_uncensored(&self) -> bool {
        self.counts.iii == 0 && self.counts.iv == 0 && self.counts.v == 0
    }
}

// ---------------------------------------------------------------------------
// E-step
// ---------------------------------------------------------------------------

/// Everything the M-steps need from one E-step pass.
///
/// Posterior rows sum to one; conditional means are the closed forms of the
/// truncated Erlang and Pareto distributions evaluated at the previous
/// parameter values.
#[derive(Debug, Clone)]
pub struct EStepCache {
    /// Case-I posteriors, one row per uncensored body observation.
    pub z_i: Vec<Vec<f64>>,
    /// Case-I observed values, aligned with `z_i`.
    pub x_i: Vec<f64>,
    /// Case-III posteriors and conditional means E(X | Z_ij=1, l<X≤u).
    pub z_iii: Vec<Vec<f64>>,
    pub cond_mean_iii: Vec<Vec<f64>>,
    /// Case-V body-side posteriors and conditional means on (l, t].
    pub z_v: Vec<Vec<f64>>,
    pub cond_mean_v: Vec<Vec<f64>>,
    /// Case-V probabilities P(X_i ≤ t | l_i < X_i ≤ u_i).
    pub p1_v: Vec<f64>,
    /// Tail-side conditional log-excesses E(ln(X/t) | ·) for cases IV and V.
    pub log_excess_iv: Vec<f64>,
    pub log_excess_v: Vec<f64>,
    /// Σ ln(x/t) over case II.
    pub sum_log_excess_ii: f64,
    pub counts: CaseCounts,
    /// Effective body count n₁ = #I + #III + Σ P₁ and tail count n₂ = n − n₁.
    pub n1: f64,
    pub n2: f64,
}

/// Body-distribution context with the per-component window masses cached.
struct BodyCtx<'a> {
    betas: &'a [f64],
    shapes: &'a [u32],
    theta: f64,
    t_lower: f64,
    t: f64,
    window: Vec<f64>,
}

impl<'a> BodyCtx<'a> {
    fn new(betas: &'a [f64], shapes: &'a [u32], theta: f64, t_lower: f64, t: f64) -> Self {
        let window = shapes
            .iter()
            .map(|&r| erlang_window_mass(r, theta, t_lower, t))
            .collect();
        BodyCtx {
            betas,
            shapes,
            theta,
            t_lower,
            t,
            window,
        }
    }

    /// Truncated-ME CDF F₁(x) on the window.
    fn cdf(&self, x: f64) -> f64 {
        if x <= self.t_lower {
            return 0.0;
        }
        if x >= self.t {
            return 1.0;
        }
        let mut acc = 0.0;
        for ((&b, &r), &w) in self.betas.iter().zip(self.shapes).zip(&self.window) {
            if w > 0.0 {
                acc += b * erlang_window_mass(r, self.theta, self.t_lower, x) / w;
            }
        }
        acc.clamp(0.0, 1.0)
    }

    /// Truncated-ME density f₁(x) on the window.
    fn pdf(&self, x: f64) -> f64 {
        if x < self.t_lower || x > self.t {
            return 0.0;
        }
        let mut acc = 0.0;
        for ((&b, &r), &w) in self.betas.iter().zip(self.shapes).zip(&self.window) {
            if w > 0.0 {
                acc += b * erlang_pdf_raw(x, r, self.theta) / w;
            }
        }
        acc
    }

    /// Posterior component probabilities for an uncensored x, via a log-space
    /// softmax of ln β_j − ln ΔF_j + ln f_E(x; r_j, θ).
    fn posterior_density(&self, x: f64) -> Option<Vec<f64>> {
        let logw: Vec<f64> = self
            .betas
            .iter()
            .zip(self.shapes)
            .zip(&self.window)
            .map(|((&b, &r), &w)| {
                if w > 0.0 {
                    b.ln() - w.ln() + ln_erlang_pdf_raw(x, r, self.theta)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        softmax(&logw)
    }

    /// Posterior component probabilities for an interval (l, u], via the
    /// component masses β_j (F_E(u) − F_E(l)) / ΔF_j.
    fn posterior_mass(&self, l: f64, u: f64) -> Option<Vec<f64>> {
        let mut w: Vec<f64> = self
            .betas
            .iter()
            .zip(self.shapes)
            .zip(&self.window)
            .map(|((&b, &r), &wm)| {
                if wm > 0.0 {
                    b * erlang_window_mass(r, self.theta, l, u.min(self.t)) / wm
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= total);
        Some(w)
    }

    /// Closed-form E(X | Z_j = 1, l < X ≤ u) for an Erlang component:
    /// r θ (F_E(u; r+1) − F_E(l; r+1)) / (F_E(u; r) − F_E(l; r)).
    fn cond_mean(&self, j: usize, l: f64, u: f64) -> f64 {
        let r = self.shapes[j];
        let denom = erlang_window_mass(r, self.theta, l, u);
        if denom <= 0.0 {
            return 0.0;
        }
        let num = erlang_window_mass(r + 1, self.theta, l, u);
        r as f64 * self.theta * num / denom
    }
}

fn softmax(logw: &[f64]) -> Option<Vec<f64>> {
    let max = logw.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = logw.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Some(w)
}

/// Conditional log-excess of the (untruncated-above) Pareto:
/// E(ln(X/t) | l < X ≤ u) with `l ≥ t`, closed form by integration by parts;
/// `u = ∞` drops the upper terms, and `l = t` covers the case-V tail side.
fn pareto_log_excess(l: f64, u: f64, t: f64, gamma: f64) -> Result<f64> {
    let yl = (l / t).ln();
    let wl = (l / t).powf(-1.0 / gamma);
    let (num_u, den_u) = if u.is_finite() {
        let yu = (u / t).ln();
        let wu = (u / t).powf(-1.0 / gamma);
        ((yu + gamma) * wu, wu)
    } else {
        (0.0, 0.0)
    };
    let denom = wl - den_u;
    if denom <= 0.0 {
        return Err(Error::Numerical(format!(
            "pareto log-excess denominator vanished on ({l}, {u})"
        )));
    }
    Ok(((yl + gamma) * wl - num_u) / denom)
}

/// Probability that a case-V observation lies below the splicing point,
/// `P(X ≤ t | l < X ≤ u) = (F(t) − F(l)) / (F(u) − F(l))` under the current
/// spliced CDF.
pub fn prob_below_t(obs: &CensoredObservation, model: &SplicedModel) -> Result<f64> {
    if !(obs.lower < model.t && obs.upper > model.t) {
        return Err(Error::invalid(format!(
            "observation ({}, {}) does not straddle the splicing point {}",
            obs.lower, obs.upper, model.t
        )));
    }
    let ctx = BodyCtx::new(
        &model.body.betas,
        &model.body.shapes,
        model.body.theta,
        model.t_lower,
        model.t,
    );
    prob_below_t_inner(
        obs.lower,
        obs.upper.min(model.upper.as_f64()),
        model.pi,
        &ctx,
        &model.tail,
        model.upper,
        usize::MAX,
    )
}

fn prob_below_t_inner(
    l: f64,
    u: f64,
    pi: f64,
    body: &BodyCtx,
    tail: &ParetoParams,
    upper: UpperBound,
    index: usize,
) -> Result<f64> {
    let f1_l = body.cdf(l);
    let f2_u = if u.is_infinite() {
        1.0
    } else {
        pareto_trunc_cdf(u, tail, upper)
    };
    let num = pi * (1.0 - f1_l);
    let denom = pi + (1.0 - pi) * f2_u - pi * f1_l;
    if denom <= 0.0 {
        return Err(Error::ZeroMass {
            index,
            message: format!("case-v probability denominator vanished on ({l}, {u})"),
        });
    }
    Ok((num / denom).clamp(0.0, 1.0))
}

/// One E-step at the given parameter values.
pub fn e_step(obs: &[CensoredObservation], model_prev: &SplicedModel) -> Result<EStepCache> {
    let sets = CaseSets::classify(obs, model_prev.t_lower, model_prev.t, model_prev.upper)?;
    let state = IterState::from_model(model_prev);
    e_step_inner(&sets, &state)
}

/// Mutable parameter state inside the EM loop; α is only materialized at the
/// end of a fit.
#[derive(Debug, Clone)]
struct IterState {
    pi: f64,
    betas: Vec<f64>,
    shapes: Vec<u32>,
    theta: f64,
    gamma: f64,
    t_lower: f64,
    t: f64,
    upper: UpperBound,
}

impl IterState {
    fn from_model(m: &SplicedModel) -> Self {
        IterState {
            pi: m.pi,
            betas: m.body.betas.clone(),
            shapes: m.body.shapes.clone(),
            theta: m.body.theta,
            gamma: m.tail.gamma,
            t_lower: m.t_lower,
            t: m.t,
            upper: m.upper,
        }
    }

    fn body_ctx(&self) -> BodyCtx<'_> {
        BodyCtx::new(&self.betas, &self.shapes, self.theta, self.t_lower, self.t)
    }

    fn tail(&self) -> ParetoParams {
        ParetoParams {
            gamma: self.gamma,
            scale_t: self.t,
        }
    }

    fn into_model(self) -> Result<SplicedModel> {
        let me = MeParams::from_betas(self.betas, self.shapes, self.theta, self.t_lower, self.t)?;
        SplicedModel::new(self.pi, me, self.gamma, self.t_lower, self.t, self.upper)
    }
}

fn e_step_inner(sets: &CaseSets, state: &IterState) -> Result<EStepCache> {
    let body = state.body_ctx();
    let tail = state.tail();
    let m = state.shapes.len();

    let mut z_i = Vec::with_capacity(sets.x_i.len());
    for (&x, &idx) in sets.x_i.iter().zip(&sets.idx_i) {
        let z = body.posterior_density(x).ok_or(Error::ZeroMass {
            index: idx,
            message: format!("zero body density at uncensored x={x}"),
        })?;
        z_i.push(z);
    }

    let mut z_iii = Vec::with_capacity(sets.iv_iii.len());
    let mut cond_mean_iii = Vec::with_capacity(sets.iv_iii.len());
    for &(idx, l, u) in &sets.iv_iii {
        let z = body.posterior_mass(l, u).ok_or(Error::ZeroMass {
            index: idx,
            message: format!("zero body mass on censoring interval ({l}, {u})"),
        })?;
        let means = (0..m).map(|j| body.cond_mean(j, l, u)).collect();
        z_iii.push(z);
        cond_mean_iii.push(means);
    }

    let mut z_v = Vec::with_capacity(sets.iv_v.len());
    let mut cond_mean_v = Vec::with_capacity(sets.iv_v.len());
    let mut p1_v = Vec::with_capacity(sets.iv_v.len());
    let mut log_excess_v = Vec::with_capacity(sets.iv_v.len());
    for &(idx, l, u) in &sets.iv_v {
        let z = body.posterior_mass(l, state.t).ok_or(Error::ZeroMass {
            index: idx,
            message: format!("zero body mass on ({l}, t]"),
        })?;
        let means = (0..m).map(|j| body.cond_mean(j, l, state.t)).collect();
        let p1 = prob_below_t_inner(l, u, state.pi, &body, &tail, state.upper, idx)?;
        let le = pareto_log_excess(state.t, u, state.t, state.gamma)?;
        z_v.push(z);
        cond_mean_v.push(means);
        p1_v.push(p1);
        log_excess_v.push(le);
    }

    let mut log_excess_iv = Vec::with_capacity(sets.iv_iv.len());
    for &(_, l, u) in &sets.iv_iv {
        log_excess_iv.push(pareto_log_excess(l, u, state.t, state.gamma)?);
    }

    let sum_log_excess_ii = sets.x_ii.iter().map(|&x| (x / state.t).ln()).sum();
    let n = sets.counts.total() as f64;
    let n1 = sets.counts.i as f64 + sets.counts.iii as f64 + p1_v.iter().sum::<f64>();
    let n2 = n - n1;

    Ok(EStepCache {
        z_i,
        x_i: sets.x_i.clone(),
        z_iii,
        cond_mean_iii,
        z_v,
        cond_mean_v,
        p1_v,
        log_excess_iv,
        log_excess_v,
        sum_log_excess_ii,
        counts: sets.counts,
        n1,
        n2,
    })
}

// ---------------------------------------------------------------------------
// M-steps
// ---------------------------------------------------------------------------

/// Splicing-weight update: the effective proportion of mass at or below `t`.
pub fn m_step_pi(cache: &EStepCache) -> f64 {
    cache.n1 / cache.counts.total() as f64
}

/// Mixing-weight update: average posterior membership over the body-side
/// contributions, case V weighted by P₁.
pub fn m_step_beta(cache: &EStepCache) -> Result<Vec<f64>> {
    if cache.n1 <= 0.0 {
        return Err(Error::Numerical(
            "no effective body mass (n1 = 0)".to_string(),
        ));
    }
    let m = cache
        .z_i
        .first()
        .or(cache.z_iii.first())
        .or(cache.z_v.first())
        .map(|z| z.len())
        .ok_or_else(|| Error::Numerical("no body-side observations".to_string()))?;
    let mut acc = vec![0.0; m];
    for z in &cache.z_i {
        for (a, &zj) in acc.iter_mut().zip(z) {
            *a += zj;
        }
    }
    for z in &cache.z_iii {
        for (a, &zj) in acc.iter_mut().zip(z) {
            *a += zj;
        }
    }
    for (z, &p1) in cache.z_v.iter().zip(&cache.p1_v) {
        for (a, &zj) in acc.iter_mut().zip(z) {
            *a += p1 * zj;
        }
    }
    acc.iter_mut().for_each(|a| *a /= cache.n1);
    let total: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}

/// Posterior-weighted sum of observed values / conditional means on the body
/// side (the bracketed term of the θ update).
fn theta_mean_term(cache: &EStepCache) -> f64 {
    let mut acc: f64 = cache.x_i.iter().sum();
    for (z, e) in cache.z_iii.iter().zip(&cache.cond_mean_iii) {
        acc += z.iter().zip(e).map(|(&zj, &ej)| zj * ej).sum::<f64>();
    }
    for ((z, e), &p1) in cache.z_v.iter().zip(&cache.cond_mean_v).zip(&cache.p1_v) {
        acc += p1 * z.iter().zip(e).map(|(&zj, &ej)| zj * ej).sum::<f64>();
    }
    acc
}

/// Truncation correction of the θ update:
/// Σ_j β_j ((t^l)^{r_j} e^{−t^l/θ} − t^{r_j} e^{−t/θ}) /
///        (θ^{r_j−1} (r_j−1)! (F_E(t) − F_E(t^l))),
/// computed in log space via x^r e^{−x/θ}/θ^{r−1} = θ (x/θ)^r e^{−x/θ}.
fn theta_correction(betas: &[f64], shapes: &[u32], t_lower: f64, t: f64, theta: f64) -> f64 {
    let g = |x: f64, r: u32| -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let rf = r as f64;
        (rf * (x / theta).ln() - x / theta - ln_gamma_int(r as u64)).exp()
    };
    let mut acc = 0.0;
    for (&b, &r) in betas.iter().zip(shapes) {
        let mass = erlang_window_mass(r, theta, t_lower, t);
        if mass <= 0.0 {
            return f64::INFINITY;
        }
        acc += b * theta * (g(t_lower, r) - g(t, r)) / mass;
    }
    acc
}

/// Residual of the implicit θ equation at a candidate θ; its root is the
/// M-step update.
pub fn theta_equation_residual(
    cache: &EStepCache,
    betas: &[f64],
    shapes: &[u32],
    t_lower: f64,
    t: f64,
    theta: f64,
) -> f64 {
    let mean_shape: f64 = betas.iter().zip(shapes).map(|(&b, &r)| b * r as f64).sum();
    let a = theta_mean_term(cache) / (cache.n1 * mean_shape);
    theta - a + theta_correction(betas, shapes, t_lower, t, theta) / mean_shape
}

/// Scale update: Newton from the previous θ with bisection fallback on
/// `[θ_prev/100, 100 θ_prev]`. With `t^l = 0` and a splicing point far out in
/// the body's tail, the correction vanishes and the update reduces to the
/// weighted mean over the average shape.
pub fn m_step_theta(
    cache: &EStepCache,
    betas: &[f64],
    shapes: &[u32],
    theta_prev: f64,
    t_lower: f64,
    t: f64,
    newton_tol: f64,
) -> Result<f64> {
    if cache.n1 <= 0.0 {
        return Err(Error::Numerical(
            "no effective body mass (n1 = 0)".to_string(),
        ));
    }
    let f = |theta: f64| theta_equation_residual(cache, betas, shapes, t_lower, t, theta);
    newton_positive_with_bisection(
        f,
        theta_prev,
        newton_tol,
        theta_prev / 100.0,
        theta_prev * 100.0,
        "theta m-step",
    )
}

/// Body-side tail sums of the γ update: (Σ log-excess terms, effective n₂).
fn gamma_sums(cache: &EStepCache) -> (f64, f64) {
    let mut s = cache.sum_log_excess_ii;
    s += cache.log_excess_iv.iter().sum::<f64>();
    s += cache
        .log_excess_v
        .iter()
        .zip(&cache.p1_v)
        .map(|(&le, &p1)| (1.0 - p1) * le)
        .sum::<f64>();
    (s, cache.n2)
}

/// Residual of the implicit γ equation; zero at the M-step update.
pub fn gamma_equation_residual(cache: &EStepCache, t: f64, upper: UpperBound, gamma: f64) -> f64 {
    let (s, n2) = gamma_sums(cache);
    let correction = match upper {
        UpperBound::Infinite => 0.0,
        UpperBound::Finite(big_t) => {
            let a = (big_t / t).ln();
            a / ((big_t / t).powf(1.0 / gamma) - 1.0)
        }
    };
    gamma - s / n2 - correction
}

/// Tail-shape update: closed form when `T = ∞`, otherwise Newton from the
/// previous γ with bisection fallback on `(1e-8, 100)`.
pub fn m_step_gamma(
    cache: &EStepCache,
    gamma_prev: f64,
    t: f64,
    upper: UpperBound,
    newton_tol: f64,
) -> Result<f64> {
    let (s, n2) = gamma_sums(cache);
    if n2 <= 0.0 {
        return Err(Error::Numerical(
            "no effective tail mass (n2 = 0)".to_string(),
        ));
    }
    match upper {
        UpperBound::Infinite => Ok(s / n2),
        UpperBound::Finite(_) => newton_positive_with_bisection(
            |g| gamma_equation_residual(cache, t, upper, g),
            gamma_prev,
            newton_tol,
            1e-8,
            100.0,
            "gamma m-step",
        ),
    }
}

// ---------------------------------------------------------------------------
// Observed-data log-likelihood
// ---------------------------------------------------------------------------

/// Observed-data log-likelihood of the spliced model over the five case sets;
/// case-V terms contribute `ln(π + (1−π)F₂(u) − πF₁(l))`.
pub fn loglik(obs: &[CensoredObservation], model: &SplicedModel) -> Result<f64> {
    let sets = CaseSets::classify(obs, model.t_lower, model.t, model.upper)?;
    loglik_inner(&sets, &IterState::from_model(model))
}

fn loglik_inner(sets: &CaseSets, state: &IterState) -> Result<f64> {
    let body = state.body_ctx();
    let tail = state.tail();
    let pi = state.pi;
    let mut ll = 0.0;

    for (&x, &idx) in sets.x_i.iter().zip(&sets.idx_i) {
        let f1 = body.pdf(x);
        if f1 <= 0.0 {
            return Err(Error::ZeroMass {
                index: idx,
                message: format!("zero body density at x={x}"),
            });
        }
        ll += pi.ln() + f1.ln();
    }
    for &x in &sets.x_ii {
        let f2 = crate::model::pareto_trunc_pdf(x, &tail, state.upper);
        if f2 <= 0.0 {
            return Err(Error::Numerical(format!("zero tail density at x={x}")));
        }
        ll += (1.0 - pi).ln() + f2.ln();
    }
    for &(idx, l, u) in &sets.iv_iii {
        let mass = body.cdf(u) - body.cdf(l);
        if mass <= 0.0 {
            return Err(Error::ZeroMass {
                index: idx,
                message: format!("zero body mass on ({l}, {u})"),
            });
        }
        ll += pi.ln() + mass.ln();
    }
    for &(idx, l, u) in &sets.iv_iv {
        let fu = if u.is_infinite() {
            1.0
        } else {
            pareto_trunc_cdf(u, &tail, state.upper)
        };
        let mass = fu - pareto_trunc_cdf(l, &tail, state.upper);
        if mass <= 0.0 {
            return Err(Error::ZeroMass {
                index: idx,
                message: format!("zero tail mass on ({l}, {u})"),
            });
        }
        ll += (1.0 - pi).ln() + mass.ln();
    }
    for &(idx, l, u) in &sets.iv_v {
        let fu = if u.is_infinite() {
            1.0
        } else {
            pareto_trunc_cdf(u, &tail, state.upper)
        };
        let mass = pi + (1.0 - pi) * fu - pi * body.cdf(l);
        if mass <= 0.0 {
            return Err(Error::ZeroMass {
                index: idx,
                message: format!("zero straddling mass on ({l}, {u})"),
            });
        }
        ll += mass.ln();
    }
    Ok(ll)
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Type-7 empirical quantile (linear interpolation between order statistics).
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Data-dependent pieces of the starting values that are identical for every
/// candidate structure: the sorted body pseudo-data plus π⁰ (Turnbull CDF at
/// `t`) and γ⁰ (Hill estimator on the pseudo-data). Computed once per dataset
/// and reused across the structure search's many refits.
#[derive(Debug, Clone)]
pub(crate) struct StartValues {
    body_pseudo: Vec<f64>,
    pi0: f64,
    gamma0: f64,
}

pub(crate) fn start_values(
    obs: &[CensoredObservation],
    sets: &CaseSets,
    cfg: &FitConfig,
) -> Result<StartValues> {
    let n = sets.counts.total();
    if sets.counts.i + sets.counts.iii + sets.counts.v == 0 {
        return Err(Error::invalid("no observations on the body side of t"));
    }
    if sets.counts.ii + sets.counts.iv + sets.counts.v == 0 {
        return Err(Error::invalid("no observations on the tail side of t"));
    }

    // pseudo-data: x for uncensored, l for right-censored, u for
    // left-censored, interval midpoints otherwise
    let big_t = cfg.upper.as_f64();
    let pseudo: Vec<f64> = obs
        .iter()
        .map(|o| {
            if !o.is_censored() || o.upper >= big_t {
                // observed value, or the lower bound for right censoring
                o.lower
            } else if o.lower <= cfg.t_lower {
                // left censoring: only the upper bound is informative
                o.upper
            } else {
                0.5 * (o.lower + o.upper.min(big_t))
            }
        })
        .collect();
    let mut body_pseudo: Vec<f64> = pseudo.iter().copied().filter(|&d| d <= cfg.t).collect();
    if body_pseudo.is_empty() {
        return Err(Error::invalid("no pseudo-data at or below t"));
    }
    body_pseudo.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // π from the Turnbull estimate at t (the ECDF when nothing is censored)
    let tb = turnbull_fit(obs, cfg.t_lower, cfg.upper, 1e-8, 10_000)?;
    let eps = 0.5 / n as f64;
    let pi0 = tb.cdf(cfg.t).clamp(eps, 1.0 - eps);

    // γ from the Hill estimator on the pseudo-data above t
    let gamma0 = hill(&pseudo, cfg.t)
        .map_err(|_| Error::invalid("no pseudo-data above t for the tail start value"))?;

    Ok(StartValues {
        body_pseudo,
        pi0,
        gamma0,
    })
}

/// Starting values: π from the Turnbull CDF at `t`; θ, shapes and α from the
/// pseudo-data quantile recipe with spread factor `s`; γ from the Hill
/// estimator at threshold `t` on the pseudo-data.
pub fn initialize(obs: &[CensoredObservation], cfg: &FitConfig, s: f64) -> Result<SplicedModel> {
    cfg.validate()?;
    let sets = CaseSets::classify(obs, cfg.t_lower, cfg.t, cfg.upper)?;
    initialize_inner(obs, &sets, cfg, s, None)
}

pub(crate) fn initialize_inner(
    obs: &[CensoredObservation],
    sets: &CaseSets,
    cfg: &FitConfig,
    s: f64,
    fixed_shapes: Option<&[u32]>,
) -> Result<SplicedModel> {
    let aux = start_values(obs, sets, cfg)?;
    initialize_with(&aux, cfg, s, fixed_shapes)
}

pub(crate) fn initialize_with(
    aux: &StartValues,
    cfg: &FitConfig,
    s: f64,
    fixed_shapes: Option<&[u32]>,
) -> Result<SplicedModel> {
    let body_pseudo = &aux.body_pseudo;
    let d_max = *body_pseudo.last().unwrap();
    let theta0 = d_max / s;
    if !(theta0 > 0.0) {
        return Err(Error::invalid("pseudo-data maximum must be positive"));
    }

    // shapes from ceilinged quantile ratios, duplicates collapsed
    let (shapes, alphas) = match fixed_shapes {
        Some(fs) => {
            let counts = bin_counts(body_pseudo, fs, theta0);
            // fixed shapes must all survive, so smooth empty bins
            let smoothed: Vec<f64> = counts.iter().map(|&c| c as f64 + 0.5).collect();
            let total: f64 = smoothed.iter().sum();
            (
                fs.to_vec(),
                smoothed
                    .into_iter()
                    .map(|c| c / total)
                    .collect::<Vec<f64>>(),
            )
        }
        None => {
            let m0 = cfg.m_init;
            let mut shapes: Vec<u32> = (0..m0)
                .map(|j| {
                    let p = if m0 == 1 {
                        1.0
                    } else {
                        j as f64 / (m0 - 1) as f64
                    };
                    (empirical_quantile(body_pseudo, p) / theta0)
                        .ceil()
                        .max(1.0) as u32
                })
                .collect();
            shapes.dedup();
            let counts = bin_counts(body_pseudo, &shapes, theta0);
            let mut kept_shapes = Vec::new();
            let mut kept_weights = Vec::new();
            for (&r, &c) in shapes.iter().zip(&counts) {
                if c > 0 {
                    kept_shapes.push(r);
                    kept_weights.push(c as f64);
                }
            }
            let total: f64 = kept_weights.iter().sum();
            kept_weights.iter_mut().for_each(|w| *w /= total);
            (kept_shapes, kept_weights)
        }
    };

    let me = MeParams::from_alphas(alphas, shapes, theta0, cfg.t_lower, cfg.t)?;
    SplicedModel::new(aux.pi0, me, aux.gamma0, cfg.t_lower, cfg.t, cfg.upper)
}

fn bin_counts(sorted_pseudo: &[f64], shapes: &[u32], theta0: f64) -> Vec<usize> {
    let mut counts = vec![0usize; shapes.len()];
    for &d in sorted_pseudo {
        for (j, &r) in shapes.iter().enumerate() {
            let lo = if j == 0 {
                0.0
            } else {
                shapes[j - 1] as f64 * theta0
            };
            let hi = r as f64 * theta0;
            if d > lo && d <= hi {
                counts[j] += 1;
                break;
            }
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// Fit driver
// ---------------------------------------------------------------------------

/// Mixture structure a report was produced with.
#[derive(Debug, Clone, Serialize)]
pub struct ChosenStructure {
    pub m: usize,
    pub shapes: Vec<u32>,
    pub spread: f64,
}

/// Fit result: the model, the log-likelihood trace, information criteria and
/// bookkeeping about the chosen structure.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: SplicedModel,
    pub loglik_trace: Vec<f64>,
    pub nll: f64,
    pub df: usize,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
    pub case_counts: CaseCounts,
    pub chosen: ChosenStructure,
}

impl FitReport {
    pub fn ic_value(&self, ic: InfoCriterion) -> f64 {
        match ic {
            InfoCriterion::Aic => self.aic,
            InfoCriterion::Bic => self.bic,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Fit the spliced model by EM.
///
/// Runs the initializer (with `fixed_shapes` overriding the quantile-derived
/// shape vector when given), then alternates E- and M-steps until the
/// relative log-likelihood change drops below `cfg.em_tol`. Fully uncensored
/// data dispatches to the fast path where π and γ are computed once and only
/// the mixed-Erlang body iterates.
pub fn fit(
    obs: &[CensoredObservation],
    cfg: &FitConfig,
    fixed_shapes: Option<&[u32]>,
) -> Result<FitReport> {
    cfg.validate()?;
    let sets = CaseSets::classify(obs, cfg.t_lower, cfg.t, cfg.upper)?;
    let s = cfg.spread_factors[0];
    let start = initialize_inner(obs, &sets, cfg, s, fixed_shapes)?;
    fit_from(&sets, cfg, start, s)
}

/// Fit continuing from an explicit starting model (used by the structure
/// search and by bootstrap refits; shapes are taken from the start model).
pub(crate) fn fit_from(
    sets: &CaseSets,
    cfg: &FitConfig,
    start: SplicedModel,
    spread: f64,
) -> Result<FitReport> {
    if sets.is_uncensored() {
        fit_uncensored(sets, cfg, start, spread)
    } else {
        fit_censored(sets, cfg, start, spread)
    }
}

/// Degrees of freedom charged to a fitted model in the information criteria;
/// shape integers and the spread factor count as selected, not estimated.
fn degrees_of_freedom(m: usize) -> usize {
    2 * m + 1
}

fn build_report(
    state: IterState,
    trace: Vec<f64>,
    converged: bool,
    sets: &CaseSets,
    spread: f64,
) -> Result<FitReport> {
    let n = sets.counts.total();
    let nll = -trace.last().copied().unwrap_or(f64::NAN);
    let m = state.shapes.len();
    let df = degrees_of_freedom(m);
    let shapes = state.shapes.clone();
    let model = state.into_model()?;
    Ok(FitReport {
        aic: 2.0 * nll + 2.0 * df as f64,
        bic: 2.0 * nll + (n as f64).ln() * df as f64,
        nll,
        df,
        iterations: trace.len().saturating_sub(1),
        converged,
        n,
        case_counts: sets.counts,
        chosen: ChosenStructure { m, shapes, spread },
        model,
        loglik_trace: trace,
    })
}

fn fit_censored(
    sets: &CaseSets,
    cfg: &FitConfig,
    start: SplicedModel,
    spread: f64,
) -> Result<FitReport> {
    let mut state = IterState::from_model(&start);
    let mut trace = vec![loglik_inner(sets, &state)?];
    let mut converged = false;
    for _ in 0..cfg.max_em_iter {
        let cache = e_step_inner(sets, &state)?;
        state.pi = m_step_pi(&cache);
        state.betas = m_step_beta(&cache)?;
        state.theta = m_step_theta(
            &cache,
            &state.betas,
            &state.shapes,
            state.theta,
            state.t_lower,
            state.t,
            cfg.newton_tol,
        )?;
        state.gamma = m_step_gamma(&cache, state.gamma, state.t, state.upper, cfg.newton_tol)?;
        let ll = loglik_inner(sets, &state)?;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() / (prev.abs() + 1.0) < cfg.em_tol {
            converged = true;
            break;
        }
    }
    build_report(state, trace, converged, sets, spread)
}

/// Uncensored fast path: π and γ are maximized once in closed form (γ via the
/// Hill sum, plus the upper-truncation correction when `T` is finite); only
/// the body mixture needs EM iterations.
fn fit_uncensored(
    sets: &CaseSets,
    cfg: &FitConfig,
    start: SplicedModel,
    spread: f64,
) -> Result<FitReport> {
    let mut state = IterState::from_model(&start);
    let n = sets.counts.total();
    let n1 = sets.counts.i;
    let n2 = sets.counts.ii;
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid(
            "uncensored fit needs data on both sides of t",
        ));
    }
    state.pi = n1 as f64 / n as f64;

    let s_tail: f64 = sets.x_ii.iter().map(|&x| (x / state.t).ln()).sum();
    let hill_mean = s_tail / n2 as f64;
    state.gamma = match cfg.upper {
        UpperBound::Infinite => hill_mean,
        UpperBound::Finite(big_t) => {
            let a = (big_t / state.t).ln();
            newton_positive_with_bisection(
                |g| g - hill_mean - a / ((big_t / state.t).powf(1.0 / g) - 1.0),
                state.gamma,
                cfg.newton_tol,
                1e-8,
                100.0,
                "gamma (uncensored)",
            )?
        }
    };

    let sum_x: f64 = sets.x_i.iter().sum();
    let mut trace = vec![loglik_inner(sets, &state)?];
    let mut converged = false;
    for _ in 0..cfg.max_em_iter {
        let body = state.body_ctx();
        let mut acc = vec![0.0; state.shapes.len()];
        let mut z_rows: Vec<Vec<f64>> = Vec::with_capacity(sets.x_i.len());
        for (&x, &idx) in sets.x_i.iter().zip(&sets.idx_i) {
            let z = body.posterior_density(x).ok_or(Error::ZeroMass {
                index: idx,
                message: format!("zero body density at x={x}"),
            })?;
            for (a, &zj) in acc.iter_mut().zip(&z) {
                *a += zj;
            }
            z_rows.push(z);
        }
        drop(body);
        acc.iter_mut().for_each(|a| *a /= n1 as f64);
        let total: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= total);
        state.betas = acc;

        let mean_shape: f64 = state
            .betas
            .iter()
            .zip(&state.shapes)
            .map(|(&b, &r)| b * r as f64)
            .sum();
        let a_term = sum_x / (n1 as f64 * mean_shape);
        let (t_lower, t) = (state.t_lower, state.t);
        let betas = state.betas.clone();
        let shapes = state.shapes.clone();
        state.theta = newton_positive_with_bisection(
            |theta| {
                theta - a_term + theta_correction(&betas, &shapes, t_lower, t, theta) / mean_shape
            },
            state.theta,
            cfg.newton_tol,
            state.theta / 100.0,
            state.theta * 100.0,
            "theta m-step",
        )?;

        let ll = loglik_inner(sets, &state)?;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() / (prev.abs() + 1.0) < cfg.em_tol {
            converged = true;
            break;
        }
    }
    build_report(state, trace, converged, sets, spread)
}
