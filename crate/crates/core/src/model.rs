//! Spliced mixed-Erlang / Pareto distribution: densities, CDFs, quantiles,
//! weight transforms between the untruncated (α) and truncated (β) mixing
//! weights, and a seeded sampler.
//!
//! The spliced CDF is piecewise
//!
//! ```text
//! F(x) = 0                     x ≤ t^l
//!        π F₁(x)               t^l < x ≤ t      (truncated mixed Erlang)
//!        π + (1−π) F₂(x)       t  < x < T      (truncated Pareto)
//!        1                     x ≥ T
//! ```
//!
//! with fixed structural points `0 ≤ t^l < t < T` and splicing weight π.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_gamma_int, reg_lower_gamma, reg_upper_gamma};

/// Upper truncation point: finite `T` or no upper truncation.
///
/// Kept as a distinguished value so that `T = +∞` never round-trips through a
/// large float; every formula branches explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpperBound {
    Finite(f64),
    Infinite,
}

impl UpperBound {
    pub fn is_finite(self) -> bool {
        matches!(self, UpperBound::Finite(_))
    }

    /// The bound as an `f64`, mapping `Infinite` to `f64::INFINITY`.
    pub fn as_f64(self) -> f64 {
        match self {
            UpperBound::Finite(t) => t,
            UpperBound::Infinite => f64::INFINITY,
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x.is_infinite() {
            UpperBound::Infinite
        } else {
            UpperBound::Finite(x)
        }
    }
}

// ---------------------------------------------------------------------------
// Erlang component distribution
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn erlang_cdf_raw(x: f64, r: u32, theta: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        reg_lower_gamma(r as u64, x / theta)
    }
}

#[inline]
pub(crate) fn erlang_sf_raw(x: f64, r: u32, theta: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        reg_upper_gamma(r as u64, x / theta)
    }
}

#[inline]
pub(crate) fn ln_erlang_pdf_raw(x: f64, r: u32, theta: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let rf = r as f64;
    (rf - 1.0) * x.ln() - x / theta - rf * theta.ln() - ln_gamma_int(r as u64)
}

#[inline]
pub(crate) fn erlang_pdf_raw(x: f64, r: u32, theta: f64) -> f64 {
    if x <= 0.0 {
        // x^{r−1} kills the density at the origin except for r = 1
        if x == 0.0 && r == 1 {
            return 1.0 / theta;
        }
        return 0.0;
    }
    ln_erlang_pdf_raw(x, r, theta).exp()
}

fn check_erlang_args(x: f64, r: u32, theta: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::invalid(format!(
            "erlang argument x={x} must be finite and >= 0"
        )));
    }
    if r == 0 {
        return Err(Error::invalid("erlang shape r must be >= 1"));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid(format!(
            "erlang scale theta={theta} must be positive"
        )));
    }
    Ok(())
}

/// Erlang CDF `F_E(x; r, θ)`, evaluated through the regularized lower
/// incomplete gamma function so shapes up to several hundred stay accurate.
pub fn erlang_cdf(x: f64, r: u32, theta: f64) -> Result<f64> {
    check_erlang_args(x, r, theta)?;
    Ok(erlang_cdf_raw(x, r, theta))
}

/// Erlang density `f_E(x; r, θ) = x^{r−1} e^{−x/θ} / (θ^r (r−1)!)`, log-space internally.
pub fn erlang_pdf(x: f64, r: u32, theta: f64) -> Result<f64> {
    check_erlang_args(x, r, theta)?;
    Ok(erlang_pdf_raw(x, r, theta))
}

/// Probability mass an Erlang(r, θ) component puts on the window `(t_lower, t]`.
///
/// Uses the survival-function route when both CDF values sit near 1, which
/// keeps far-tail windows from cancelling to noise.
#[inline]
pub(crate) fn erlang_window_mass(r: u32, theta: f64, t_lower: f64, t: f64) -> f64 {
    let f_lo = erlang_cdf_raw(t_lower, r, theta);
    if f_lo > 0.5 {
        erlang_sf_raw(t_lower, r, theta) - erlang_sf_raw(t, r, theta)
    } else {
        erlang_cdf_raw(t, r, theta) - f_lo
    }
    .max(0.0)
}

// ---------------------------------------------------------------------------
// Mixing-weight transforms
// ---------------------------------------------------------------------------

/// Reweight untruncated mixing weights α into the truncated weights β for the
/// window `(t_lower, t]`: `β_j ∝ α_j (F_E(t) − F_E(t^l))`.
pub fn alpha_to_beta(
    alphas: &[f64],
    shapes: &[u32],
    theta: f64,
    t_lower: f64,
    t: f64,
) -> Result<Vec<f64>> {
    check_weights(alphas, shapes)?;
    let mut betas: Vec<f64> = alphas
        .iter()
        .zip(shapes)
        .map(|(&a, &r)| a * erlang_window_mass(r, theta, t_lower, t))
        .collect();
    let total: f64 = betas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWindow(format!(
            "no mixture mass on ({t_lower}, {t}] for theta={theta}"
        )));
    }
    betas.iter_mut().for_each(|b| *b /= total);
    Ok(betas)
}

/// Inverse transform: `α_j ∝ β_j / (F_E(t) − F_E(t^l))`, renormalized.
pub fn beta_to_alpha(
    betas: &[f64],
    shapes: &[u32],
    theta: f64,
    t_lower: f64,
    t: f64,
) -> Result<Vec<f64>> {
    check_weights(betas, shapes)?;
    let mut alphas = Vec::with_capacity(betas.len());
    for (&b, &r) in betas.iter().zip(shapes) {
        let mass = erlang_window_mass(r, theta, t_lower, t);
        if !(mass > 0.0) {
            return Err(Error::DegenerateWindow(format!(
                "component with shape {r} has zero mass on ({t_lower}, {t}]"
            )));
        }
        alphas.push(b / mass);
    }
    let total: f64 = alphas.iter().sum();
    alphas.iter_mut().for_each(|a| *a /= total);
    Ok(alphas)
}

fn check_weights(weights: &[f64], shapes: &[u32]) -> Result<()> {
    if weights.is_empty() || weights.len() != shapes.len() {
        return Err(Error::invalid(
            "weights and shapes must be nonempty and equal length",
        ));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid("mixing weights must be strictly positive"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "mixing weights sum to {sum}, expected 1"
        )));
    }
    if shapes[0] == 0 || shapes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "shapes must be strictly increasing positive integers",
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mixed-Erlang body
// ---------------------------------------------------------------------------

/// Mixed-Erlang parameters: integer shapes, common scale θ, and the mixing
/// weights in both the untruncated (α) and window-truncated (β) forms.
#[derive(Debug, Clone, PartialEq)]
pub struct MeParams {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub shapes: Vec<u32>,
    pub theta: f64,
}

impl MeParams {
    /// Build from untruncated weights; β is derived for the given window.
    pub fn from_alphas(
        alphas: Vec<f64>,
        shapes: Vec<u32>,
        theta: f64,
        t_lower: f64,
        t: f64,
    ) -> Result<Self> {
        let betas = alpha_to_beta(&alphas, &shapes, theta, t_lower, t)?;
        Ok(MeParams {
            alphas,
            betas,
            shapes,
            theta,
        })
    }

    /// Build from truncated weights; α is derived for the given window.
    pub fn from_betas(
        betas: Vec<f64>,
        shapes: Vec<u32>,
        theta: f64,
        t_lower: f64,
        t: f64,
    ) -> Result<Self> {
        let alphas = beta_to_alpha(&betas, &shapes, theta, t_lower, t)?;
        Ok(MeParams {
            alphas,
            betas,
            shapes,
            theta,
        })
    }

    pub fn num_components(&self) -> usize {
        self.shapes.len()
    }
}

/// CDF of the mixed Erlang truncated to `(t_lower, t]`:
/// `F₁(x) = Σ_j β_j (F_E(x) − F_E(t^l)) / (F_E(t) − F_E(t^l))`.
pub fn truncated_me_cdf(x: f64, me: &MeParams, t_lower: f64, t: f64) -> f64 {
    if x <= t_lower {
        return 0.0;
    }
    if x >= t {
        return 1.0;
    }
    let mut acc = 0.0;
    for (&b, &r) in me.betas.iter().zip(&me.shapes) {
        let mass = erlang_window_mass(r, me.theta, t_lower, t);
        if mass > 0.0 {
            acc += b * erlang_window_mass(r, me.theta, t_lower, x) / mass;
        }
    }
    acc.clamp(0.0, 1.0)
}

/// Density of the mixed Erlang truncated to `(t_lower, t]`.
pub fn truncated_me_pdf(x: f64, me: &MeParams, t_lower: f64, t: f64) -> f64 {
    if x < t_lower || x > t {
        return 0.0;
    }
    let mut acc = 0.0;
    for (&b, &r) in me.betas.iter().zip(&me.shapes) {
        let mass = erlang_window_mass(r, me.theta, t_lower, t);
        if mass > 0.0 {
            acc += b * erlang_pdf_raw(x, r, me.theta) / mass;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Truncated Pareto tail
// ---------------------------------------------------------------------------

/// Pareto tail parameters; the scale coincides with the splicing point `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoParams {
    pub gamma: f64,
    pub scale_t: f64,
}

impl ParetoParams {
    pub fn new(gamma: f64, scale_t: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "pareto shape gamma={gamma} must be positive"
            )));
        }
        if !(scale_t > 0.0) || !scale_t.is_finite() {
            return Err(Error::invalid(format!(
                "pareto scale t={scale_t} must be positive"
            )));
        }
        Ok(ParetoParams { gamma, scale_t })
    }
}

/// CDF of the Pareto distribution truncated to `(t, T)`:
/// `F₂(x) = (1 − (x/t)^{−1/γ}) / (1 − (T/t)^{−1/γ})`, the denominator
/// dropping out when `T = +∞`.
pub fn pareto_trunc_cdf(x: f64, p: &ParetoParams, upper: UpperBound) -> f64 {
    let t = p.scale_t;
    if x <= t {
        return 0.0;
    }
    let num = 1.0 - (x / t).powf(-1.0 / p.gamma);
    match upper {
        UpperBound::Infinite => num.clamp(0.0, 1.0),
        UpperBound::Finite(big_t) => {
            if x >= big_t {
                return 1.0;
            }
            (num / (1.0 - (big_t / t).powf(-1.0 / p.gamma))).clamp(0.0, 1.0)
        }
    }
}

/// Density matching [`pareto_trunc_cdf`].
pub fn pareto_trunc_pdf(x: f64, p: &ParetoParams, upper: UpperBound) -> f64 {
    let t = p.scale_t;
    if x < t {
        return 0.0;
    }
    if let UpperBound::Finite(big_t) = upper {
        if x > big_t {
            return 0.0;
        }
    }
    let base = (x / t).powf(-1.0 / p.gamma - 1.0) / (p.gamma * t);
    match upper {
        UpperBound::Infinite => base,
        UpperBound::Finite(big_t) => base / (1.0 - (big_t / t).powf(-1.0 / p.gamma)),
    }
}

/// Closed-form quantile of the truncated Pareto:
/// `F₂^{-1}(p) = t (1 − p + p (T/t)^{−1/γ})^{−γ}`.
pub fn pareto_trunc_quantile(p: f64, pareto: &ParetoParams, upper: UpperBound) -> f64 {
    let t = pareto.scale_t;
    let tail_factor = match upper {
        UpperBound::Infinite => 0.0,
        UpperBound::Finite(big_t) => (big_t / t).powf(-1.0 / pareto.gamma),
    };
    t * (1.0 - p + p * tail_factor).powf(-pareto.gamma)
}

// ---------------------------------------------------------------------------
// Spliced model
// ---------------------------------------------------------------------------

/// The fitted object: splicing weight, mixed-Erlang body on `(t_lower, t]`,
/// Pareto tail on `(t, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplicedModel {
    pub pi: f64,
    pub body: MeParams,
    pub tail: ParetoParams,
    pub t_lower: f64,
    pub t: f64,
    pub upper: UpperBound,
}

impl SplicedModel {
    pub fn new(
        pi: f64,
        body: MeParams,
        gamma: f64,
        t_lower: f64,
        t: f64,
        upper: UpperBound,
    ) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::invalid(format!(
                "splicing weight pi={pi} must lie in (0, 1)"
            )));
        }
        if !(t_lower >= 0.0 && t_lower < t) {
            return Err(Error::invalid(format!(
                "structural points must satisfy 0 <= t_lower < t, got t_lower={t_lower}, t={t}"
            )));
        }
        if let UpperBound::Finite(big_t) = upper {
            if !(big_t > t) {
                return Err(Error::invalid(format!(
                    "upper truncation T={big_t} must exceed t={t}"
                )));
            }
        }
        check_weights(&body.alphas, &body.shapes)?;
        check_weights(&body.betas, &body.shapes)?;
        let tail = ParetoParams::new(gamma, t)?;
        Ok(SplicedModel {
            pi,
            body,
            tail,
            t_lower,
            t,
            upper,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.tail.gamma
    }

    /// Spliced CDF; continuous, with `F(t) = π` and `F(T) = 1`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.t_lower {
            0.0
        } else if x <= self.t {
            self.pi * truncated_me_cdf(x, &self.body, self.t_lower, self.t)
        } else {
            match self.upper {
                UpperBound::Finite(big_t) if x >= big_t => 1.0,
                _ => self.pi + (1.0 - self.pi) * pareto_trunc_cdf(x, &self.tail, self.upper),
            }
        }
    }

    /// Spliced density.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= self.t_lower {
            0.0
        } else if x <= self.t {
            self.pi * truncated_me_pdf(x, &self.body, self.t_lower, self.t)
        } else {
            match self.upper {
                UpperBound::Finite(big_t) if x >= big_t => 0.0,
                _ => (1.0 - self.pi) * pareto_trunc_pdf(x, &self.tail, self.upper),
            }
        }
    }

    /// Quantile function. The body part is inverted numerically on
    /// `[t_lower, t]` (bisection sharpened by Newton, 1e-10 relative); the
    /// tail uses the closed-form Pareto quantile.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::invalid(format!(
                "quantile probability p={p} outside [0, 1]"
            )));
        }
        if p <= self.pi {
            let target = p / self.pi;
            if target <= 0.0 {
                return Ok(self.t_lower);
            }
            if target >= 1.0 {
                return Ok(self.t);
            }
            Ok(invert_monotone_cdf(
                |x| truncated_me_cdf(x, &self.body, self.t_lower, self.t),
                |x| truncated_me_pdf(x, &self.body, self.t_lower, self.t),
                target,
                self.t_lower,
                self.t,
            ))
        } else {
            let q = (p - self.pi) / (1.0 - self.pi);
            if q >= 1.0 {
                return Ok(self.upper.as_f64());
            }
            Ok(pareto_trunc_quantile(q, &self.tail, self.upper))
        }
    }

    /// `n` i.i.d. draws, deterministic for a given seed. Body components are
    /// sampled by inverse CDF on their truncation window, so narrow windows
    /// cost no rejection loops.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample_with(n, &mut rng)
    }

    /// Same as [`SplicedModel::sample`] with a caller-provided RNG.
    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            if u < self.pi {
                out.push(self.sample_body(rng));
            } else {
                let v: f64 = rng.gen();
                out.push(pareto_trunc_quantile(v, &self.tail, self.upper));
            }
        }
        out
    }

    fn sample_body<R: Rng>(&self, rng: &mut R) -> f64 {
        let me = &self.body;
        let mut w: f64 = rng.gen();
        let mut j = me.betas.len() - 1;
        for (idx, &b) in me.betas.iter().enumerate() {
            if w < b {
                j = idx;
                break;
            }
            w -= b;
        }
        let r = me.shapes[j];
        let f_lo = erlang_cdf_raw(self.t_lower, r, me.theta);
        let mass = erlang_window_mass(r, me.theta, self.t_lower, self.t);
        let target = f_lo + rng.gen::<f64>() * mass;
        invert_monotone_cdf(
            |x| erlang_cdf_raw(x, r, me.theta),
            |x| erlang_pdf_raw(x, r, me.theta),
            target,
            self.t_lower,
            self.t,
        )
    }
}

/// Invert a monotone CDF on `[lo, hi]`: bisection bracket maintained
/// throughout, Newton steps taken whenever they stay inside the bracket.
fn invert_monotone_cdf(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    target: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = cdf(x) - target;
        if fx > 0.0 {
            b = x;
        } else {
            a = x;
        }
        if (b - a) <= 1e-10 * b.abs().max(1e-300) {
            break;
        }
        let dfx = pdf(x);
        let newton = x - fx / dfx;
        x = if dfx > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    x
}

// ---------------------------------------------------------------------------
// JSON persistence
// ---------------------------------------------------------------------------

/// Flat JSON document for a fitted model; `"inf"` encodes an unbounded `T`.
#[derive(Serialize, Deserialize)]
struct ModelJson {
    pi: f64,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    shapes: Vec<u32>,
    theta: f64,
    gamma: f64,
    t_lower: f64,
    t: f64,
    #[serde(rename = "T")]
    upper: UpperJson,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum UpperJson {
    Num(f64),
    Str(String),
}

impl Serialize for SplicedModel {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let upper = match self.upper {
            UpperBound::Finite(t) => UpperJson::Num(t),
            UpperBound::Infinite => UpperJson::Str("inf".to_string()),
        };
        ModelJson {
            pi: self.pi,
            alphas: self.body.alphas.clone(),
            betas: self.body.betas.clone(),
            shapes: self.body.shapes.clone(),
            theta: self.body.theta,
            gamma: self.tail.gamma,
            t_lower: self.t_lower,
            t: self.t,
            upper,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SplicedModel {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let raw = ModelJson::deserialize(deserializer)?;
        let upper = match raw.upper {
            UpperJson::Num(x) if x.is_finite() => UpperBound::Finite(x),
            UpperJson::Num(x) => return Err(DeError::custom(format!("invalid T value {x}"))),
            UpperJson::Str(s) => {
                let norm = s.trim().to_ascii_lowercase();
                if norm == "inf" || norm == "+inf" || norm == "infinity" {
                    UpperBound::Infinite
                } else {
                    return Err(DeError::custom(format!("invalid T value {s:?}")));
                }
            }
        };
        // Trust the stored betas only if they agree with the alpha transform.
        let derived = alpha_to_beta(&raw.alphas, &raw.shapes, raw.theta, raw.t_lower, raw.t)
            .map_err(DeError::custom)?;
        for (stored, fresh) in raw.betas.iter().zip(&derived) {
            if (stored - fresh).abs() > 1e-6 {
                return Err(DeError::custom(
                    "betas are inconsistent with alphas for the stored truncation window",
                ));
            }
        }
        let body = MeParams {
            alphas: raw.alphas,
            betas: raw.betas,
            shapes: raw.shapes,
            theta: raw.theta,
        };
        SplicedModel::new(raw.pi, body, raw.gamma, raw.t_lower, raw.t, upper)
            .map_err(DeError::custom)
    }
}

impl SplicedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("model JSON: {e}")))
    }
}
