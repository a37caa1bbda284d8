//! Risk measures under the fitted splicing model: excess-loss premiums
//! Π(R) = E(X − R)₊, Value-at-Risk, and Tail Value-at-Risk.

use crate::error::{Error, Result};
use crate::model::{ln_erlang_pdf_raw, SplicedModel, UpperBound};

/// Stop-loss premium of an *untruncated* mixed Erlang with dense shapes
/// `1..=M`: Π₁*(R) = θ² Σ_m C_m f_E(R; m, θ) with C_m = Σ_{j=m}^M (j−m+1) α_j.
///
/// Sparse shape vectors are first expanded to a dense weight vector over
/// `1..=max(shape)` with zero weights on the missing shapes.
pub fn premium_me_star(retention: f64, alphas: &[f64], shapes: &[u32], theta: f64) -> f64 {
    debug_assert_eq!(alphas.len(), shapes.len());
    let m_dense = *shapes.last().expect("nonempty shapes") as usize;
    let mut dense = vec![0.0; m_dense];
    for (&a, &r) in alphas.iter().zip(shapes) {
        dense[(r - 1) as usize] += a;
    }
    // suffix sums: A_z = Σ_{j≥z} α_j, then C_m = Σ_{z≥m} A_z
    let mut tail_weight = vec![0.0; m_dense + 1];
    for z in (0..m_dense).rev() {
        tail_weight[z] = tail_weight[z + 1] + dense[z];
    }
    let mut coeff = vec![0.0; m_dense + 1];
    for m in (0..m_dense).rev() {
        coeff[m] = coeff[m + 1] + tail_weight[m];
    }
    let r0 = retention.max(0.0);
    let mut acc = 0.0;
    for m in 1..=m_dense {
        if coeff[m - 1] == 0.0 {
            continue;
        }
        let f = if r0 == 0.0 {
            if m == 1 {
                1.0 / theta
            } else {
                0.0
            }
        } else {
            ln_erlang_pdf_raw(r0, m as u32, theta).exp()
        };
        acc += coeff[m - 1] * f;
    }
    theta * theta * acc
}

/// ∫_lo^hi (z/t)^{−1/γ} dz, the unnormalized Pareto stop-loss kernel.
/// `hi = ∞` needs γ < 1; at exactly γ = 1 with finite bounds the power-law
/// antiderivative degenerates to the logarithm.
fn pareto_star_integral(lo: f64, hi: UpperBound, t: f64, gamma: f64) -> Result<f64> {
    match hi {
        UpperBound::Infinite => {
            if gamma >= 1.0 {
                return Err(Error::invalid(format!(
                    "infinite-mean tail: gamma={gamma} >= 1 with T = inf"
                )));
            }
            Ok(lo.powf(1.0 - 1.0 / gamma) * t.powf(1.0 / gamma) / (1.0 / gamma - 1.0))
        }
        UpperBound::Finite(h) => {
            if gamma == 1.0 {
                Ok(t * (h / lo).ln())
            } else {
                let e = 1.0 - 1.0 / gamma;
                Ok(t.powf(1.0 / gamma) * (h.powf(e) - lo.powf(e)) / e)
            }
        }
    }
}

/// Pareto stop-loss premium Π₂*(R) = ∫_R^∞ (z/t)^{−1/γ} dz for `R ≥ t`.
pub fn premium_pareto_star(retention: f64, t: f64, gamma: f64) -> Result<f64> {
    if !(retention >= t) {
        return Err(Error::invalid(format!(
            "retention {retention} must be >= t = {t}"
        )));
    }
    pareto_star_integral(retention, UpperBound::Infinite, t, gamma)
}

/// Excess-loss premium of the tail block, Π₂(R) = ∫_R^T (1 − F₂(z)) dz for
/// `t ≤ R < T`.
fn premium_tail_block(retention: f64, model: &SplicedModel) -> Result<f64> {
    let t = model.t;
    let gamma = model.gamma();
    match model.upper {
        UpperBound::Infinite => pareto_star_integral(retention, UpperBound::Infinite, t, gamma),
        UpperBound::Finite(big_t) => {
            let w = (big_t / t).powf(-1.0 / gamma);
            let kernel = pareto_star_integral(retention, model.upper, t, gamma)?;
            Ok((kernel - w * (big_t - retention)) / (1.0 - w))
        }
    }
}

/// Excess-loss premium of the body block, Π₁(R) = ∫_R^t (1 − F₁(z)) dz for
/// `t^l ≤ R < t`, assembled from the untruncated ME stop-loss and CDF.
fn premium_body_block(retention: f64, model: &SplicedModel) -> f64 {
    let me = &model.body;
    let f1_star = |x: f64| -> f64 {
        me.alphas
            .iter()
            .zip(&me.shapes)
            .map(|(&a, &r)| a * crate::model::erlang_cdf_raw(x, r, me.theta))
            .sum()
    };
    let f_t = f1_star(model.t);
    let f_tl = f1_star(model.t_lower);
    let star_r = premium_me_star(retention, &me.alphas, &me.shapes, me.theta);
    let star_t = premium_me_star(model.t, &me.alphas, &me.shapes, me.theta);
    ((f_t - 1.0) * (model.t - retention) + (star_r - star_t)) / (f_t - f_tl)
}

/// Excess-loss premium Π(R) = E(X − R)₊ under the spliced model.
///
/// Piecewise: zero beyond `T`; tail block only for `R ≥ t`; body, gap and
/// tail blocks for `t^l ≤ R < t`; and linear continuation below `t^l`.
pub fn premium(retention: f64, model: &SplicedModel) -> Result<f64> {
    if !retention.is_finite() {
        return Err(Error::invalid("retention must be finite"));
    }
    let pi = model.pi;
    if let UpperBound::Finite(big_t) = model.upper {
        if retention >= big_t {
            return Ok(0.0);
        }
    }
    if retention >= model.t {
        return Ok((1.0 - pi) * premium_tail_block(retention, model)?);
    }
    let tail_at_t = (1.0 - pi) * premium_tail_block(model.t, model)?;
    if retention >= model.t_lower {
        let body = premium_body_block(retention, model);
        return Ok((1.0 - pi) * (model.t - retention) + pi * body + tail_at_t);
    }
    // R < t^l: every loss pays at least t^l − R on top of the premium at t^l
    let body = premium_body_block(model.t_lower, model);
    Ok(
        (1.0 - pi) * (model.t - model.t_lower)
            + pi * body
            + tail_at_t
            + (model.t_lower - retention),
    )
}

/// Value-at-Risk at level `1 − p`: the `1 − p` quantile of the loss.
pub fn var(p: f64, model: &SplicedModel) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "tail probability p={p} must lie in (0, 1)"
        )));
    }
    model.quantile(1.0 - p)
}

/// Tail Value-at-Risk at level `1 − p`:
/// `TVaR = VaR + Π(VaR)/p` (the CDF is continuous everywhere).
pub fn tvar(p: f64, model: &SplicedModel) -> Result<f64> {
    let v = var(p, model)?;
    Ok(v + premium(v, model)? / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MeParams;

    fn table1_model() -> SplicedModel {
        let body =
            MeParams::from_alphas(vec![0.938, 0.051, 0.011], vec![1, 6, 16], 0.811, 1.0, 17.0)
                .unwrap();
        SplicedModel::new(0.976, body, 0.530, 1.0, 17.0, UpperBound::Infinite).unwrap()
    }

    #[test]
    fn me_star_examples() {
        // stop-loss at zero is the mean
        let theta = 2.7;
        assert!((premium_me_star(0.0, &[1.0], &[1], theta) - theta).abs() < 1e-12);
        // exponential stop-loss ∫_1^∞ e^{−x} dx = e^{−1}
        let e_inv = (-1.0f64).exp();
        assert!((premium_me_star(1.0, &[1.0], &[1], 1.0) - e_inv).abs() < 1e-14);
        // vanishing at large retentions
        assert!(premium_me_star(5000.0, &[0.5, 0.5], &[2, 7], 1.3) < 1e-300);
        // sparse densification: mean of a (0.4, 0.6) mix on shapes (2, 5)
        let mean = 1.5 * (0.4 * 2.0 + 0.6 * 5.0);
        assert!((premium_me_star(0.0, &[0.4, 0.6], &[2, 5], 1.5) - mean).abs() < 1e-12);
    }

    #[test]
    fn pareto_star_examples() {
        assert!((premium_pareto_star(2.0, 1.0, 0.5).unwrap() - 0.5).abs() < 1e-14);
        // R = t gives t/(1/γ − 1)
        let (t, g) = (3.0, 0.4);
        let expected = t / (1.0 / g - 1.0);
        assert!((premium_pareto_star(t, t, g).unwrap() - expected).abs() < 1e-12);
        let err = premium_pareto_star(2.0, 1.0, 1.0).unwrap_err();
        assert!(format!("{err}").contains("infinite-mean"));
    }

    #[test]
    fn premium_piecewise_boundaries() {
        let body = MeParams::from_alphas(vec![1.0], vec![2], 1.0, 0.0, 3.0).unwrap();
        let m = SplicedModel::new(0.8, body, 0.7, 0.0, 3.0, UpperBound::Finite(9.0)).unwrap();
        assert_eq!(premium(9.0, &m).unwrap(), 0.0);
        assert_eq!(premium(20.0, &m).unwrap(), 0.0);
        // linear continuation below the lower truncation point
        let body = MeParams::from_alphas(vec![1.0], vec![2], 1.0, 1.0, 4.0).unwrap();
        let m = SplicedModel::new(0.9, body, 0.5, 1.0, 4.0, UpperBound::Infinite).unwrap();
        let at_tl = premium(1.0, &m).unwrap();
        let below = premium(0.25, &m).unwrap();
        assert!((below - (at_tl + 0.75)).abs() < 1e-12);
    }

    /// Simpson's rule on a fixed grid, accurate enough here with many panels.
    fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
        let h = (hi - lo) / panels as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..panels {
            let x = lo + i as f64 * h;
            acc += if i % 2 == 0 { 2.0 } else { 4.0 } * f(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn premium_matches_survival_quadrature() {
        let m = table1_model();
        // ∫_R^∞ (1−F) dz, splitting at t and capping the Pareto tail where
        // the closed form takes over analytically
        for &r in &[1.0, 3.0, 5.0, 10.0, 16.9] {
            let body_part = integrate(|z| 1.0 - m.cdf(z), r, m.t, 20_000);
            let tail_part = premium_tail_block(m.t, &m).unwrap() * (1.0 - m.pi);
            let direct = premium(r, &m).unwrap();
            let oracle = body_part + tail_part;
            assert!(
                (direct - oracle).abs() < 1e-6,
                "R={r}: closed form {direct} vs quadrature {oracle}"
            );
        }
        // fully in the tail with finite T: pure quadrature oracle
        let body = MeParams::from_alphas(vec![0.6, 0.4], vec![1, 3], 0.9, 0.5, 4.0).unwrap();
        let m = SplicedModel::new(0.8, body, 0.7, 0.5, 4.0, UpperBound::Finite(60.0)).unwrap();
        for &r in &[0.9, 2.0, 4.0, 10.0, 59.0] {
            let oracle = integrate(|z| 1.0 - m.cdf(z), r, 60.0, 40_000);
            let direct = premium(r, &m).unwrap();
            assert!(
                (direct - oracle).abs() < 1e-6,
                "R={r}: closed form {direct} vs quadrature {oracle}"
            );
        }
    }

    #[test]
    fn danish_premiums_from_printed_parameters() {
        // premiums recomputed from the published, 3-decimal parameters; the
        // printed π leaves (1−π) with only ~2% precision, so the comparison
        // is against that error budget (the 1% reproduction check runs on a
        // freshly fitted model in the acceptance suite)
        let m = table1_model();
        let expected = [
            (1.0, 2.3657),
            (5.0, 1.0485),
            (10.0, 0.6884),
            (50.0, 0.1727),
            (100.0, 0.0933),
            (200.0, 0.0504),
            (300.0, 0.0352),
        ];
        for (r, want) in expected {
            let got = premium(r, &m).unwrap();
            assert!(
                (got - want).abs() / want < 0.04,
                "R={r}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn var_and_tvar_identities() {
        let m = table1_model();
        // p = 1 − π puts the VaR exactly at the splicing point
        let v = var(1.0 - m.pi, &m).unwrap();
        assert!((v - m.t).abs() < 1e-9);
        for &p in &[0.5, 0.1, 0.01, 0.001] {
            let v = var(p, &m).unwrap();
            assert!((m.cdf(v) - (1.0 - p)).abs() < 1e-8);
            let tv = tvar(p, &m).unwrap();
            // identity holds by construction
            assert_eq!(tv, v + premium(v, &m).unwrap() / p);
            assert!(tv >= v);
        }
        assert!(var(0.0, &m).is_err());
        assert!(var(1.0, &m).is_err());
    }

    #[test]
    fn tvar_nonincreasing_in_p() {
        let m = table1_model();
        let mut prev = f64::INFINITY;
        for &p in &[0.001, 0.01, 0.05, 0.2, 0.5, 0.9] {
            let tv = tvar(p, &m).unwrap();
            assert!(tv <= prev + 1e-12, "tvar should fall as p rises");
            prev = tv;
        }
    }
}
