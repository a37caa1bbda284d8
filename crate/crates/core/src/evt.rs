//! Extreme-value utilities: Hill estimator, mean-excess values (empirical and
//! Turnbull-based), and endpoint / truncation-odds estimation for the
//! truncated Pareto tail.

use crate::data::{turnbull_fit, CensoredObservation};
use crate::error::{Error, Result};
use crate::model::UpperBound;
use crate::solve::bisect;

/// Hill estimator with threshold `t`: the mean of `ln(x/t)` over the strict
/// exceedances `x > t`.
pub fn hill(x: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("hill threshold must be positive"));
    }
    let mut sum = 0.0;
    let mut k = 0usize;
    for &xi in x {
        if xi > t {
            sum += (xi / t).ln();
            k += 1;
        }
    }
    if k == 0 {
        return Err(Error::invalid(format!(
            "no exceedances above threshold {t}"
        )));
    }
    Ok(sum / k as f64)
}

/// Mean-excess estimates at a ladder of thresholds.
///
/// `thresholds[i]` is the order statistic (or Turnbull quantile) at
/// probability `(n−k)/(n+1)` for `k = k_indices[i]`, and `excess[i]` is the
/// estimated `e(v) = E(X − v | X > v)` there.
#[derive(Debug, Clone)]
pub struct MeanExcessPoints {
    pub thresholds: Vec<f64>,
    pub excess: Vec<f64>,
    pub k_indices: Vec<usize>,
}

impl MeanExcessPoints {
    /// CSV export `k,v,e_hat`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,v,e_hat\n");
        for ((k, v), e) in self
            .k_indices
            .iter()
            .zip(&self.thresholds)
            .zip(&self.excess)
        {
            s.push_str(&format!("{k},{v},{e}\n"));
        }
        s
    }
}

/// Mean-excess values for a dataset.
///
/// Uncensored mode evaluates at the order statistics `x_{n−k,n}`; the
/// Turnbull mode integrates the estimated survival step function and
/// evaluates at the Turnbull quantiles of `(n−k)/(n+1)`. Thresholds whose
/// estimated survival is zero are omitted.
pub fn mean_excess(obs: &[CensoredObservation], use_turnbull: bool) -> Result<MeanExcessPoints> {
    let n = obs.len();
    if n < 3 {
        return Err(Error::invalid("mean excess needs at least 3 observations"));
    }
    if use_turnbull {
        let est = turnbull_fit(obs, 0.0, UpperBound::Infinite, 1e-8, 10_000)?;
        let steps = est.step_points();
        let mut out = MeanExcessPoints {
            thresholds: Vec::new(),
            excess: Vec::new(),
            k_indices: Vec::new(),
        };
        for k in 1..n {
            let p = (n - k) as f64 / (n + 1) as f64;
            let v = est.quantile(p);
            let sf_v = 1.0 - est.cdf(v);
            if sf_v <= 0.0 {
                continue;
            }
            out.thresholds.push(v);
            out.excess.push(survival_integral(&steps, v) / sf_v);
            out.k_indices.push(k);
        }
        Ok(out)
    } else {
        let mut xs = Vec::with_capacity(n);
        for o in obs {
            match o.value() {
                Some(x) => xs.push(x),
                None => {
                    return Err(Error::invalid(
                        "uncensored mean excess requires uncensored data; use the Turnbull mode",
                    ))
                }
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out = MeanExcessPoints {
            thresholds: Vec::new(),
            excess: Vec::new(),
            k_indices: Vec::new(),
        };
        for k in 1..n {
            let v = xs[n - k - 1]; // x_{n-k,n}
            let tail: &[f64] = &xs[n - k..];
            let mut sum = 0.0;
            let mut count = 0usize;
            for &x in tail {
                if x > v {
                    sum += x - v;
                    count += 1;
                }
            }
            // ties at the threshold shrink the exceedance set
            if count == 0 {
                continue;
            }
            out.thresholds.push(v);
            out.excess.push(sum / count as f64);
            out.k_indices.push(k);
        }
        Ok(out)
    }
}

/// ∫_v^∞ (1 − F̂(x)) dx over a step CDF given as `(position, cdf)` points.
/// Mass sitting beyond the last finite position is attributed to that
/// position, so the integral stops there.
fn survival_integral(steps: &[(f64, f64)], v: f64) -> f64 {
    let mut acc = 0.0;
    let mut prev_x = v;
    let mut prev_cdf = 0.0;
    for &(x, c) in steps {
        if x <= v {
            prev_cdf = c;
            continue;
        }
        acc += (x - prev_x) * (1.0 - prev_cdf);
        prev_x = x;
        prev_cdf = c;
    }
    acc
}

/// Hill estimator at the `(k+1)`-th largest observation, `H_{k,n}`.
fn hill_at_order_stat(sorted: &[f64], k: usize) -> f64 {
    let n = sorted.len();
    let threshold = sorted[n - k - 1];
    sorted[n - k..]
        .iter()
        .map(|&x| (x / threshold).ln())
        .sum::<f64>()
        / k as f64
}

/// Conditional MLE of the Pareto shape when the tail is upper truncated at an
/// unknown endpoint (estimated by the sample maximum): solves
/// `γ = H_{k,n} + ln R / (R^{1/γ} − 1)` with `R = x_{n,n} / x_{n−k,n}`.
///
/// The left side crosses the right only when `H_{k,n} < ln(R)/2`; otherwise
/// the equation has no positive root and `Error::NoRoot` is returned.
pub fn endpoint_gamma(x: &[f64], k: usize) -> Result<f64> {
    let n = x.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("need 0 < k < n, got k={k}, n={n}")));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !(sorted[0] > 0.0) {
        return Err(Error::invalid("endpoint estimation requires positive data"));
    }
    let x_max = sorted[n - 1];
    let x_k = sorted[n - k - 1];
    if x_max == x_k {
        return Err(Error::invalid(
            "sample maximum equals the threshold order statistic",
        ));
    }
    let h = hill_at_order_stat(&sorted, k);
    let a = (x_max / x_k).ln();
    bisect(
        |g: f64| g - h - a / ((x_max / x_k).powf(1.0 / g) - 1.0),
        1e-6,
        50.0,
        1e-12,
        "endpoint gamma",
    )
}

/// Truncation-odds estimator and the re-estimated endpoint:
///
/// `D̂_T = max{ (k/n) (R^{1/γ̂} − 1/(k+1)) / (1 − R^{1/γ̂}), 0 }` with
/// `R = x_{n−k,n}/x_{n,n}`, and `T̂ = max{ x_{n−k,n} (1 + k/(n D̂_T))^{γ̂},
/// x_{n,n} }`, clamped to the sample maximum when `D̂_T = 0`.
pub fn truncation_odds(x: &[f64], k: usize, gamma_hat: f64) -> Result<(f64, f64)> {
    let n = x.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("need 0 < k < n, got k={k}, n={n}")));
    }
    if !(gamma_hat > 0.0) {
        return Err(Error::invalid("gamma_hat must be positive"));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let x_max = sorted[n - 1];
    let x_k = sorted[n - k - 1];
    let ratio = (x_k / x_max).powf(1.0 / gamma_hat);
    let kf = k as f64;
    let nf = n as f64;
    let d_raw = (kf / nf) * (ratio - 1.0 / (kf + 1.0)) / (1.0 - ratio);
    let d_hat = d_raw.max(0.0);
    let t_hat = if d_hat > 0.0 {
        (x_k * (1.0 + kf / (nf * d_hat)).powf(gamma_hat)).max(x_max)
    } else {
        x_max
    };
    Ok((d_hat, t_hat))
}
