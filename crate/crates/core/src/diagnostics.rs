//! Goodness-of-fit diagnostics: survival/QQ/PP plot data, KS and AD
//! statistics with the lower truncation built into the fitted CDF, and
//! bootstrap p-values.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{turnbull_fit, CensoredObservation};
use crate::em::{fit, FitConfig};
use crate::error::{Error, Result};
use crate::model::SplicedModel;

/// Which diagnostic point set to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Survival,
    Qq,
    Pp,
    PpMinusLog,
}

/// A tabular point set ready for CSV export.
#[derive(Debug, Clone)]
pub struct PlotData {
    pub kind: PlotKind,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotData {
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Dvoretzky–Kiefer–Wolfowitz band half-width √(ln(2/α) / (2n)).
pub fn dkw_halfwidth(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Diagnostic plot data for a fitted model.
///
/// Uncensored data is compared against the ECDF (survival plots carry the
/// 95% DKW band half-width); censored data against the Turnbull estimate,
/// with bands left to the caller's bootstrap.
pub fn plot_data(
    obs: &[CensoredObservation],
    model: &SplicedModel,
    kind: PlotKind,
) -> Result<PlotData> {
    let uncensored: Option<Vec<f64>> = obs.iter().map(|o| o.value()).collect();
    let (points, have_band): (Vec<(f64, f64)>, bool) = match uncensored {
        Some(mut xs) => {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = xs.len() as f64;
            (
                xs.iter()
                    .enumerate()
                    .map(|(i, &x)| (x, (i + 1) as f64 / n))
                    .collect(),
                true,
            )
        }
        None => {
            let tb = turnbull_fit(obs, model.t_lower, model.upper, 1e-8, 10_000)?;
            (tb.step_points(), false)
        }
    };
    plot_data_against(
        &points,
        |x| model.cdf(x),
        |p| model.quantile(p),
        kind,
        have_band,
    )
}

/// Core plot-data builder against an arbitrary fitted CDF/quantile pair;
/// `points` are `(x, F̂(x))` steps of the empirical estimate.
pub(crate) fn plot_data_against(
    points: &[(f64, f64)],
    fitted_cdf: impl Fn(f64) -> f64,
    fitted_quantile: impl Fn(f64) -> Result<f64>,
    kind: PlotKind,
    have_band: bool,
) -> Result<PlotData> {
    let n = points.len();
    let mut rows = Vec::with_capacity(n);
    let columns;
    match kind {
        PlotKind::Survival => {
            let band = dkw_halfwidth(n, 0.05);
            if have_band {
                columns = vec!["x", "emp_survival", "fit_survival", "band_halfwidth"];
                for &(x, f_hat) in points {
                    rows.push(vec![x, 1.0 - f_hat, 1.0 - fitted_cdf(x), band]);
                }
            } else {
                columns = vec!["x", "emp_survival", "fit_survival"];
                for &(x, f_hat) in points {
                    rows.push(vec![x, 1.0 - f_hat, 1.0 - fitted_cdf(x)]);
                }
            }
        }
        PlotKind::Qq => {
            columns = vec!["p", "emp_quantile", "fit_quantile"];
            for (i, &(x, _)) in points.iter().enumerate() {
                let p = (i + 1) as f64 / (n + 1) as f64;
                rows.push(vec![p, x, fitted_quantile(p)?]);
            }
        }
        PlotKind::Pp | PlotKind::PpMinusLog => {
            columns = vec!["emp_survival", "fit_survival"];
            for &(x, f_hat) in points {
                let emp = 1.0 - f_hat;
                let fit = 1.0 - fitted_cdf(x);
                if kind == PlotKind::PpMinusLog {
                    if emp <= 0.0 || fit <= 0.0 {
                        continue;
                    }
                    rows.push(vec![-emp.ln(), -fit.ln()]);
                } else {
                    rows.push(vec![emp, fit]);
                }
            }
        }
    }
    Ok(PlotData {
        kind,
        columns,
        rows,
    })
}

/// Kolmogorov–Smirnov statistic: exact sup over the ECDF jump points,
/// `D = max_i max(|i/n − F(x_(i))|, |(i−1)/n − F(x_(i))|)`.
pub fn ks_stat(xs: &[f64], model: &SplicedModel) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("ks_stat needs data"));
    }
    Ok(ks_stat_with(xs, |x| model.cdf(x)))
}

pub(crate) fn ks_stat_with(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - (i + 1) as f64 / n).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Anderson–Darling statistic via the rank formula on `U_(i) = F(x_(i))`:
/// `A² = −n − (1/n) Σ (2i−1)(ln U_(i) + ln(1 − U_(n+1−i)))`, with U clamped
/// away from {0, 1}.
pub fn ad_stat(xs: &[f64], model: &SplicedModel) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("ad_stat needs data"));
    }
    Ok(ad_stat_with(xs, |x| model.cdf(x)))
}

pub(crate) fn ad_stat_with(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut u: Vec<f64> = xs
        .iter()
        .map(|&x| cdf(x).clamp(1e-12, 1.0 - 1e-12))
        .collect();
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = u.len();
    let nf = n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        acc += (2.0 * i as f64 + 1.0) * (u[i].ln() + (1.0 - u[n - 1 - i]).ln());
    }
    (-nf - acc / nf).max(0.0)
}

/// KS/AD statistics on the original fit plus bootstrap p-values.
#[derive(Debug, Clone, Serialize)]
pub struct GofResult {
    pub ks_stat: f64,
    pub ad_stat: f64,
    pub ks_pvalue: f64,
    pub ad_pvalue: f64,
    pub n_bootstrap: usize,
    pub failed_replicates: usize,
    pub seed: u64,
}

impl GofResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gof serialization cannot fail")
    }
}

/// Bootstrap goodness-of-fit p-values for an uncensored sample.
///
/// Each replicate resamples `n` values with replacement, refits starting from
/// the original model (shapes fixed — re-running the structure search per
/// replicate is the caller's option via `reselect`), and computes both
/// statistics; the p-value is the proportion of replicate statistics
/// exceeding the original one. More than 10% failed replicate fits is an
/// error.
pub fn bootstrap_gof(
    xs: &[f64],
    model: &SplicedModel,
    cfg: &FitConfig,
    n_boot: usize,
    seed: u64,
    reselect: bool,
) -> Result<GofResult> {
    if xs.is_empty() || n_boot == 0 {
        return Err(Error::invalid("bootstrap needs data and n_boot >= 1"));
    }
    let ks0 = ks_stat(xs, model)?;
    let ad0 = ad_stat(xs, model)?;

    let replicated: Vec<Option<(f64, f64)>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_add((b as u64).wrapping_mul(0x9E3779B97F4A7C15)),
            );
            let resample: Vec<f64> = (0..xs.len())
                .map(|_| xs[rng.gen_range(0..xs.len())])
                .collect();
            let obs: Vec<CensoredObservation> = resample
                .iter()
                .map(|&x| CensoredObservation::exact(x))
                .collect();
            let refit = if reselect {
                crate::search::search(&obs, &crate::search::SearchConfig::new(cfg.clone()))
            } else {
                fit(&obs, cfg, Some(&model.body.shapes))
            };
            match refit {
                Ok(rep) => Some((
                    ks_stat_with(&resample, |x| rep.model.cdf(x)),
                    ad_stat_with(&resample, |x| rep.model.cdf(x)),
                )),
                Err(_) => None,
            }
        })
        .collect();

    let failed = replicated.iter().filter(|r| r.is_none()).count();
    if failed * 10 > n_boot {
        return Err(Error::Numerical(format!(
            "{failed}/{n_boot} bootstrap replicate fits failed"
        )));
    }
    let ok: Vec<(f64, f64)> = replicated.into_iter().flatten().collect();
    let ks_exceed = ok.iter().filter(|(ks, _)| *ks > ks0).count();
    let ad_exceed = ok.iter().filter(|(_, ad)| *ad > ad0).count();
    Ok(GofResult {
        ks_stat: ks0,
        ad_stat: ad0,
        ks_pvalue: ks_exceed as f64 / ok.len() as f64,
        ad_pvalue: ad_exceed as f64 / ok.len() as f64,
        n_bootstrap: n_boot,
        failed_replicates: failed,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MeParams, UpperBound};

    fn small_model() -> SplicedModel {
        let body = MeParams::from_alphas(vec![1.0], vec![1], 1.0, 0.0, 3.0).unwrap();
        SplicedModel::new(0.8, body, 0.6, 0.0, 3.0, UpperBound::Infinite).unwrap()
    }

    #[test]
    fn dkw_halfwidth_formula() {
        // n = 2167 at 95%
        let hw = dkw_halfwidth(2167, 0.05);
        assert!((hw - 0.02918).abs() < 1e-5, "hw={hw}");
    }

    #[test]
    fn ks_single_point() {
        // single point with F(x) = 0.5: D = max(|1 − 0.5|, |0 − 0.5|) = 0.5
        let m = small_model();
        let x = m.quantile(0.5).unwrap();
        let d = ks_stat(&[x], &m).unwrap();
        assert!((d - 0.5).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn ks_model_sample_is_small() {
        let m = small_model();
        let xs = m.sample(10_000, 99);
        let d = ks_stat(&xs, &m).unwrap();
        assert!(d < 0.03, "D={d} too large for a model sample");
    }

    #[test]
    fn ad_rank_formula_properties() {
        let m = small_model();
        let xs = m.sample(500, 4);
        let a = ad_stat(&xs, &m).unwrap();
        assert!(a >= 0.0);
        // invariance under a strictly increasing transform of data and model:
        // the rank formula only sees U = F(x), so feeding U against the
        // uniform CDF reproduces the statistic
        let us: Vec<f64> = xs.iter().map(|&x| m.cdf(x)).collect();
        let a_u = ad_stat_with(&us, |x| x.clamp(0.0, 1.0));
        assert!((a - a_u).abs() < 1e-9);
    }

    #[test]
    fn pp_points_on_diagonal_for_matching_cdf() {
        // fitted CDF taken equal to the ECDF step function: PP points land
        // exactly on the diagonal
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let points: Vec<(f64, f64)> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, (i + 1) as f64 / 5.0))
            .collect();
        let ecdf = |x: f64| points.iter().filter(|(p, _)| *p <= x).count() as f64 / 5.0;
        let pd = plot_data_against(&points, ecdf, |_| Ok(0.0), PlotKind::Pp, true).unwrap();
        for row in &pd.rows {
            assert!((row[0] - row[1]).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&row[0]) && (0.0..=1.0).contains(&row[1]));
        }
    }

    #[test]
    fn qq_close_to_diagonal_on_model_sample() {
        let m = small_model();
        let xs = m.sample(10_000, 123);
        let obs: Vec<CensoredObservation> =
            xs.iter().map(|&x| CensoredObservation::exact(x)).collect();
        let pd = plot_data(&obs, &m, PlotKind::Qq).unwrap();
        let range = xs.iter().cloned().fold(f64::MIN, f64::max)
            - xs.iter().cloned().fold(f64::MAX, f64::min);
        // drop the extreme upper tail where single draws dominate
        let deviations = pd
            .rows
            .iter()
            .filter(|r| r[0] < 0.99)
            .map(|r| (r[1] - r[2]).abs())
            .fold(0.0f64, f64::max);
        assert!(
            deviations < 0.05 * range,
            "qq deviation {deviations} vs range {range}"
        );
    }

    #[test]
    fn survival_plot_columns() {
        let m = small_model();
        let obs: Vec<CensoredObservation> = m
            .sample(50, 8)
            .iter()
            .map(|&x| CensoredObservation::exact(x))
            .collect();
        let pd = plot_data(&obs, &m, PlotKind::Survival).unwrap();
        assert_eq!(
            pd.columns,
            vec!["x", "emp_survival", "fit_survival", "band_halfwidth"]
        );
        assert_eq!(pd.rows.len(), 50);
        let csv = pd.to_csv();
        assert!(csv.starts_with("x,emp_survival,fit_survival,band_halfwidth\n"));

        // censored input switches to the Turnbull comparison without bands
        let mut obs = obs;
        obs[0] = CensoredObservation::interval(obs[0].lower * 0.5, obs[0].lower + 1.0).unwrap();
        let pd = plot_data(&obs, &m, PlotKind::Survival).unwrap();
        assert_eq!(pd.columns, vec!["x", "emp_survival", "fit_survival"]);
    }
}
