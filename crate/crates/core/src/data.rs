//! Censored observations: CSV ingestion, classification into the five
//! splicing cases, and the Turnbull nonparametric CDF estimator for
//! interval-censored data.

use std::io::Read;

use crate::error::{Error, Result};
use crate::model::UpperBound;

/// One data point as a `(lower, upper)` interval; degenerate when uncensored.
///
/// Right-censored points carry `upper = f64::INFINITY`; left-censored points
/// carry `lower` equal to the lower truncation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoredObservation {
    pub lower: f64,
    pub upper: f64,
}

impl CensoredObservation {
    pub fn exact(x: f64) -> Self {
        CensoredObservation { lower: x, upper: x }
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower < 0.0 || lower.is_infinite() {
            return Err(Error::invalid(format!(
                "invalid interval ({lower}, {upper})"
            )));
        }
        if lower > upper {
            return Err(Error::invalid(format!(
                "lower {lower} exceeds upper {upper}"
            )));
        }
        Ok(CensoredObservation { lower, upper })
    }

    pub fn is_censored(&self) -> bool {
        self.lower < self.upper
    }

    /// The exact value, when uncensored.
    pub fn value(&self) -> Option<f64> {
        (!self.is_censored()).then_some(self.lower)
    }
}

/// The five configurations of an observation relative to the splicing point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    /// Uncensored, `x ≤ t`.
    I,
    /// Uncensored, `x > t`.
    II,
    /// Censored with `u ≤ t`.
    III,
    /// Censored with `l ≥ t`.
    IV,
    /// Censored straddling the splicing point: `l < t < u`.
    V,
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CaseLabel::I => "i",
            CaseLabel::II => "ii",
            CaseLabel::III => "iii",
            CaseLabel::IV => "iv",
            CaseLabel::V => "v",
        };
        f.write_str(s)
    }
}

/// Classify an observation for fixed structural points.
///
/// Boundary rules: censored with `u = t` is case III, censored with `l = t`
/// is case IV, uncensored with `x = t` is case I. A right-censored interval
/// (`upper = ∞`) under finite `T` is read as `(l, T]`.
pub fn classify_case(
    obs: &CensoredObservation,
    t_lower: f64,
    t: f64,
    upper: UpperBound,
) -> Result<CaseLabel> {
    let big_t = upper.as_f64();
    if obs.lower < t_lower {
        return Err(Error::invalid(format!(
            "observation ({}, {}) below lower truncation {t_lower}",
            obs.lower, obs.upper
        )));
    }
    if !obs.is_censored() {
        let x = obs.lower;
        if x > big_t {
            return Err(Error::invalid(format!(
                "observation {x} above upper truncation {big_t}"
            )));
        }
        return Ok(if x <= t { CaseLabel::I } else { CaseLabel::II });
    }
    let u_eff = obs.upper.min(big_t);
    if obs.upper.is_finite() && obs.upper > big_t {
        return Err(Error::invalid(format!(
            "censoring interval ({}, {}) exceeds upper truncation {big_t}",
            obs.lower, obs.upper
        )));
    }
    if u_eff <= t {
        Ok(CaseLabel::III)
    } else if obs.lower >= t {
        Ok(CaseLabel::IV)
    } else {
        Ok(CaseLabel::V)
    }
}

/// Parse observations from CSV with header `lower,upper`.
///
/// An empty or `inf` upper field means right-censored; `lower == upper` means
/// uncensored. Errors carry the offending 1-based data row.
pub fn parse_observations<R: Read>(source: R) -> Result<Vec<CensoredObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    {
        let headers = reader.headers().map_err(|e| Error::Data {
            row: 0,
            message: format!("cannot read header: {e}"),
        })?;
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 2
            || !cols[0].eq_ignore_ascii_case("lower")
            || !cols[1].eq_ignore_ascii_case("upper")
        {
            return Err(Error::Data {
                row: 0,
                message: format!("expected header `lower,upper`, got {cols:?}"),
            });
        }
    }
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Data {
            row,
            message: format!("{e}"),
        })?;
        let lower_s = record.get(0).unwrap_or("");
        let upper_s = record.get(1).unwrap_or("");
        let lower: f64 = lower_s.parse().map_err(|_| Error::Data {
            row,
            message: format!("unparsable lower {lower_s:?}"),
        })?;
        let upper = if upper_s.is_empty() || upper_s.eq_ignore_ascii_case("inf") {
            f64::INFINITY
        } else {
            upper_s.parse().map_err(|_| Error::Data {
                row,
                message: format!("unparsable upper {upper_s:?}"),
            })?
        };
        if lower.is_nan() || upper.is_nan() {
            return Err(Error::Data {
                row,
                message: "NaN value".to_string(),
            });
        }
        if lower < 0.0 {
            return Err(Error::Data {
                row,
                message: format!("negative lower {lower}"),
            });
        }
        if lower > upper {
            return Err(Error::Data {
                row,
                message: "lower exceeds upper".to_string(),
            });
        }
        out.push(CensoredObservation { lower, upper });
    }
    Ok(out)
}

/// Serialize observations back to the CSV format accepted by
/// [`parse_observations`].
pub fn observations_to_csv(obs: &[CensoredObservation]) -> String {
    let mut s = String::from("lower,upper\n");
    for o in obs {
        if o.upper.is_infinite() {
            s.push_str(&format!("{},inf\n", o.lower));
        } else {
            s.push_str(&format!("{},{}\n", o.lower, o.upper));
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Turnbull estimator
// ---------------------------------------------------------------------------

/// One support interval of the Turnbull NPMLE. `left_open` distinguishes the
/// half-open intervals `(q, p]` produced by censored endpoints from the
/// degenerate closed points of exact observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnbullInterval {
    pub left: f64,
    pub left_open: bool,
    pub right: f64,
}

/// Nonparametric CDF estimate on the Turnbull innermost intervals.
#[derive(Debug, Clone)]
pub struct TurnbullEstimate {
    intervals: Vec<TurnbullInterval>,
    masses: Vec<f64>,
    cum: Vec<f64>,
    /// Position each interval's mass is attributed to for CDF evaluation:
    /// the right endpoint, or the left endpoint when the right is infinite.
    positions: Vec<f64>,
    pub iterations: usize,
    pub loglik_trace: Vec<f64>,
}

impl TurnbullEstimate {
    pub fn support(&self) -> &[TurnbullInterval] {
        &self.intervals
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Right-continuous step CDF; each interval's mass counts once `x` has
    /// passed the interval's position.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.positions.partition_point(|&p| p <= x);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    /// Generalized inverse: left endpoint of the first interval at which the
    /// cumulative mass reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let k = self.cum.partition_point(|&c| c < p - 1e-12);
        let k = k.min(self.intervals.len() - 1);
        self.intervals[k].left
    }

    /// Step-function sample `(position, cdf)` per support interval.
    pub fn step_points(&self) -> Vec<(f64, f64)> {
        self.positions
            .iter()
            .copied()
            .zip(self.cum.iter().copied())
            .collect()
    }

    /// CSV export `x,cdf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,cdf\n");
        for (x, c) in self.step_points() {
            s.push_str(&format!("{x},{c}\n"));
        }
        s
    }
}

/// Exact reduction for fully uncensored data: the NPMLE is the ECDF, with
/// masses and cumulative values computed as integer-count ratios so they
/// match a directly computed ECDF bit for bit.
fn ecdf_estimate(
    obs: &[CensoredObservation],
    t_lower: f64,
    upper: UpperBound,
) -> Result<TurnbullEstimate> {
    let big_t = upper.as_f64();
    let mut xs = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        if o.lower < t_lower || o.lower > big_t {
            return Err(Error::ZeroMass {
                index: i,
                message: format!("observation outside [{t_lower}, {big_t}]"),
            });
        }
        xs.push(o.lower);
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    let mut intervals = Vec::new();
    let mut masses = Vec::new();
    let mut cum = Vec::new();
    let mut positions = Vec::new();
    let mut i = 0usize;
    let mut seen = 0usize;
    while i < n {
        let x = xs[i];
        let mut count = 0usize;
        while i < n && xs[i] == x {
            count += 1;
            i += 1;
        }
        seen += count;
        intervals.push(TurnbullInterval {
            left: x,
            left_open: false,
            right: x,
        });
        masses.push(count as f64 / n as f64);
        cum.push(seen as f64 / n as f64);
        positions.push(x);
    }
    // each tied observation contributes ln of its point's mass
    let loglik = n as f64 * masses.iter().map(|m| m * m.ln()).sum::<f64>();
    Ok(TurnbullEstimate {
        intervals,
        masses,
        cum,
        positions,
        iterations: 1,
        loglik_trace: vec![loglik],
    })
}

#[derive(Clone, Copy, PartialEq)]
enum EndKind {
    Left,
    Right,
}

/// Fit the Turnbull NPMLE by self-consistency iteration.
///
/// Support intervals come from the standard innermost-interval sweep over the
/// sorted endpoints; each observation's unit mass is then redistributed across
/// the support intervals it contains, proportionally to the current masses,
/// until the largest mass change drops below `tol`.
pub fn turnbull_fit(
    obs: &[CensoredObservation],
    t_lower: f64,
    upper: UpperBound,
    tol: f64,
    max_iter: usize,
) -> Result<TurnbullEstimate> {
    if obs.is_empty() {
        return Err(Error::invalid("turnbull requires at least one observation"));
    }
    if obs.iter().all(|o| !o.is_censored()) {
        return ecdf_estimate(obs, t_lower, upper);
    }
    let big_t = upper.as_f64();
    // effective intervals clipped to the truncation range
    let mut eff: Vec<(f64, bool, f64)> = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        if o.lower < t_lower || o.lower > big_t {
            return Err(Error::ZeroMass {
                index: i,
                message: format!("observation outside [{t_lower}, {big_t}]"),
            });
        }
        if o.is_censored() {
            eff.push((o.lower, true, o.upper.min(big_t)));
        } else {
            eff.push((o.lower, false, o.lower));
        }
    }

    // endpoint sweep: sort by (value, openness, Left-before-Right); an L
    // immediately followed by an R delimits an innermost interval
    let mut events: Vec<(f64, u8, u8, usize)> = Vec::with_capacity(2 * eff.len());
    for (l, open, u) in &eff {
        events.push((*l, u8::from(*open), 0, 0));
        events.push((*u, 0, 1, 0));
    }
    events.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut intervals: Vec<TurnbullInterval> = Vec::new();
    let mut last_left: Option<(f64, bool)> = None;
    for (v, open, kind, _) in &events {
        match if *kind == 0 {
            EndKind::Left
        } else {
            EndKind::Right
        } {
            EndKind::Left => last_left = Some((*v, *open == 1)),
            EndKind::Right => {
                if let Some((lv, lo)) = last_left.take() {
                    if intervals.last()
                        != Some(&TurnbullInterval {
                            left: lv,
                            left_open: lo,
                            right: *v,
                        })
                    {
                        intervals.push(TurnbullInterval {
                            left: lv,
                            left_open: lo,
                            right: *v,
                        });
                    }
                }
            }
        }
    }
    let k_total = intervals.len();
    debug_assert!(k_total > 0);

    // containment ranges: support intervals are disjoint and sorted, so the
    // ones inside a given observation form a contiguous run
    let contains = |iv: &TurnbullInterval, l: f64, open: bool, u: f64| -> bool {
        let start_ok = if open {
            if iv.left_open {
                iv.left >= l
            } else {
                iv.left > l
            }
        } else {
            // exact observation [x, x]
            iv.left == l && !iv.left_open
        };
        start_ok && iv.right <= u
    };
    let mut ranges: Vec<(usize, usize)> = Vec::with_capacity(eff.len());
    for (i, (l, open, u)) in eff.iter().enumerate() {
        let lo = intervals.partition_point(|iv| !contains(iv, *l, *open, *u) && iv.right < *u);
        let mut hi = lo;
        while hi < k_total && contains(&intervals[hi], *l, *open, *u) {
            hi += 1;
        }
        if hi == lo {
            return Err(Error::ZeroMass {
                index: i,
                message: "observation contains no Turnbull support interval".to_string(),
            });
        }
        ranges.push((lo, hi));
    }

    // self-consistency EM
    let n = eff.len() as f64;
    let mut masses = vec![1.0 / k_total as f64; k_total];
    let mut next = vec![0.0; k_total];
    let mut loglik_trace = Vec::new();
    let mut iterations = max_iter;
    let mut converged = false;
    for it in 1..=max_iter {
        next.iter_mut().for_each(|m| *m = 0.0);
        let mut loglik = 0.0;
        for &(lo, hi) in &ranges {
            let denom: f64 = masses[lo..hi].iter().sum();
            if denom <= 0.0 {
                return Err(Error::Numerical(
                    "turnbull mass vanished on an observation's support".to_string(),
                ));
            }
            loglik += denom.ln();
            for k in lo..hi {
                next[k] += masses[k] / denom;
            }
        }
        next.iter_mut().for_each(|m| *m /= n);
        loglik_trace.push(loglik);
        let delta = masses
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        std::mem::swap(&mut masses, &mut next);
        if delta < tol {
            iterations = it;
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "turnbull self-consistency",
            iterations: max_iter,
        });
    }
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= total);
    let mut cum = Vec::with_capacity(k_total);
    let mut acc = 0.0;
    for &m in &masses {
        acc += m;
        cum.push(acc);
    }
    let positions = intervals
        .iter()
        .map(|iv| {
            if iv.right.is_finite() {
                iv.right
            } else {
                iv.left
            }
        })
        .collect();
    Ok(TurnbullEstimate {
        intervals,
        masses,
        cum,
        positions,
        iterations,
        loglik_trace,
    })
}
