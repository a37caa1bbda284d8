//! Safeguarded scalar root finding: Newton with numeric derivative, falling
//! back to bisection on a bracketing interval when Newton stalls or escapes.

use crate::error::{Error, Result};

/// Newton iteration on `f` started at `x0`, constrained to stay positive.
///
/// Convergence: |Δx| / |x| < `rel_tol`. If an iterate leaves `(0, ∞)`, is
/// non-finite, or the budget is exhausted, the solve restarts as bisection on
/// `[bracket_lo, bracket_hi]` (expanded geometrically until the sign changes,
/// within the given bounds). Returns `Error::NoRoot` when no sign change
/// exists in the bracket.
pub fn newton_positive_with_bisection(
    f: impl Fn(f64) -> f64,
    x0: f64,
    rel_tol: f64,
    bracket_lo: f64,
    bracket_hi: f64,
    what: &'static str,
) -> Result<f64> {
    debug_assert!(x0 > 0.0);
    let mut x = x0;
    for _ in 0..100 {
        let fx = f(x);
        if !fx.is_finite() {
            break;
        }
        let h = x * 1e-7;
        let dfx = (f(x + h) - f(x - h)) / (2.0 * h);
        if !dfx.is_finite() || dfx == 0.0 {
            break;
        }
        let mut step = fx / dfx;
        // damp steps that would overshoot the positive axis
        while x - step <= 0.0 {
            step *= 0.5;
            if step.abs() < f64::MIN_POSITIVE {
                break;
            }
        }
        let x_new = x - step;
        if !x_new.is_finite() || x_new <= 0.0 {
            break;
        }
        if (x_new - x).abs() <= rel_tol * x_new.abs() {
            return Ok(x_new);
        }
        x = x_new;
    }
    bisect(f, bracket_lo, bracket_hi, rel_tol, what)
}

/// Bisection on `[lo, hi]` to relative tolerance `rel_tol`.
///
/// Scans a geometric grid first so a sign change hiding inside the bracket is
/// still found when `f(lo)` and `f(hi)` agree in sign.
pub fn bisect(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    what: &'static str,
) -> Result<f64> {
    debug_assert!(lo > 0.0 && hi > lo);
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        // geometric scan for an interior sign change
        let n = 64;
        let ratio = (hi / lo).powf(1.0 / n as f64);
        let mut prev = lo;
        let mut fprev = fa;
        let mut found = false;
        for i in 1..=n {
            let x = lo * ratio.powi(i);
            let fx = f(x);
            if fx == 0.0 {
                return Ok(x);
            }
            if fprev.is_finite() && fx.is_finite() && fprev * fx < 0.0 {
                a = prev;
                b = x;
                fa = fprev;
                fb = fx;
                found = true;
                break;
            }
            prev = x;
            fprev = fx;
        }
        if !found {
            return Err(Error::NoRoot { what, lo, hi });
        }
    }
    let _ = fb;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 || (b - a) <= rel_tol * mid.abs() {
            return Ok(mid);
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_finds_simple_root() {
        // x^2 = 2 on the positive axis
        let r = newton_positive_with_bisection(|x| x * x - 2.0, 1.0, 1e-12, 1e-6, 1e6, "sqrt2")
            .unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn falls_back_to_bisection() {
        // f has a kink that defeats Newton from x0 on the wrong side
        let f = |x: f64| if x < 1.0 { -1.0 } else { x - 1.5 };
        let r = newton_positive_with_bisection(f, 0.01, 1e-12, 1e-3, 1e3, "kink").unwrap();
        assert!((r - 1.5).abs() < 1e-9);
    }

    #[test]
    fn no_root_is_reported() {
        let err = bisect(|x| x * x + 1.0, 0.1, 10.0, 1e-10, "none").unwrap_err();
        match err {
            Error::NoRoot { what, .. } => assert_eq!(what, "none"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn interior_sign_change_is_scanned() {
        // same sign at both ends, two roots inside
        let f = |x: f64| (x - 1.0) * (x - 4.0);
        let r = bisect(f, 0.5, 5.0, 1e-12, "quad").unwrap();
        assert!((r - 1.0).abs() < 1e-9 || (r - 4.0).abs() < 1e-9);
    }
}
