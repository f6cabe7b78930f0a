//! Small numeric kernels shared by the law, fitting, and planner modules:
//! a three-term logsumexp, bracketed bisection, and golden-section search.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoSignChange {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
}

/// log(e^x + e^y + e^z), shifted to avoid overflow. Any subset of inputs may
/// be -inf (those terms drop out); all three -inf returns -inf.
pub fn logsumexp3(x: f64, y: f64, z: f64) -> f64 {
    let m = x.max(y).max(z);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((x - m).exp() + (y - m).exp() + (z - m).exp()).ln()
}

/// Root of f on [lo, hi] by bisection, run until the bracket width falls
/// below rel_tol relative to the midpoint. f must change sign on the bracket.
pub fn bisect_root(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    rel_tol: f64,
) -> Result<f64, NumericError> {
    let (mut lo, mut hi) = (lo, hi);
    let f_lo_init = f(lo);
    let f_hi_init = f(hi);
    if f_lo_init == 0.0 {
        return Ok(lo);
    }
    if f_hi_init == 0.0 {
        return Ok(hi);
    }
    if f_lo_init.signum() == f_hi_init.signum() {
        return Err(NumericError::NoSignChange {
            lo,
            hi,
            f_lo: f_lo_init,
            f_hi: f_hi_init,
        });
    }
    let low_sign = f_lo_init.signum();
    // 200 halvings exhaust f64 resolution on any bracket we use.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= rel_tol * mid.abs().max(f64::MIN_POSITIVE) || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == low_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minimum of a unimodal f on [lo, hi] by golden-section search; stops once
/// the bracket is narrower than abs_tol. Returns (argmin, f(argmin)).
pub fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, abs_tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > abs_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}
