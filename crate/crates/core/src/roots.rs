//! Bracketed one-dimensional root finding and golden-section minimization.
//!
//! Every implicit equation in the eigenframework is monotone in its unknown
//! once written on a log scale, so a sign-change bracket certifies a unique
//! root. Newton steps are taken only while they stay inside the bracket and
//! shrink it fast enough; otherwise the solver bisects.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct RootOptions<T> {
    /// Absolute residual at which the root is accepted.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for RootOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::default_tolerance(),
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Root<T> {
    pub x: T,
    pub residual: T,
    pub iterations: usize,
}

/// Finds the root of a monotone `f` inside `[lo, hi]`.
///
/// `f` returns the value and its derivative; a non-finite derivative simply
/// disables the Newton step. Endpoint values may be infinite, only their
/// signs are used.
pub fn find_root<T, F>(mut f: F, lo: T, hi: T, opts: RootOptions<T>) -> Result<Root<T>>
where
    T: Scalar,
    F: FnMut(T) -> (T, T),
{
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::BracketFailure(format!(
            "bad interval [{lo}, {hi}]"
        )));
    }
    let (f_lo, _) = f(lo);
    if f_lo == T::zero() {
        return Ok(Root { x: lo, residual: T::zero(), iterations: 0 });
    }
    let (f_hi, _) = f(hi);
    if f_hi == T::zero() {
        return Ok(Root { x: hi, residual: T::zero(), iterations: 0 });
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(Error::BracketFailure(format!(
            "no sign change on [{lo}, {hi}]: f = ({f_lo}, {f_hi})"
        )));
    }
    // neg/pos ends of the bracket
    let (mut x_neg, mut x_pos) = if f_lo < T::zero() { (lo, hi) } else { (hi, lo) };

    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut x = half * (lo + hi);
    let mut step_old = (hi - lo).abs();
    let mut step = step_old;
    let (mut fx, mut dfx) = f(x);

    for it in 1..=opts.max_iter {
        if fx.is_nan() {
            return Err(Error::BracketFailure(format!("objective is NaN at {x}")));
        }
        if fx.abs() <= opts.tol {
            return Ok(Root { x, residual: fx, iterations: it });
        }
        if fx < T::zero() {
            x_neg = x;
        } else {
            x_pos = x;
        }
        let (a, b) = if x_neg < x_pos { (x_neg, x_pos) } else { (x_pos, x_neg) };
        let width = b - a;
        let scale = a.abs().max(b.abs()).max(T::one());
        if width <= T::epsilon() * scale * T::lit(4.0) {
            // bracket collapsed to machine precision: best attainable root
            return Ok(Root { x, residual: fx, iterations: it });
        }

        let newton_ok = dfx.is_finite() && dfx != T::zero() && fx.is_finite() && {
            let cand = x - fx / dfx;
            cand > a && cand < b && (two * fx).abs() <= (step_old * dfx).abs()
        };
        step_old = step;
        if newton_ok {
            step = fx / dfx;
            x = x - step;
        } else {
            step = half * width;
            x = a + step;
        }
        let r = f(x);
        fx = r.0;
        dfx = r.1;
    }
    if fx.abs() <= opts.tol {
        return Ok(Root { x, residual: fx, iterations: opts.max_iter });
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: fx.to_f64().unwrap_or(f64::NAN),
    })
}

/// Result of a golden-section search.
#[derive(Clone, Copy, Debug)]
pub struct Minimum<T> {
    pub x: T,
    pub value: T,
    pub iterations: usize,
}

/// Golden-section minimization of `f` on `[a, b]`, stopping when the
/// interval is narrower than `x_tol`. Assumes unimodality; callers that
/// cannot guarantee it should scan first.
pub fn golden_section<T, F>(mut f: F, a: T, b: T, x_tol: T, max_iter: usize) -> Minimum<T>
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a) > x_tol && iterations < max_iter {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        Minimum { x: c, value: fc, iterations }
    } else {
        Minimum { x: d, value: fd, iterations }
    }
}
