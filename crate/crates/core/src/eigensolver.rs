//! Solvers for the implicit constants of the eigenframework.
//!
//! KRR: `κ` solves `Σ λᵢ/(λᵢ+κ) + δ/κ = n`.
//! RF: `(κ, γ)` jointly solve `n = z(γ) + δ/κ` and `k = z(γ) + kκ/γ` with
//! `z(γ) = Σ λᵢ/(λᵢ+γ)`.
//!
//! Eliminating `κ` between the two RF equations leaves one equation in `γ`,
//! `γ (k − z)(n − z) = kδ`, whose log form is strictly increasing on the
//! admissible range `z(γ) < min(n, k)`. That makes the RF pair unique and
//! lets a single bracketed solve replace the nested inner/outer loop, which
//! is still available as [`solve_rf_constants_nested`] for cross-checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::{find_root, RootOptions};
use crate::scalar::Scalar;
use crate::spectrum::TaskEigenstructure;

/// Solved constants together with the problem they solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ImplicitConstants<T> {
    pub kappa: T,
    pub gamma: T,
    pub z: T,
    pub q: T,
    /// Relative residuals of the sample-side and feature-side equations
    /// (divided by `n` and `k`). The feature-side one is zero for KRR.
    pub residuals: (T, T),
    pub n: T,
    /// Number of features; `None` for KRR.
    pub k: Option<T>,
    pub ridge: T,
    /// Set by the ridgeless solve when `n > k`: `κ` is exactly zero and the
    /// sample-side equation is degenerate.
    pub kappa_vanishes: bool,
}

/// Options shared by all solvers. `tol` bounds the relative residuals.
pub type SolverOptions<T> = RootOptions<T>;

fn check_positive<T: Scalar>(name: &str, x: T) -> Result<()> {
    if !x.is_finite() || x <= T::zero() {
        return Err(Error::invalid(format!("{name} = {x} must be positive and finite")));
    }
    Ok(())
}

fn check_ridge<T: Scalar>(ridge: T) -> Result<()> {
    if !ridge.is_finite() || ridge < T::zero() {
        return Err(Error::invalid(format!("ridge = {ridge} must be nonnegative and finite")));
    }
    Ok(())
}

/// Halves (in steps of 4×) `x` starting from `start` until `below(x)` holds.
fn expand_down<T: Scalar>(start: T, mut below: impl FnMut(T) -> bool) -> Result<T> {
    let mut x = start;
    let floor = T::min_positive_value() * T::lit(1e6);
    while x > floor {
        x = x / T::lit(4.0);
        if below(x) {
            return Ok(x);
        }
    }
    Err(Error::BracketFailure(format!("no lower bracket above {floor}")))
}

/// `γ` with `z(γ) = target`, for `0 < target <` effective rank.
fn solve_z_equals<T: Scalar>(ts: &TaskEigenstructure<T>, target: T, opts: RootOptions<T>) -> Result<T> {
    let trace = ts.trace();
    // z(γ) ≤ Σλ/γ ≤ target/2 at the upper end
    let hi = T::lit(2.0) * trace / target;
    let lo = expand_down(hi, |g| ts.learnability_sums(g).0 > target)?;
    let root = find_root(
        |u: T| {
            let (z, q) = ts.learnability_sums(u.exp());
            ((z - target) / target, -(z - q) / target)
        },
        lo.ln(),
        hi.ln(),
        opts,
    )?;
    Ok(root.x.exp())
}

/// KRR implicit regularization with default options.
pub fn solve_krr_kappa<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, ridge: T) -> Result<ImplicitConstants<T>> {
    solve_krr_kappa_with(ts, n, ridge, RootOptions::default())
}

pub fn solve_krr_kappa_with<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    ridge: T,
    opts: SolverOptions<T>,
) -> Result<ImplicitConstants<T>> {
    check_positive("n", n)?;
    check_ridge(ridge)?;
    let trace = ts.trace();
    if ridge == T::zero() && !ts.rank_exceeds(n) {
        return Err(Error::NoSolution(format!(
            "zero ridge needs more than n = {n} nonzero eigenvalues, have {}",
            ts.effective_rank().unwrap_or(0)
        )));
    }
    if trace == T::zero() {
        let kappa = ridge / n;
        return Ok(ImplicitConstants {
            kappa,
            gamma: kappa,
            z: T::zero(),
            q: T::zero(),
            residuals: (T::zero(), T::zero()),
            n,
            k: None,
            ridge,
            kappa_vanishes: false,
        });
    }
    // left side ≤ n/2 at κ_hi
    let hi = T::lit(2.0) * (trace + ridge) / n;
    let lo = if ridge > T::zero() {
        ridge / n
    } else {
        expand_down(hi, |kappa| ts.learnability_sums(kappa).0 > n)?
    };
    let root = find_root(
        |t: T| {
            let kappa = t.exp();
            let (z, q) = ts.learnability_sums(kappa);
            let d = ridge / kappa;
            ((z + d - n) / n, -(z - q + d) / n)
        },
        lo.ln(),
        hi.ln(),
        opts,
    )?;
    let kappa = root.x.exp();
    let (z, q) = ts.learnability_sums(kappa);
    Ok(ImplicitConstants {
        kappa,
        gamma: kappa,
        z,
        q,
        residuals: ((z + ridge / kappa - n) / n, T::zero()),
        n,
        k: None,
        ridge,
        kappa_vanishes: false,
    })
}

/// RF implicit constants with default options.
pub fn solve_rf_constants<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    k: T,
    ridge: T,
) -> Result<ImplicitConstants<T>> {
    solve_rf_constants_with(ts, n, k, ridge, RootOptions::default())
}

pub fn solve_rf_constants_with<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    k: T,
    ridge: T,
    opts: SolverOptions<T>,
) -> Result<ImplicitConstants<T>> {
    check_positive("n", n)?;
    check_positive("k", k)?;
    check_ridge(ridge)?;
    if ridge == T::zero() {
        if n > k {
            return Err(Error::NoSolution(format!(
                "no solution at zero ridge with n = {n} > k = {k}; use the ridgeless limit"
            )));
        }
        return solve_ridgeless_with(ts, n, k, opts);
    }
    let m = n.min(k);
    let trace = ts.trace();
    if trace == T::zero() {
        let kappa = ridge / n;
        return Ok(finish_rf(ts, n, k, ridge, kappa, kappa));
    }
    let g_of = |u: T| -> (T, T) {
        let (z, q) = ts.learnability_sums(u.exp());
        if z >= m {
            return (T::neg_infinity(), T::nan());
        }
        let value = u + (k - z).ln() + (n - z).ln() - (k * ridge).ln();
        let slope = T::one() + (z - q) / (k - z) + (z - q) / (n - z);
        (value, slope)
    };
    let hi = (T::lit(2.0) * trace / m).max(T::lit(4.0) * ridge / n) * T::lit(1.01);
    let lo = expand_down(hi, |g| g_of(g.ln()).0 < T::zero())?;
    let root = find_root(g_of, lo.ln(), hi.ln(), opts)?;
    let gamma = root.x.exp();
    let (z, _) = ts.learnability_sums(gamma);
    // take κ from whichever equation has the better-conditioned gap
    let kappa = if (n - z) / n >= (k - z) / k {
        ridge / (n - z)
    } else {
        gamma * (k - z) / k
    };
    Ok(finish_rf(ts, n, k, ridge, kappa, gamma))
}

fn finish_rf<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    k: T,
    ridge: T,
    kappa: T,
    gamma: T,
) -> ImplicitConstants<T> {
    let (z, q) = ts.learnability_sums(gamma);
    ImplicitConstants {
        kappa,
        gamma,
        z,
        q,
        residuals: ((z + ridge / kappa - n) / n, (z + k * kappa / gamma - k) / k),
        n,
        k: Some(k),
        ridge,
        kappa_vanishes: false,
    }
}

/// RF constants by the nested routine: for each trial `κ`, solve
/// `n = z(γ) + δ/κ` for `γ`, then drive `k − z(γ) − kκ/γ` to zero over `κ`.
/// Slower than [`solve_rf_constants`]; kept as an independent check.
pub fn solve_rf_constants_nested<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    k: T,
    ridge: T,
    opts: SolverOptions<T>,
) -> Result<ImplicitConstants<T>> {
    check_positive("n", n)?;
    check_positive("k", k)?;
    check_positive("ridge", ridge)?;
    let rank = ts.effective_rank().map(T::from_count);
    // inner solve: z(γ) = n − δ/κ must lie in (0, rank)
    let inner = |kappa: T| -> Result<T> {
        let target = n - ridge / kappa;
        solve_z_equals(ts, target, opts)
    };
    let outer = |t: T| -> T {
        let kappa = t.exp();
        let target = n - ridge / kappa;
        if target <= T::zero() {
            return k;
        }
        if rank.is_some_and(|r| target >= r) {
            return T::neg_infinity();
        }
        match inner(kappa) {
            Ok(gamma) => {
                let (z, _) = ts.learnability_sums(gamma);
                (k - z - k * kappa / gamma) / k
            }
            Err(_) => T::nan(),
        }
    };
    let mut lo = (ridge / n).ln() + T::lit(1e-9);
    while outer(lo) <= T::zero() {
        lo = lo - (lo.abs() * T::lit(1e-3)).max(T::lit(1e-9));
        if lo <= (ridge / n).ln() {
            return Err(Error::BracketFailure("outer residual not positive near δ/n".into()));
        }
    }
    let mut hi = lo + T::one();
    let mut expansions = 0;
    while !(outer(hi) < T::zero()) {
        hi = hi + T::lit(2.0);
        expansions += 1;
        if expansions > 400 {
            return Err(Error::BracketFailure("outer residual never turns negative".into()));
        }
    }
    let root = find_root(|t| (outer(t), T::nan()), lo, hi, opts)?;
    let kappa = root.x.exp();
    let gamma = inner(kappa)?;
    Ok(finish_rf(ts, n, k, ridge, kappa, gamma))
}

/// Ridgeless limit `δ → 0⁺` of the RF constants.
pub fn solve_ridgeless<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, k: T) -> Result<ImplicitConstants<T>> {
    solve_ridgeless_with(ts, n, k, RootOptions::default())
}

pub fn solve_ridgeless_with<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    k: T,
    opts: SolverOptions<T>,
) -> Result<ImplicitConstants<T>> {
    check_positive("n", n)?;
    check_positive("k", k)?;
    if (n - k).abs() <= T::epsilon() * n.max(k) {
        return Err(Error::SingularThreshold(format!("n = k = {n}")));
    }
    let m = n.min(k);
    if !ts.rank_exceeds(m) {
        return Err(Error::NoSolution(format!(
            "ridgeless limit needs more than min(n, k) = {m} nonzero eigenvalues"
        )));
    }
    let gamma = solve_z_equals(ts, m, opts)?;
    let (z, q) = ts.learnability_sums(gamma);
    let (kappa, residuals, vanishes) = if n < k {
        let kappa = (k - n) * gamma / k;
        ((kappa), ((z - n) / n, (z + k * kappa / gamma - k) / k), false)
    } else {
        (T::zero(), (T::zero(), (z - k) / k), true)
    };
    Ok(ImplicitConstants {
        kappa,
        gamma,
        z,
        q,
        residuals,
        n,
        k: Some(k),
        ridge: T::zero(),
        kappa_vanishes: vanishes,
    })
}

/// Partial derivatives of the RF constants with respect to `n` and `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct ConstantDerivatives<T> {
    pub dgamma_dk: T,
    pub dkappa_dk: T,
    pub dgamma_dn: T,
    pub dkappa_dn: T,
}

/// Closed-form derivatives of `(κ, γ)` at a solved RF point, from implicit
/// differentiation of the two defining equations.
pub fn rf_derivatives<T: Scalar>(c: &ImplicitConstants<T>) -> Result<ConstantDerivatives<T>> {
    let k = c.k.ok_or_else(|| Error::invalid("derivatives need a finite feature count"))?;
    let (kappa, gamma, delta) = (c.kappa, c.gamma, c.ridge);
    let zq = c.z - c.q;
    let d = k * kappa * delta + zq * (k * kappa * kappa + gamma * delta);
    if d <= T::zero() {
        return Err(Error::SingularThreshold("degenerate Jacobian".into()));
    }
    Ok(ConstantDerivatives {
        dgamma_dk: -gamma * (gamma - kappa) * delta / d,
        dkappa_dk: kappa * kappa * (gamma - kappa) * zq / d,
        dgamma_dn: -k * gamma * kappa * kappa / d,
        dkappa_dn: -kappa * kappa * (k * kappa + zq * gamma) / d,
    })
}
