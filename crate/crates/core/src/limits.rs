//! Special cases of the RF risk written out from their own formulas, for
//! cross-checking the general solver: KRR, the two ridgeless cases, the
//! student-equals-teacher case, infinite ridge and infinitely many samples.

use serde::{Deserialize, Serialize};

use crate::eigensolver::solve_ridgeless;
use crate::error::{Error, Result};
use crate::risk::{krr_risk, rf_risk};
use crate::roots::{find_root, RootOptions};
use crate::scalar::Scalar;
use crate::spectrum::TaskEigenstructure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitName {
    Krr,
    RidgelessUnderparam,
    RidgelessOverparam,
    Maloney,
    InfiniteRidge,
    LargeN,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct LimitCheckResult<T> {
    pub limit_name: LimitName,
    pub general_value: T,
    pub limit_value: T,
    pub relative_gap: T,
}

impl<T: Scalar> LimitCheckResult<T> {
    fn new(limit_name: LimitName, general_value: T, limit_value: T) -> Self {
        let denom = limit_value.abs().max(T::epsilon());
        Self {
            limit_name,
            general_value,
            limit_value,
            relative_gap: (general_value - limit_value).abs() / denom,
        }
    }
}

/// Ridgeless RF risk. With `γ` from `z(γ) = min(n, k)`:
/// `n < k`: `n/(n−q)·[Σ(1−Lᵢ)²vᵢ² + σ²] + n/(k−n)·[Σ(1−Lᵢ)vᵢ² + σ²]`;
/// `n > k`: `n/(n−k)·[Σ(1−Lᵢ)vᵢ² + σ²]`.
pub fn bach_ridgeless_risk<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, k: T) -> Result<T> {
    let c = solve_ridgeless(ts, n, k)?;
    let s = ts.mode_sums(c.gamma)?;
    let sigma2 = ts.noise_var();
    if n < k {
        Ok(n / (n - c.q) * (s.missed_sq + sigma2) + n / (k - n) * (s.missed + sigma2))
    } else {
        Ok(n / (n - k) * (s.missed + sigma2))
    }
}

/// Student-equals-teacher ridgeless risk: with `m = min(n, k)` and `Δ`
/// solving `1 = Σ λᵢ/(mλᵢ + Δ)`, the risk is `k/(k−n)·Δ` for `n < k` and
/// `n/(n−k)·Δ` for `n > k`.
pub fn maloney_risk<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, k: T) -> Result<T> {
    if ts.noise_var() != T::zero() {
        return Err(Error::invalid("student-equals-teacher needs zero noise"));
    }
    let same = |a: T, b: T| (a - b).abs() <= T::lit(1e-12) * a.abs().max(b.abs());
    let scale = ts.coeff_scale();
    let matched = ts
        .eigenvalues()
        .iter()
        .zip(ts.coeffs_sq())
        .all(|(&l, &v)| same(l, v * scale))
        && ts.tail().is_none_or(|t| same(t.alpha, t.beta) && same(scale, T::one()));
    if !matched {
        return Err(Error::invalid("student-equals-teacher needs vᵢ² = λᵢ"));
    }
    if (n - k).abs() <= T::epsilon() * n.max(k) {
        return Err(Error::SingularThreshold(format!("n = k = {n}")));
    }
    let m = n.min(k);
    let delta = if ts.rank_exceeds(m) {
        // Σ λᵢ/(mλᵢ + Δ) = (1/m)·z(Δ/m), decreasing in Δ
        let hi = ts.trace() * T::lit(2.0);
        let f = |t: T| {
            let d = t.exp();
            let (z, q) = ts.learnability_sums(d / m);
            (z / m - T::one(), -(z - q) / m)
        };
        let mut lo = hi;
        while f(lo.ln()).0 <= T::zero() {
            lo = lo / T::lit(16.0);
            if lo < T::min_positive_value() * T::lit(1e6) {
                return Err(Error::BracketFailure("no lower bracket for Δ".into()));
            }
        }
        find_root(f, lo.ln(), hi.ln(), RootOptions::default())?.x.exp()
    } else {
        // every mode is learned exactly
        T::zero()
    };
    if n < k {
        Ok(k / (k - n) * delta)
    } else {
        Ok(n / (n - k) * delta)
    }
}

/// `Σ vᵢ² + σ²`, the risk of the zero predictor.
pub fn infinite_ridge_risk<T: Scalar>(ts: &TaskEigenstructure<T>) -> Result<T> {
    ts.total_power()
}

/// `n → ∞` at fixed ridge: `κ → 0`, `z(γ) = k`, risk `Σ(1−Lᵢ)vᵢ² + σ²`.
pub fn large_n_risk<T: Scalar>(ts: &TaskEigenstructure<T>, k: T) -> Result<T> {
    if !ts.rank_exceeds(k) {
        return Ok(ts.noise_var());
    }
    let trace = ts.trace();
    let f = |t: T| {
        let (z, q) = ts.learnability_sums(t.exp());
        ((z - k) / k, -(z - q) / k)
    };
    let hi = T::lit(2.0) * trace / k;
    let mut lo = hi;
    while f(lo.ln()).0 <= T::zero() {
        lo = lo / T::lit(16.0);
        if lo < T::min_positive_value() * T::lit(1e6) {
            return Err(Error::BracketFailure("no lower bracket for γ".into()));
        }
    }
    let gamma = find_root(f, lo.ln(), hi.ln(), RootOptions::default())?.x.exp();
    Ok(ts.mode_sums(gamma)?.missed + ts.noise_var())
}

/// Parameters at which the general risk is evaluated for each limit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitGrid {
    /// Ridge for the KRR and large-n checks.
    pub ridge: f64,
    pub krr_k: f64,
    pub tiny_ridge: f64,
    pub huge_ridge: f64,
    pub large_n: f64,
}

impl Default for LimitGrid {
    fn default() -> Self {
        Self { ridge: 1e-2, krr_k: 1e9, tiny_ridge: 1e-10, huge_ridge: 1e12, large_n: 1e9 }
    }
}

/// Runs every limit check at `(n, k)`. Both ridgeless cases are covered by
/// also evaluating the swapped pair `(k, n)`; the student-equals-teacher
/// check uses the task's eigenvalues as its coefficients.
pub fn check_all_limits<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    k: T,
    grid: &LimitGrid,
) -> Result<Vec<LimitCheckResult<T>>> {
    let ridge = T::lit(grid.ridge);
    let mut out = Vec::with_capacity(6);

    let general = rf_risk(ts, n, T::lit(grid.krr_k), ridge)?.e_test;
    out.push(LimitCheckResult::new(LimitName::Krr, general, krr_risk(ts, n, ridge)?.e_test));

    let tiny = T::lit(grid.tiny_ridge);
    let (small, large) = if n < k { (n, k) } else { (k, n) };
    let general = rf_risk(ts, small, large, tiny)?.e_test;
    out.push(LimitCheckResult::new(
        LimitName::RidgelessUnderparam,
        general,
        bach_ridgeless_risk(ts, small, large)?,
    ));
    let general = rf_risk(ts, large, small, tiny)?.e_test;
    out.push(LimitCheckResult::new(
        LimitName::RidgelessOverparam,
        general,
        bach_ridgeless_risk(ts, large, small)?,
    ));

    let mut teacher = TaskEigenstructure::new(ts.eigenvalues().to_vec(), ts.eigenvalues().to_vec(), T::zero())?;
    if let Some(tail) = ts.tail() {
        let mut tail = *tail;
        tail.beta = tail.alpha;
        teacher = teacher.with_tail(tail)?;
    }
    let general = rf_risk(&teacher, n, k, tiny)?.e_test;
    out.push(LimitCheckResult::new(LimitName::Maloney, general, maloney_risk(&teacher, n, k)?));

    let huge = T::lit(grid.huge_ridge);
    let general = rf_risk(ts, n, k, huge)?.e_test;
    out.push(LimitCheckResult::new(LimitName::InfiniteRidge, general, infinite_ridge_risk(ts)?));

    let general = rf_risk(ts, T::lit(grid.large_n), k, ridge)?.e_test;
    out.push(LimitCheckResult::new(LimitName::LargeN, general, large_n_risk(ts, k)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{make_powerlaw_structure, PowerlawTask};

    fn powerlaw(alpha: f64, beta: f64, modes: usize, noise: f64) -> TaskEigenstructure<f64> {
        make_powerlaw_structure(&PowerlawTask::new(alpha, beta).unwrap(), modes)
            .unwrap()
            .with_noise(noise)
            .unwrap()
    }

    #[test]
    fn bach_matches_tiny_ridge() {
        let ts = powerlaw(1.5, 1.5, 5000, 0.3);
        for &(n, k) in &[(100.0, 300.0), (300.0, 100.0), (64.0, 70.0)] {
            let a = bach_ridgeless_risk(&ts, n, k).unwrap();
            let b = rf_risk(&ts, n, k, 1e-10).unwrap().e_test;
            assert!((a - b).abs() / a < 1e-3, "{n} {k}: {a} {b}");
        }
        assert!(matches!(bach_ridgeless_risk(&ts, 10.0, 10.0), Err(Error::SingularThreshold(_))));
    }

    #[test]
    fn bach_diverges_toward_threshold() {
        let ts = powerlaw(1.5, 1.5, 5000, 0.3);
        let far = bach_ridgeless_risk(&ts, 50.0, 100.0).unwrap();
        let near = bach_ridgeless_risk(&ts, 99.0, 100.0).unwrap();
        let nearer = bach_ridgeless_risk(&ts, 99.9, 100.0).unwrap();
        assert!(near > 10.0 * far && nearer > 5.0 * near);
    }

    #[test]
    fn maloney_matches_bach_and_is_symmetric() {
        let ts = powerlaw(1.5, 1.5, 5000, 0.0);
        let a = maloney_risk(&ts, 40.0, 90.0).unwrap();
        let b = bach_ridgeless_risk(&ts, 40.0, 90.0).unwrap();
        assert!((a - b).abs() / b < 1e-9, "{a} {b}");
        let swapped = maloney_risk(&ts, 90.0, 40.0).unwrap();
        assert!((a - swapped).abs() / a < 1e-12);
        assert!(maloney_risk(&powerlaw(1.5, 2.0, 100, 0.0), 10.0, 20.0).is_err());
        assert!(maloney_risk(&powerlaw(1.5, 1.5, 100, 0.1), 10.0, 20.0).is_err());
    }

    #[test]
    fn maloney_fully_learnable_task() {
        let ts = TaskEigenstructure::new(vec![0.25; 4], vec![0.25; 4], 0.0).unwrap();
        assert_eq!(maloney_risk(&ts, 5.0, 8.0).unwrap(), 0.0);
    }

    #[test]
    fn all_limits_close() {
        let ts = powerlaw(1.8, 1.4, 4000, 0.2);
        let results = check_all_limits(&ts, 120.0, 70.0, &LimitGrid::default()).unwrap();
        assert_eq!(results.len(), 6);
        for r in &results {
            assert!(r.relative_gap < 1e-3, "{r:?}");
        }
        let inf = results.iter().find(|r| r.limit_name == LimitName::InfiniteRidge).unwrap();
        assert!(inf.relative_gap < 1e-6);
        let krr = results.iter().find(|r| r.limit_name == LimitName::Krr).unwrap();
        assert!(krr.relative_gap < 1e-4);
    }
}
