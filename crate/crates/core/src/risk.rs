//! Omniscient risk estimates for RF regression and KRR, their bias/variance
//! splits, and the optimal-ridge search.

use serde::{Deserialize, Serialize};

use crate::eigensolver::{
    solve_krr_kappa, solve_krr_kappa_with, solve_rf_constants_with, solve_ridgeless_with,
    ImplicitConstants, SolverOptions,
};
use crate::error::{Error, Result};
use crate::roots::golden_section;
use crate::scalar::Scalar;
use crate::spectrum::TaskEigenstructure;

/// Overfitting coefficients above this are reported with
/// `near_threshold` set.
const THRESHOLD_FLAG: f64 = 1e4;

/// Predicted risks at one `(n, k, δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RiskReport<T> {
    pub e_test: T,
    pub e_train: T,
    /// `E_tr / E_te`.
    pub fitting_ratio: T,
    /// `E₀`, the factor by which test error exceeds the data-averaged bias.
    pub overfitting_coeff: T,
    pub bias_d: T,
    pub var_d: T,
    pub bias_df: T,
    pub var_df: T,
    pub constants: ImplicitConstants<T>,
    /// `E₀` is large: the point sits close to the interpolation threshold.
    pub near_threshold: bool,
}

/// Column names of [`RiskReport::csv_fields`].
pub const RISK_CSV_HEADER: [&str; 13] = [
    "n", "k", "delta", "kappa", "gamma", "e_test", "e_train", "ratio", "e0", "bias_d", "var_d",
    "bias_df", "var_df",
];

impl<T: Scalar> RiskReport<T> {
    /// Row matching [`RISK_CSV_HEADER`]; floats carry 17 significant digits
    /// and an infinite feature count is written as `inf`.
    pub fn csv_fields(&self) -> Vec<String> {
        let f = |x: T| format!("{:.16e}", x.to_f64().unwrap_or(f64::NAN));
        let c = &self.constants;
        vec![
            f(c.n),
            c.k.map_or_else(|| "inf".to_string(), f),
            f(c.ridge),
            f(c.kappa),
            f(c.gamma),
            f(self.e_test),
            f(self.e_train),
            f(self.fitting_ratio),
            f(self.overfitting_coeff),
            f(self.bias_d),
            f(self.var_d),
            f(self.bias_df),
            f(self.var_df),
        ]
    }
}

/// Number of random features: finite `k` (RF regression) or infinite (KRR).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case")]
pub enum Features<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Features<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Features::Finite(k) => Some(k),
            Features::Infinite => None,
        }
    }
}

/// Risk for either model: RF with `Finite(k)`, KRR with `Infinite`.
pub fn risk<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, features: Features<T>, ridge: T) -> Result<RiskReport<T>> {
    risk_with(ts, n, features, ridge, SolverOptions::default())
}

/// [`risk`] with explicit solver options.
pub fn risk_with<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    features: Features<T>,
    ridge: T,
    opts: SolverOptions<T>,
) -> Result<RiskReport<T>> {
    match features {
        Features::Finite(k) => {
            let c = if ridge == T::zero() {
                solve_ridgeless_with(ts, n, k, opts)?
            } else {
                solve_rf_constants_with(ts, n, k, ridge, opts)?
            };
            rf_risk_from_constants(ts, &c)
        }
        Features::Infinite => krr_risk_from_constants(ts, &solve_krr_kappa_with(ts, n, ridge, opts)?),
    }
}

/// RF regression risk. `δ = 0` is the ridgeless limit for both `n < k` and
/// `n > k`.
pub fn rf_risk<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, k: T, ridge: T) -> Result<RiskReport<T>> {
    risk_with(ts, n, Features::Finite(k), ridge, SolverOptions::default())
}

/// RF risk evaluated at already solved constants.
pub fn rf_risk_from_constants<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    c: &ImplicitConstants<T>,
) -> Result<RiskReport<T>> {
    let k = c.k.ok_or_else(|| Error::invalid("RF risk needs a finite feature count"))?;
    let (n, z, q) = (c.n, c.z, c.q);
    let s = ts.mode_sums(c.gamma)?;
    let sigma2 = ts.noise_var();
    // 1 − (q(k−2z)+z²)/(n(k−q)) = ((n−q)(k−q) − (z−q)²) / (n(k−q))
    let denom = (n - q) * (k - q) - (z - q) * (z - q);
    if !(denom > T::zero()) {
        return Err(Error::SingularThreshold(format!(
            "risk prefactor diverges at n = {n}, k = {k}, ridge = {}",
            c.ridge
        )));
    }
    let e0 = n * (k - q) / denom;
    let kappa_over_gamma = if c.kappa_vanishes { T::zero() } else { c.kappa / c.gamma };
    let bias_d = s.missed - kappa_over_gamma * k / (k - q) * s.cross + sigma2;
    let bias_df = s.missed_sq + sigma2;
    let e_test = e0 * bias_d;
    let ratio = fitting_ratio(c);
    Ok(RiskReport {
        e_test,
        e_train: ratio * e_test,
        fitting_ratio: ratio,
        overfitting_coeff: e0,
        bias_d,
        var_d: e_test - bias_d,
        bias_df,
        var_df: e_test - bias_df,
        constants: *c,
        near_threshold: e0 > T::lit(THRESHOLD_FLAG),
    })
}

/// `(δ/(nκ))²`, with the ridgeless limits `0` (κ > 0) and `(1 − k/n)²`
/// (κ = 0, n > k).
fn fitting_ratio<T: Scalar>(c: &ImplicitConstants<T>) -> T {
    if c.kappa_vanishes {
        let k = c.k.unwrap_or(c.n);
        let r = T::one() - k / c.n;
        return r * r;
    }
    let r = c.ridge / (c.n * c.kappa);
    r * r
}

/// KRR risk: `E₀ = n/(n − q)`, `E_te = E₀ · (Σ (κ/(λᵢ+κ))² vᵢ² + σ²)`.
pub fn krr_risk<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, ridge: T) -> Result<RiskReport<T>> {
    let c = solve_krr_kappa(ts, n, ridge)?;
    krr_risk_from_constants(ts, &c)
}

pub fn krr_risk_from_constants<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    c: &ImplicitConstants<T>,
) -> Result<RiskReport<T>> {
    let n = c.n;
    let s = ts.mode_sums(c.kappa)?;
    if !(n - c.q > T::zero()) {
        return Err(Error::SingularThreshold(format!("n − q ≤ 0 at n = {n}")));
    }
    let e0 = n / (n - c.q);
    let bias = s.missed_sq + ts.noise_var();
    let e_test = e0 * bias;
    let ratio = fitting_ratio(c);
    Ok(RiskReport {
        e_test,
        e_train: ratio * e_test,
        fitting_ratio: ratio,
        overfitting_coeff: e0,
        bias_d: bias,
        var_d: e_test - bias,
        bias_df: bias,
        var_df: e_test - bias,
        constants: *c,
        near_threshold: e0 > T::lit(THRESHOLD_FLAG),
    })
}

/// Per-mode learnabilities `Lᵢ = λᵢ/(λᵢ+γ)` and their total.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Learnabilities<T> {
    /// Explicit modes only.
    pub per_mode: Vec<T>,
    /// Contribution of the analytic tail.
    pub tail: T,
    pub total: T,
    /// `min(n, k)`.
    pub budget: T,
    /// `budget − total`; nonnegative up to tolerance, zero at zero ridge.
    pub slack: T,
}

pub fn learnabilities<T: Scalar>(c: &ImplicitConstants<T>, ts: &TaskEigenstructure<T>) -> Learnabilities<T> {
    let gamma = c.gamma;
    let per_mode: Vec<T> = ts
        .eigenvalues()
        .iter()
        .map(|&l| if l > T::zero() { l / (l + gamma) } else { T::zero() })
        .collect();
    let (total, _) = ts.learnability_sums(gamma);
    let (explicit, _) = ts.truncated().learnability_sums(gamma);
    let budget = c.k.map_or(c.n, |k| k.min(c.n));
    Learnabilities {
        per_mode,
        tail: total - explicit,
        total,
        budget,
        slack: budget - total,
    }
}

/// Result of [`optimal_ridge`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimalRidge<T> {
    pub ridge: T,
    pub report: RiskReport<T>,
    /// The scanned risk had more than one local minimum over log δ.
    pub non_unimodal: bool,
    /// Optimum is the ridgeless limit δ → 0⁺ (or the lowest grid point).
    pub at_lower_bound: bool,
    /// Optimum sits at the largest ridge scanned.
    pub at_upper_bound: bool,
}

/// Search settings for [`optimal_ridge_with`]. The ridge range is
/// `[lo, hi] · scale` with `scale` the top eigenvalue.
#[derive(Clone, Copy, Debug)]
pub struct RidgeSearch {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    /// Final interval width in ln δ.
    pub log_tol: f64,
}

impl Default for RidgeSearch {
    fn default() -> Self {
        Self { lo: 1e-12, hi: 1e6, grid_points: 41, log_tol: 1e-8 }
    }
}

/// Ridge minimizing predicted test error.
pub fn optimal_ridge<T: Scalar>(ts: &TaskEigenstructure<T>, n: T, features: Features<T>) -> Result<OptimalRidge<T>> {
    optimal_ridge_with(ts, n, features, RidgeSearch::default())
}

pub fn optimal_ridge_with<T: Scalar>(
    ts: &TaskEigenstructure<T>,
    n: T,
    features: Features<T>,
    search: RidgeSearch,
) -> Result<OptimalRidge<T>> {
    if search.grid_points < 3 || !(search.lo > 0.0 && search.hi > search.lo) {
        return Err(Error::invalid("ridge search needs lo > 0, hi > lo and at least 3 grid points"));
    }
    let scale = ts.eigenvalues().first().copied().filter(|&l| l > T::zero()).unwrap_or(T::one());
    let eval = |log_ridge: T| -> T {
        risk(ts, n, features, log_ridge.exp())
            .map(|r| r.e_test)
            .unwrap_or(T::infinity())
    };
    let t_lo = T::lit(search.lo.ln()) + scale.ln();
    let t_hi = T::lit(search.hi.ln()) + scale.ln();
    let m = search.grid_points;
    let grid: Vec<T> = (0..m)
        .map(|i| t_lo + (t_hi - t_lo) * T::from_count(i) / T::from_count(m - 1))
        .collect();
    let values: Vec<T> = grid.iter().map(|&t| eval(t)).collect();

    let best = (0..m)
        .filter(|&i| values[i].is_finite())
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap())
        .ok_or_else(|| Error::NoSolution("risk is not finite anywhere on the ridge grid".into()))?;
    let local_minima = (0..m)
        .filter(|&i| {
            let left = i == 0 || values[i] < values[i - 1];
            let right = i == m - 1 || values[i] < values[i + 1];
            values[i].is_finite() && left && right
        })
        .count();
    let non_unimodal = local_minima > 1;

    let (a, b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(m - 1)]);
    let found = golden_section(eval, a, b, T::lit(search.log_tol), 200);
    let (mut ridge, mut value) = (found.x.exp(), found.value);
    if values[best] < value {
        ridge = grid[best].exp();
        value = values[best];
    }
    let at_lower_bound = best == 0;
    if at_lower_bound {
        // compare against the ridgeless limit itself
        if let Ok(r0) = risk(ts, n, features, T::zero()) {
            if r0.e_test <= value {
                ridge = T::zero();
            }
        }
    }
    let report = risk(ts, n, features, ridge)?;
    Ok(OptimalRidge {
        ridge,
        report,
        non_unimodal,
        at_lower_bound,
        at_upper_bound: best == m - 1,
    })
}
