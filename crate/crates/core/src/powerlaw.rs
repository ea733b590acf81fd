//! Leading-order asymptotics for powerlaw tasks `λᵢ = i^{-α}`, `vᵢ² = i^{-β}`.
//!
//! Every closed form here is exact only to leading order in `n`. The
//! relative corrections scale as `n^{-γ}` with `γ = min(1, 2α + 1 − β)`,
//! available as [`error_exponent`], so tolerances can be set accordingly.
//! Continuum sums are valid for `κ ≪ 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::{find_root, RootOptions};
use crate::scalar::Scalar;
use crate::spectrum::PowerlawTask;

/// Half-width (relative) of the window around `β = α + 1` in which the
/// removable singularity of [`singular_fraction`] is evaluated by series.
const SINGULAR_WINDOW: f64 = 1e-6;

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if !(alpha > T::one()) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha = {alpha} must exceed 1")));
    }
    Ok(())
}

fn check_exponents<T: Scalar>(alpha: T, beta: T) -> Result<()> {
    check_alpha(alpha)?;
    if !(beta > T::one() && beta < T::lit(2.0) * alpha + T::one()) {
        return Err(Error::invalid(format!("beta = {beta} outside (1, 2·alpha + 1)")));
    }
    Ok(())
}

/// `π/(α sin(π/α))`, the coefficient of `κ^{-1/α}` in `Σ λᵢ/(λᵢ+κ)`.
pub fn learnability_constant<T: Scalar>(alpha: T) -> T {
    T::PI() / (alpha * (T::PI() / alpha).sin())
}

/// `(α − β + 1)/sin(π(β − 1)/α)`. At `β = α + 1` both vanish; the limit is
/// `α/π`, and near it the ratio is evaluated as `(α/π)·x/sin x` with
/// `x = π(α + 1 − β)/α`.
pub fn singular_fraction<T: Scalar>(alpha: T, beta: T) -> T {
    let eps = alpha + T::one() - beta;
    if eps.abs() < T::lit(SINGULAR_WINDOW) * alpha {
        let x = T::PI() * eps / alpha;
        return alpha / T::PI() * (T::one() + x * x / T::lit(6.0));
    }
    eps / (T::PI() * (beta - T::one()) / alpha).sin()
}

/// Continuum approximations of the three KRR eigensums at regularization
/// `κ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct ContinuumSums<T> {
    /// Σ λᵢ/(λᵢ+κ)
    pub learn: T,
    /// Σ (λᵢ/(λᵢ+κ))²
    pub learn_sq: T,
    /// Σ (κ/(λᵢ+κ))² vᵢ², when `β` was given
    pub missed_sq: Option<T>,
}

pub fn continuum_sums<T: Scalar>(alpha: T, kappa: T, beta: Option<T>) -> Result<ContinuumSums<T>> {
    check_alpha(alpha)?;
    if !(kappa > T::zero()) {
        return Err(Error::invalid(format!("kappa = {kappa} must be positive")));
    }
    let a2 = alpha * alpha;
    let sin_a = (T::PI() / alpha).sin();
    let scale = kappa.powf(-T::one() / alpha);
    let missed_sq = match beta {
        Some(b) => {
            check_exponents(alpha, b)?;
            Some(T::PI() / a2 * singular_fraction(alpha, b) * kappa.powf((b - T::one()) / alpha))
        }
        None => None,
    };
    Ok(ContinuumSums {
        learn: learnability_constant(alpha) * scale,
        learn_sq: T::PI() * (alpha - T::one()) / (a2 * sin_a) * scale,
        missed_sq,
    })
}

/// Zero-ridge implicit regularization `(π/(α sin(π/α)))^α n^{-α}`.
pub fn null_kappa<T: Scalar>(alpha: T, n: T) -> Result<T> {
    check_alpha(alpha)?;
    if !(n > T::zero()) {
        return Err(Error::invalid(format!("n = {n} must be positive")));
    }
    Ok(learnability_constant(alpha).powf(alpha) * n.powf(-alpha))
}

/// `n`-independent prefactor of [`null_risk`].
pub fn null_risk_prefactor<T: Scalar>(alpha: T, beta: T) -> Result<T> {
    check_exponents(alpha, beta)?;
    let bm1 = beta - T::one();
    Ok(T::PI().powf(beta) * singular_fraction(alpha, beta)
        / (alpha.powf(beta) * (T::PI() / alpha).sin().powf(bm1)))
}

/// Zero-noise, zero-ridge test risk
/// `π^β (α−β+1) / (α^β sin(π(β−1)/α) sin(π/α)^{β−1}) · n^{-(β−1)}`.
pub fn null_risk<T: Scalar>(task: &PowerlawTask<T>, n: T) -> Result<T> {
    Ok(null_risk_prefactor(task.alpha, task.beta)? * n.powf(T::one() - task.beta))
}

/// `γ = min(1, 2α + 1 − β)`: relative corrections to the closed forms are
/// `O(n^{-γ})`.
pub fn error_exponent<T: Scalar>(alpha: T, beta: T) -> T {
    T::one().min(T::lit(2.0) * alpha + T::one() - beta)
}

/// Noise variance `σ² = s² · null_risk` realizing relative noise `s²` at
/// `n` samples.
pub fn scaled_noise<T: Scalar>(task: &PowerlawTask<T>, n: T) -> Result<T> {
    if task.s_rel_sq == T::zero() {
        return Ok(T::zero());
    }
    Ok(task.s_rel_sq * null_risk(task, n)?)
}

/// Fitting ratio at implicit regularization `κ ≥ null_kappa`:
/// `R = (1 − Σ λᵢ/(λᵢ+κ) / n)²` with the continuum sum.
pub fn ratio_of_kappa<T: Scalar>(alpha: T, n: T, kappa: T) -> Result<T> {
    let z = continuum_sums(alpha, kappa, None)?.learn;
    if z > n * (T::one() + T::lit(64.0) * T::epsilon()) {
        return Err(Error::invalid(format!(
            "kappa = {kappa} is below the zero-ridge value {}",
            null_kappa(alpha, n)?
        )));
    }
    let r = (T::one() - z / n).max(T::zero());
    Ok(r * r)
}

/// Inverse of [`ratio_of_kappa`]: `κ = C^α n^{-α} (1 − √R)^{-α}` with
/// `C = π/(α sin(π/α))`.
pub fn kappa_of_ratio<T: Scalar>(alpha: T, n: T, ratio: T) -> Result<T> {
    check_ratio(ratio)?;
    Ok(null_kappa(alpha, n)? * (T::one() - ratio.sqrt()).powf(-alpha))
}

fn check_ratio<T: Scalar>(ratio: T) -> Result<()> {
    if !(ratio >= T::zero() && ratio < T::one()) {
        return Err(Error::invalid(format!("fitting ratio {ratio} outside [0, 1)")));
    }
    Ok(())
}

/// Leading-order test risk as a function of the fitting ratio `R`:
/// `null_risk · (α s² + (1 − √R)^{-(β−1)}) / (1 + (α − 1)√R)`.
pub fn risk_of_ratio<T: Scalar>(task: &PowerlawTask<T>, n: T, ratio: T) -> Result<T> {
    check_ratio(ratio)?;
    let (a, b) = (task.alpha, task.beta);
    let r = ratio.sqrt();
    let shape = (a * task.s_rel_sq + (T::one() - r).powf(T::one() - b)) / (T::one() + (a - T::one()) * r);
    Ok(null_risk(task, n)? * shape)
}

/// Sampled `(R, E_te(R))` curve for one task and sample count.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct RatioCurve<T> {
    pub task: PowerlawTask<T>,
    pub n: T,
    /// Multiplies every predicted risk.
    pub scale: T,
    pub samples: Vec<(T, T)>,
}

/// Largest ratio sampled; the asymptotics are not controlled near `R = 1`.
pub const MAX_CURVE_RATIO: f64 = 0.99;

impl<T: Scalar> RatioCurve<T> {
    /// `points` ratios evenly spaced on `[0, 0.99]`.
    pub fn new(task: &PowerlawTask<T>, n: T, points: usize, scale: T) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid("a ratio curve needs at least 2 points"));
        }
        if !(scale > T::zero()) {
            return Err(Error::invalid(format!("curve scale {scale} must be positive")));
        }
        let top = T::lit(MAX_CURVE_RATIO);
        let samples = (0..points)
            .map(|i| {
                let r = if i + 1 == points {
                    top
                } else {
                    top * T::from_count(i) / T::from_count(points - 1)
                };
                risk_of_ratio(task, n, r).map(|e| (r, e * scale))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { task: task.clone(), n, scale, samples })
    }

    /// Rescales the curve so its `R = 0` value equals `e_test_at_zero`.
    pub fn anchored(mut self, e_test_at_zero: T) -> Result<Self> {
        let base = self.samples[0].1 / self.scale;
        let scale = e_test_at_zero / base;
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::invalid(format!("cannot anchor curve at {e_test_at_zero}")));
        }
        for s in &mut self.samples {
            s.1 = s.1 / self.scale * scale;
        }
        self.scale = scale;
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioBranch {
    InteriorRoot,
    BoundaryZero,
}

/// Asymptotically optimal fitting ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimalRatioResult<T> {
    pub r_star: T,
    pub ratio_star: T,
    pub branch: RatioBranch,
    pub error_exponent: T,
}

/// `r* = √R*` solves `α − β − (α−1)βr + α(α−1)(1−r)^β s² = 0` on `[0, 1)`,
/// or is zero when the left side is already negative at `r = 0`.
pub fn optimal_ratio<T: Scalar>(task: &PowerlawTask<T>) -> Result<OptimalRatioResult<T>> {
    task.validate()?;
    let (a, b, s2) = (task.alpha, task.beta, task.s_rel_sq);
    let am1 = a - T::one();
    let f = |r: T| {
        let w = T::one() - r;
        let value = a - b - am1 * b * r + a * am1 * w.powf(b) * s2;
        let slope = -am1 * b - a * am1 * b * w.powf(b - T::one()) * s2;
        (value, slope)
    };
    let error_exponent = error_exponent(a, b);
    let (f0, d0) = f(T::zero());
    let (f1, d1) = f(T::one());
    // strictly decreasing: both slope terms are negative for α > 1, β > 0
    if !(d0 < T::zero() && d1 < T::zero() && f1 < T::zero()) {
        return Err(Error::NoSolution("optimal-ratio equation is not decreasing".into()));
    }
    if f0 < T::zero() {
        return Ok(OptimalRatioResult {
            r_star: T::zero(),
            ratio_star: T::zero(),
            branch: RatioBranch::BoundaryZero,
            error_exponent,
        });
    }
    let r_star = if f0 == T::zero() {
        T::zero()
    } else {
        let tol = T::epsilon() * T::lit(8.0) * f0.abs().max(T::one());
        find_root(f, T::zero(), T::one(), RootOptions { tol, max_iter: 400 })?.x
    };
    Ok(OptimalRatioResult {
        r_star,
        ratio_star: r_star * r_star,
        branch: RatioBranch::InteriorRoot,
        error_exponent,
    })
}

/// Relative noise `(β − α)/(α(α − 1))` at or below which interpolation
/// (`R* = 0`) is optimal. Negative when it never is.
pub fn interpolation_threshold<T: Scalar>(alpha: T, beta: T) -> Result<T> {
    check_exponents(alpha, beta)?;
    Ok((beta - alpha) / (alpha * (alpha - T::one())))
}

/// Lower bound `1 + (α−1)²/(2α²) (√R − √R*)²` on `E_te(R)/E_te(R*)`.
pub fn suboptimality_bound<T: Scalar>(task: &PowerlawTask<T>, ratio: T, ratio_star: T) -> Result<T> {
    check_ratio(ratio)?;
    check_ratio(ratio_star)?;
    let a = task.alpha;
    let c = (a - T::one()).powi(2) / (T::lit(2.0) * a * a);
    let d = ratio.sqrt() - ratio_star.sqrt();
    Ok(T::one() + c * d * d)
}
