//! Task eigenstructure: kernel eigenvalues, squared target coefficients,
//! label noise, and an optional analytic powerlaw tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Accumulator, Scalar};
use crate::tail::{self, Summand, EXPLICIT_PREFIX};

/// Declares that modes `start, start+1, …` continue as `λᵢ = i^{-α}`,
/// `vᵢ² = i^{-β}` (the latter times the structure's `coeff_scale`).
/// `start` is the 1-based index of the first implicit mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PowerlawTail<T> {
    pub alpha: T,
    pub beta: T,
    pub start: usize,
}

/// A tail sum together with a bound on the error of its integral part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct TailEstimate<T> {
    pub value: T,
    pub remainder_bound: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawTask<T> {
    eigenvalues: Vec<T>,
    coeffs_sq: Vec<T>,
    #[serde(default)]
    noise_var: T,
    #[serde(default)]
    tail: Option<PowerlawTail<T>>,
    #[serde(default = "one")]
    coeff_scale: T,
}

fn one<T: Scalar>() -> T {
    T::one()
}

/// Eigenvalues `λ₁ ≥ λ₂ ≥ … ≥ λ_M ≥ 0`, squared target coefficients `vᵢ²`,
/// noise variance `σ²`, and an optional powerlaw tail beyond mode `M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "RawTask<T>", into = "RawTask<T>")]
pub struct TaskEigenstructure<T> {
    eigenvalues: Vec<T>,
    coeffs_sq: Vec<T>,
    noise_var: T,
    tail: Option<PowerlawTail<T>>,
    coeff_scale: T,
}

impl<T: Scalar> TryFrom<RawTask<T>> for TaskEigenstructure<T> {
    type Error = Error;

    fn try_from(raw: RawTask<T>) -> Result<Self> {
        let mut ts = TaskEigenstructure::new(raw.eigenvalues, raw.coeffs_sq, raw.noise_var)?
            .with_coeff_scale(raw.coeff_scale)?;
        if let Some(tail) = raw.tail {
            ts = ts.with_tail(tail)?;
        }
        Ok(ts)
    }
}

impl<T: Scalar> From<TaskEigenstructure<T>> for RawTask<T> {
    fn from(ts: TaskEigenstructure<T>) -> Self {
        RawTask {
            eigenvalues: ts.eigenvalues,
            coeffs_sq: ts.coeffs_sq,
            noise_var: ts.noise_var,
            tail: ts.tail,
            coeff_scale: ts.coeff_scale,
        }
    }
}

/// Eigensums of the framework at regularization `γ`, with
/// `Lᵢ = λᵢ/(λᵢ+γ)`. Coefficient sums include `coeff_scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeSums<T> {
    /// Σ Lᵢ
    pub z: T,
    /// Σ Lᵢ²
    pub q: T,
    /// Σ (1−Lᵢ) vᵢ²
    pub missed: T,
    /// Σ (1−Lᵢ)² vᵢ²
    pub missed_sq: T,
    /// Σ Lᵢ(1−Lᵢ) vᵢ²
    pub cross: T,
    /// Σ vᵢ²
    pub power: T,
}

impl<T: Scalar> TaskEigenstructure<T> {
    pub fn new(eigenvalues: Vec<T>, coeffs_sq: Vec<T>, noise_var: T) -> Result<Self> {
        if eigenvalues.len() != coeffs_sq.len() {
            return Err(Error::invalid(format!(
                "{} eigenvalues but {} coefficients",
                eigenvalues.len(),
                coeffs_sq.len()
            )));
        }
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !l.is_finite() || l < T::zero() {
                return Err(Error::invalid(format!("eigenvalue {i} is {l}")));
            }
            if i > 0 && l > eigenvalues[i - 1] {
                return Err(Error::invalid(format!(
                    "eigenvalues must be non-increasing (index {i})"
                )));
            }
        }
        if let Some((i, v)) = coeffs_sq
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero())
        {
            return Err(Error::invalid(format!("coefficient {i} is {v}")));
        }
        check_noise(noise_var)?;
        Ok(Self {
            eigenvalues,
            coeffs_sq,
            noise_var,
            tail: None,
            coeff_scale: T::one(),
        })
    }

    /// Attaches a powerlaw tail starting right after the explicit modes.
    pub fn with_tail(mut self, tail: PowerlawTail<T>) -> Result<Self> {
        if !(tail.alpha > T::one()) || !tail.alpha.is_finite() {
            return Err(Error::invalid(format!("tail exponent alpha = {} must exceed 1", tail.alpha)));
        }
        if !tail.beta.is_finite() {
            return Err(Error::invalid("tail exponent beta must be finite"));
        }
        if tail.start != self.eigenvalues.len() + 1 {
            return Err(Error::invalid(format!(
                "tail must start at mode {}, got {}",
                self.eigenvalues.len() + 1,
                tail.start
            )));
        }
        if let Some(&last) = self.eigenvalues.last() {
            if T::from_count(tail.start).powf(-tail.alpha) > last {
                return Err(Error::invalid("tail eigenvalues must not exceed the last explicit one"));
            }
        }
        self.tail = Some(tail);
        Ok(self)
    }

    pub fn with_noise(mut self, noise_var: T) -> Result<Self> {
        check_noise(noise_var)?;
        self.noise_var = noise_var;
        Ok(self)
    }

    /// Multiplies every squared coefficient (explicit and tail) by `scale`.
    pub fn with_coeff_scale(mut self, scale: T) -> Result<Self> {
        if !scale.is_finite() || scale < T::zero() {
            return Err(Error::invalid(format!("coefficient scale {scale}")));
        }
        self.coeff_scale = scale;
        Ok(self)
    }

    /// Drops the analytic tail, keeping only explicit modes.
    pub fn truncated(&self) -> Self {
        Self { tail: None, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty() && self.tail.is_none()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// Explicit squared coefficients, before `coeff_scale`.
    pub fn coeffs_sq(&self) -> &[T] {
        &self.coeffs_sq
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn tail(&self) -> Option<&PowerlawTail<T>> {
        self.tail.as_ref()
    }

    pub fn coeff_scale(&self) -> T {
        self.coeff_scale
    }

    /// Number of strictly positive eigenvalues; `None` when a tail makes it
    /// infinite.
    pub fn effective_rank(&self) -> Option<usize> {
        if self.tail.is_some() {
            None
        } else {
            Some(self.eigenvalues.iter().filter(|&&l| l > T::zero()).count())
        }
    }

    /// True when more than `m` modes carry nonzero eigenvalue.
    pub fn rank_exceeds(&self, m: T) -> bool {
        match self.effective_rank() {
            None => true,
            Some(r) => T::from_count(r) > m,
        }
    }

    /// Σ λᵢ including the tail.
    pub fn trace(&self) -> T {
        let mut acc = Accumulator::new();
        for &l in self.eigenvalues.iter().rev() {
            acc.add(l);
        }
        if let Some(t) = &self.tail {
            acc.add(tail::zeta_tail(t.alpha, t.start));
        }
        acc.value()
    }

    /// Σ λᵢ vᵢ², the learnable component of the target.
    pub fn learnable_power(&self) -> Result<T> {
        let mut acc = Accumulator::new();
        for (&l, &v) in self.eigenvalues.iter().zip(&self.coeffs_sq) {
            acc.add(l * v);
        }
        let mut total = acc.value();
        if let Some(t) = &self.tail {
            if t.alpha + t.beta <= T::one() {
                return Err(Error::DivergentSum("Σ λᵢvᵢ² over the tail".into()));
            }
            total = total + tail::zeta_tail(t.alpha + t.beta, t.start);
        }
        Ok(total * self.coeff_scale)
    }

    /// Σ vᵢ² + σ², with the tail summed analytically.
    pub fn total_power(&self) -> Result<T> {
        Ok(self.total_power_estimate()?.value)
    }

    /// [`Self::total_power`] with a bound on the tail error: the integral
    /// estimate of the tail is off by less than one tail term.
    pub fn total_power_estimate(&self) -> Result<TailEstimate<T>> {
        let mut acc = Accumulator::new();
        for &v in self.coeffs_sq.iter().rev() {
            acc.add(v);
        }
        let mut remainder_bound = T::zero();
        if let Some(t) = &self.tail {
            if t.beta <= T::one() {
                return Err(Error::DivergentSum(format!(
                    "coefficient tail with beta = {} does not converge",
                    t.beta
                )));
            }
            acc.add(tail::zeta_tail(t.beta, t.start));
            let first_integrated = t.start.max(EXPLICIT_PREFIX);
            remainder_bound = T::from_count(first_integrated).powf(-t.beta) * self.coeff_scale;
        }
        Ok(TailEstimate {
            value: acc.value() * self.coeff_scale + self.noise_var,
            remainder_bound,
        })
    }

    /// (Σ Lᵢ, Σ Lᵢ²) at regularization `γ > 0`. The fast path used inside
    /// the implicit-equation solvers.
    pub fn learnability_sums(&self, gamma: T) -> (T, T) {
        let mut z = Accumulator::new();
        let mut q = Accumulator::new();
        for &l in self.eigenvalues.iter().rev() {
            if l > T::zero() {
                let li = l / (l + gamma);
                z.add(li);
                q.add(li * li);
            }
        }
        if let Some(t) = &self.tail {
            z.add(tail::tail_sum(t.alpha, Summand { weight_exp: T::zero(), j: 1, m: 1 }, gamma, t.start));
            q.add(tail::tail_sum(t.alpha, Summand { weight_exp: T::zero(), j: 2, m: 2 }, gamma, t.start));
        }
        (z.value(), q.value())
    }

    /// All eigensums of the framework at regularization `γ > 0`.
    pub fn mode_sums(&self, gamma: T) -> Result<ModeSums<T>> {
        let mut missed = Accumulator::new();
        let mut missed_sq = Accumulator::new();
        let mut cross = Accumulator::new();
        let mut power = Accumulator::new();
        for (&l, &v) in self.eigenvalues.iter().zip(&self.coeffs_sq).rev() {
            let miss = gamma / (l + gamma);
            let learn = l / (l + gamma);
            missed.add(miss * v);
            missed_sq.add(miss * miss * v);
            cross.add(learn * miss * v);
            power.add(v);
        }
        if let Some(t) = &self.tail {
            if t.beta <= T::one() {
                return Err(Error::DivergentSum(format!(
                    "coefficient tail with beta = {} does not converge",
                    t.beta
                )));
            }
            let b = t.beta;
            missed.add(tail::tail_sum(t.alpha, Summand { weight_exp: b, j: 0, m: 1 }, gamma, t.start));
            missed_sq.add(tail::tail_sum(t.alpha, Summand { weight_exp: b, j: 0, m: 2 }, gamma, t.start));
            cross.add(tail::tail_sum(t.alpha, Summand { weight_exp: b, j: 1, m: 2 }, gamma, t.start));
            power.add(tail::zeta_tail(b, t.start));
        }
        let (z, q) = self.learnability_sums(gamma);
        let c = self.coeff_scale;
        Ok(ModeSums {
            z,
            q,
            missed: missed.value() * c,
            missed_sq: missed_sq.value() * c,
            cross: cross.value() * c,
            power: power.value() * c,
        })
    }
}

fn check_noise<T: Scalar>(noise_var: T) -> Result<()> {
    if !noise_var.is_finite() || noise_var < T::zero() {
        return Err(Error::invalid(format!("noise variance {noise_var}")));
    }
    Ok(())
}

/// Powerlaw eigenstructure `λᵢ = i^{-α}`, `vᵢ² = i^{-β}` for `i ≥ i0`, with
/// relative noise level `s²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PowerlawTask<T> {
    pub alpha: T,
    pub beta: T,
    #[serde(default = "default_i0")]
    pub i0: usize,
    #[serde(default)]
    pub s_rel_sq: T,
    /// Explicit `(λᵢ, vᵢ²)` for `i < i0`.
    #[serde(default)]
    pub head_overrides: Option<Vec<(T, T)>>,
}

fn default_i0() -> usize {
    1
}

impl<T: Scalar> PowerlawTask<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        let task = Self {
            alpha,
            beta,
            i0: 1,
            s_rel_sq: T::zero(),
            head_overrides: None,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn with_noise(mut self, s_rel_sq: T) -> Result<Self> {
        self.s_rel_sq = s_rel_sq;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.alpha, self.beta);
        if !(a > T::one()) || !a.is_finite() {
            return Err(Error::invalid(format!("alpha = {a} must exceed 1")));
        }
        if !(b > T::one() && b < T::lit(2.0) * a + T::one()) {
            return Err(Error::invalid(format!(
                "beta = {b} must lie in (1, 2·alpha + 1) = (1, {})",
                T::lit(2.0) * a + T::one()
            )));
        }
        if self.i0 == 0 {
            return Err(Error::invalid("i0 must be at least 1"));
        }
        if !self.s_rel_sq.is_finite() || self.s_rel_sq < T::zero() {
            return Err(Error::invalid(format!("relative noise {}", self.s_rel_sq)));
        }
        if let Some(head) = &self.head_overrides {
            if head.len() != self.i0 - 1 {
                return Err(Error::invalid(format!(
                    "{} head overrides for i0 = {}",
                    head.len(),
                    self.i0
                )));
            }
        }
        Ok(())
    }
}

/// Builds `M` explicit modes of a powerlaw task plus its analytic tail.
/// Noise is left at zero: it depends on `n` (see
/// [`crate::powerlaw::scaled_noise`]).
pub fn make_powerlaw_structure<T: Scalar>(
    task: &PowerlawTask<T>,
    modes: usize,
) -> Result<TaskEigenstructure<T>> {
    task.validate()?;
    if modes < task.i0 || modes == 0 {
        return Err(Error::invalid(format!(
            "need at least i0 = {} explicit modes, got {modes}",
            task.i0
        )));
    }
    let mut eigenvalues = Vec::with_capacity(modes);
    let mut coeffs = Vec::with_capacity(modes);
    for i in 1..=modes {
        let head = task
            .head_overrides
            .as_ref()
            .and_then(|h| h.get(i - 1).copied())
            .filter(|_| i < task.i0);
        let (l, v) = head.unwrap_or_else(|| {
            let x = T::from_count(i);
            (x.powf(-task.alpha), x.powf(-task.beta))
        });
        eigenvalues.push(l);
        coeffs.push(v);
    }
    TaskEigenstructure::new(eigenvalues, coeffs, T::zero())?.with_tail(PowerlawTail {
        alpha: task.alpha,
        beta: task.beta,
        start: modes + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn powerlaw_first_modes() {
        let task = PowerlawTask::new(1.5, 1.5).unwrap();
        let ts = make_powerlaw_structure(&task, 4).unwrap();
        let want: Vec<f64> = (1..=4).map(|i| (i as f64).powf(-1.5)).collect();
        assert_eq!(ts.eigenvalues(), &want[..]);
        assert_eq!(ts.coeffs_sq(), &want[..]);
        assert_eq!(ts.tail().unwrap().start, 5);
        assert_eq!(ts.noise_var(), 0.0);

        let ts = make_powerlaw_structure(&PowerlawTask::new(2.0, 1.5).unwrap(), 1).unwrap();
        assert_eq!(ts.eigenvalues(), &[1.0]);
        assert_eq!(ts.coeffs_sq(), &[1.0]);
    }

    #[test]
    fn powerlaw_rejects_bad_arguments() {
        assert!(PowerlawTask::new(1.0, 1.5).is_err());
        assert!(PowerlawTask::new(1.5, 1.0).is_err());
        assert!(PowerlawTask::new(1.5, 4.0).is_err());
        let mut task = PowerlawTask::new(1.5, 1.5).unwrap();
        task.i0 = 3;
        task.head_overrides = Some(vec![(2.0, 1.0), (1.0, 0.5)]);
        assert!(make_powerlaw_structure(&task, 2).is_err());
        let ts = make_powerlaw_structure(&task, 5).unwrap();
        assert_eq!(ts.eigenvalues()[0], 2.0);
        assert_eq!(ts.coeffs_sq()[1], 0.5);
        assert_eq!(ts.eigenvalues()[2], 3f64.powf(-1.5));
    }

    #[test]
    fn total_power_finite_cases() {
        let ts = TaskEigenstructure::new(vec![1.0, 0.5], vec![1.0, 0.25], 0.5).unwrap();
        assert!((ts.total_power().unwrap() - 1.75f64).abs() < 1e-15);
        let empty = TaskEigenstructure::<f64>::new(vec![], vec![], 0.0).unwrap();
        assert_eq!(empty.total_power().unwrap(), 0.0);
    }

    #[test]
    fn total_power_with_tail_is_zeta() {
        // brute force Σ_{i≤10⁷} i^{-1.5} plus the integral bounds on the rest
        let n = 10_000_000usize;
        let mut acc = Accumulator::<f64>::new();
        for i in (1..=n).rev() {
            acc.add((i as f64).powf(-1.5));
        }
        let lower = acc.value() + 2.0 * ((n + 1) as f64).powf(-0.5);
        let upper = acc.value() + 2.0 * (n as f64).powf(-0.5);
        let ts = TaskEigenstructure::new(vec![1.0], vec![1.0], 0.0)
            .unwrap()
            .with_tail(PowerlawTail { alpha: 1.5, beta: 1.5, start: 2 })
            .unwrap();
        let p = ts.total_power().unwrap();
        assert!(p >= lower - 1e-12 && p <= upper + 1e-12, "{lower} <= {p} <= {upper}");
        assert!((p - 2.612375).abs() < 1e-6);
    }

    #[test]
    fn divergent_tail_is_an_error() {
        let ts = TaskEigenstructure::new(vec![1.0], vec![1.0], 0.0)
            .unwrap()
            .with_tail(PowerlawTail { alpha: 1.5, beta: 1.0, start: 2 })
            .unwrap();
        assert!(matches!(ts.total_power(), Err(Error::DivergentSum(_))));
        assert!(matches!(ts.mode_sums(0.1), Err(Error::DivergentSum(_))));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(TaskEigenstructure::new(vec![0.5, 1.0], vec![1.0, 1.0], 0.0).is_err());
        assert!(TaskEigenstructure::new(vec![1.0], vec![1.0, 1.0], 0.0).is_err());
        assert!(TaskEigenstructure::new(vec![1.0], vec![-1.0], 0.0).is_err());
        assert!(TaskEigenstructure::new(vec![1.0], vec![1.0], -0.1).is_err());
        let ts = TaskEigenstructure::new(vec![1.0], vec![1.0], 0.0).unwrap();
        assert!(ts.clone().with_tail(PowerlawTail { alpha: 1.0, beta: 2.0, start: 2 }).is_err());
        assert!(ts.with_tail(PowerlawTail { alpha: 2.0, beta: 2.0, start: 3 }).is_err());
    }

    #[test]
    fn json_field_names() {
        let ts = make_powerlaw_structure(&PowerlawTask::new(2.0, 1.5).unwrap(), 2).unwrap();
        let s = serde_json::to_string(&ts).unwrap();
        for key in ["eigenvalues", "coeffs_sq", "noise_var", "tail", "alpha", "beta", "start"] {
            assert!(s.contains(&format!("\"{key}\"")), "{s}");
        }
        let back: TaskEigenstructure<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ts);
        let bad = r#"{"eigenvalues":[0.1,1.0],"coeffs_sq":[1,1],"noise_var":0}"#;
        assert!(serde_json::from_str::<TaskEigenstructure<f64>>(bad).is_err());
        let task: PowerlawTask<f64> =
            serde_json::from_str(r#"{"alpha":1.5,"beta":2.5,"s_rel_sq":1.0}"#).unwrap();
        assert_eq!(task.i0, 1);
    }

    #[test]
    fn zero_eigenvalues_do_not_learn() {
        let ts = TaskEigenstructure::new(vec![1.0, 0.0], vec![0.0, 2.0], 0.0).unwrap();
        let (z, q) = ts.learnability_sums(1.0);
        assert_eq!((z, q), (0.5, 0.25));
        let s = ts.mode_sums(1.0).unwrap();
        assert_eq!(s.missed, 2.0);
        assert_eq!(ts.effective_rank(), Some(1));
    }

    proptest! {
        #[test]
        fn powerlaw_structures_satisfy_invariants(
            alpha in 1.01f64..4.0,
            beta_frac in 0.001f64..0.999,
            modes in 1usize..300,
        ) {
            let beta = 1.0 + beta_frac * 2.0 * alpha;
            let task = PowerlawTask::new(alpha, beta).unwrap();
            let ts = make_powerlaw_structure(&task, modes).unwrap();
            prop_assert_eq!(ts.len(), modes);
            prop_assert!(ts.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(ts.eigenvalues().iter().all(|&l| l >= 0.0));
            // re-validating through serde exercises the constructor checks
            let json = serde_json::to_string(&ts).unwrap();
            prop_assert!(serde_json::from_str::<TaskEigenstructure<f64>>(&json).is_ok());
        }

        #[test]
        fn tail_power_agrees_with_long_truncation(
            beta in 1.6f64..4.0,
            modes in 1usize..50,
        ) {
            let task = PowerlawTask::new(2.0, beta).unwrap();
            let short = make_powerlaw_structure(&task, modes).unwrap();
            let long = make_powerlaw_structure(&task, 200_000).unwrap();
            let est = short.total_power_estimate().unwrap();
            let long_est = long.total_power_estimate().unwrap();
            let diff = (est.value - long_est.value).abs();
            prop_assert!(diff <= est.remainder_bound + long_est.remainder_bound);
        }
    }
}
