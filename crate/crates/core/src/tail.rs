//! Analytic sums over pure powerlaw tails `λᵢ = i^{-α}`, `vᵢ² = i^{-β}`.
//!
//! A tail starting at index `a` is summed explicitly up to
//! [`EXPLICIT_PREFIX`] and the remainder is replaced by the midpoint
//! Euler–Maclaurin estimate `∫_{b-½}^∞ f + f'(b-½)/24`. The integrals of
//! the eigenframework summands reduce, after substituting
//! `s = λ(x)/γ`, to `∫_0^U s^{p-1} (1+s)^{-m} ds`, which is evaluated by
//! convergent series on `[0, ½]` and `[2, U]` and Gauss–Legendre in between.

use std::sync::OnceLock;

use crate::scalar::{Accumulator, Scalar};

/// Indices below this are summed term by term; the integral estimate is
/// used only where its neglected `f'''` term is below double precision.
pub(crate) const EXPLICIT_PREFIX: usize = 1024;

/// Generic tail summand `i^{-w} · u^j / (1+u)^m` with `u = i^{-α}/γ`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Summand<T> {
    /// Exponent on the weight (0 for eigenvalue sums, β for coefficient sums).
    pub weight_exp: T,
    pub j: i32,
    pub m: i32,
}

#[inline]
fn term<T: Scalar>(alpha: T, s: Summand<T>, gamma: T, x: T) -> T {
    let lam = x.powf(-alpha);
    let w = if s.weight_exp == T::zero() { T::one() } else { x.powf(-s.weight_exp) };
    if s.m == 0 {
        return w * (lam / gamma).powi(s.j);
    }
    // u^j/(1+u)^m written via λ/(λ+γ) and γ/(λ+γ) to stay finite for tiny γ
    let denom = lam + gamma;
    let learn = lam / denom;
    let miss = gamma / denom;
    w * learn.powi(s.j) * miss.powi(s.m - s.j)
}

/// Σ_{i ≥ start} of the summand. `gamma` must be positive unless `m == 0`
/// and `j == 0`.
pub(crate) fn tail_sum<T: Scalar>(alpha: T, s: Summand<T>, gamma: T, start: usize) -> T {
    let mut acc = Accumulator::new();
    let prefix_end = start.max(EXPLICIT_PREFIX);
    for i in start..prefix_end {
        acc.add(term(alpha, s, gamma, T::from_count(i)));
    }
    let x0 = T::from_count(prefix_end) - T::lit(0.5);
    acc.add(integral_from(alpha, s, gamma, x0));
    // f'(x0)/24 with f'/f = -(w + α j - α m u/(1+u)) / x
    let f0 = term(alpha, s, gamma, x0);
    let lam = x0.powf(-alpha);
    let learn = if s.m == 0 { T::zero() } else { lam / (lam + gamma) };
    let log_slope = -(s.weight_exp + alpha * T::lit(s.j as f64)
        - alpha * T::lit(s.m as f64) * learn)
        / x0;
    acc.add(f0 * log_slope / T::lit(24.0));
    acc.value()
}

/// Σ_{i ≥ start} i^{-s} for s > 1.
pub(crate) fn zeta_tail<T: Scalar>(s: T, start: usize) -> T {
    tail_sum(
        T::one(),
        Summand { weight_exp: s, j: 0, m: 0 },
        T::one(),
        start,
    )
}

/// ∫_{x0}^∞ x^{-w} u^j (1+u)^{-m} dx.
fn integral_from<T: Scalar>(alpha: T, s: Summand<T>, gamma: T, x0: T) -> T {
    let w = s.weight_exp;
    let jf = T::lit(s.j as f64);
    if s.m == 0 {
        let e = w + alpha * jf - T::one();
        return gamma.powi(-s.j) * x0.powf(-e) / e;
    }
    let p = (w - T::one()) / alpha + jf;
    let u0 = x0.powf(-alpha) / gamma;
    gamma.powf((w - T::one()) / alpha) / alpha * incomplete_integral(p, s.m, u0)
}

#[inline]
fn binom_coeff<T: Scalar>(m: i32, j: usize) -> T {
    // C(m+j-1, j) for m ∈ {1, 2}
    match m {
        1 => T::one(),
        2 => T::from_count(j + 1),
        _ => {
            let mut c = T::one();
            for r in 0..j {
                c = c * T::lit((m as f64) + r as f64) / T::from_count(r + 1);
            }
            c
        }
    }
}

/// ∫_0^U s^{p-1} (1+s)^{-m} ds, p > 0, m ≥ 1.
pub(crate) fn incomplete_integral<T: Scalar>(p: T, m: i32, upper: T) -> T {
    debug_assert!(p > T::zero());
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let eps = T::epsilon();
    let mut total = Accumulator::new();

    // [0, min(U, ½)]: binomial series in s
    let s1 = upper.min(half);
    {
        let mut acc = Accumulator::new();
        let mut pow = T::one();
        for j in 0..400 {
            let t = binom_coeff::<T>(m, j) * pow / (p + T::from_count(j));
            let signed = if j % 2 == 0 { t } else { -t };
            acc.add(signed);
            if t.abs() <= eps * acc.value().abs() * T::lit(0.25) {
                break;
            }
            pow = pow * s1;
        }
        total.add(s1.powf(p) * acc.value());
    }

    // [½, min(U, 2)]: Gauss–Legendre panels
    if upper > half {
        let b = upper.min(two);
        let panels = if b - half > T::lit(0.75) { 2 } else { 1 };
        let width = (b - half) / T::from_count(panels);
        for k in 0..panels {
            let lo = half + width * T::from_count(k);
            let mid = lo + width * half;
            let hw = width * half;
            for &(node, weight) in gauss_legendre() {
                let s = mid + hw * T::lit(node);
                let f = s.powf(p - T::one()) * (T::one() + s).powi(-m);
                total.add(T::lit(weight) * hw * f);
            }
        }
    }

    // [2, U]: series in 1/s
    if upper > two {
        let ln_ratio = (upper / two).ln();
        let mut acc = Accumulator::new();
        for j in 0..400 {
            let e = p - T::lit(m as f64) - T::from_count(j);
            let el = e * ln_ratio;
            let integral = if el == T::zero() {
                ln_ratio
            } else {
                two.powf(e) * el.exp_m1() / e
            };
            let t = binom_coeff::<T>(m, j) * integral;
            let signed = if j % 2 == 0 { t } else { -t };
            acc.add(signed);
            if e < T::zero() && t.abs() <= eps * acc.value().abs() * T::lit(0.25) {
                break;
            }
        }
        total.add(acc.value());
    }
    total.value()
}

/// 20-point Gauss–Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 20usize;
        let mut out = Vec::with_capacity(n);
        for i in 1..=n {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(alpha: f64, s: Summand<f64>, gamma: f64, start: usize, end: usize) -> f64 {
        let mut acc = Accumulator::new();
        for i in (start..end).rev() {
            acc.add(term(alpha, s, gamma, i as f64));
        }
        acc.value()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let integral: f64 = gauss_legendre().iter().map(|&(x, w)| w * x.powi(10)).sum();
        assert!((integral - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn incomplete_integral_matches_quadrature() {
        // p = 0.7, m = 1 and 2, several U, against a fine trapezoid in log-space
        for &m in &[1, 2] {
            for &u in &[0.1, 0.5, 1.3, 2.0, 17.0, 1e4] {
                for &p in &[0.3, 0.7, 1.0, 1.6, 2.4] {
                    let got = incomplete_integral(p, m, u);
                    let n = 400_000;
                    let (t0, t1) = (-60.0f64, (u as f64).ln());
                    let h = (t1 - t0) / n as f64;
                    let mut acc = 0.0;
                    for i in 0..=n {
                        let t = t0 + h * i as f64;
                        let s = t.exp();
                        let f = s.powf(p) * (1.0 + s).powi(-m);
                        acc += if i == 0 || i == n { 0.5 * f } else { f };
                    }
                    // the piece below e^{t0} in closed form
                    let want = acc * h + (p * t0).exp() / p;
                    assert!(
                        ((got - want) / want).abs() < 1e-8,
                        "p={p} m={m} U={u}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn tail_sums_match_long_brute_force() {
        // brute-force to 4·10⁶ plus a crude integral for the rest, for summands
        // decaying at least as fast as x^{-2.5}, so the crude part is < 1e-9
        let alpha = 2.5;
        let beta = 3.0;
        let end = 4_000_000usize;
        for &gamma in &[1e-8, 1e-4, 0.3] {
            for s in [
                Summand { weight_exp: 0.0, j: 1, m: 1 },
                Summand { weight_exp: 0.0, j: 2, m: 2 },
                Summand { weight_exp: beta, j: 0, m: 1 },
                Summand { weight_exp: beta, j: 0, m: 2 },
                Summand { weight_exp: beta, j: 1, m: 2 },
            ] {
                let got = tail_sum(alpha, s, gamma, 7);
                let want = brute(alpha, s, gamma, 7, end) + integral_from(alpha, s, gamma, end as f64 - 0.5);
                assert!(
                    ((got - want) / want).abs() < 1e-11,
                    "{s:?} gamma={gamma}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn zeta_three_halves() {
        // ζ(3/2) = 2.612375348685488...
        let got = 1.0 + zeta_tail(1.5f64, 2);
        assert!((got - 2.612_375_348_685_488).abs() < 1e-12, "{got}");
    }

    #[test]
    fn f32_tail_is_close_to_f64() {
        let s64 = Summand { weight_exp: 1.5f64, j: 1, m: 2 };
        let s32 = Summand { weight_exp: 1.5f32, j: 1, m: 2 };
        let a = tail_sum(1.5f64, s64, 1e-3, 100);
        let b = tail_sum(1.5f32, s32, 1e-3, 100) as f64;
        assert!(((a - b) / a).abs() < 1e-5);
    }
}
