//! Monte Carlo RF regression and KRR on Gaussian latent data.
//!
//! Latent inputs `x ~ N(0, I_M)`, target `f*(x) = Σ vᵢ xᵢ`, labels with
//! additive `N(0, σ²)` noise. Features are `ψ(x) = G Λ^{1/2} x` with `G`
//! a `k × M` matrix of standard normals, so the feature kernel is
//! `K̂(x, x') = ψ(x)·ψ(x')/k`.
//!
//! Ridge convention: the primal fit is `a = (ΨΨᵀ + δk I)⁻¹ Ψ y`, which is
//! the dual fit `(K̂ + δI)⁻¹ y` with ridge exactly `δ`. Scaling `G` by
//! `1/√k` instead (entries of variance `1/k`) gives the same predictor with
//! primal ridge `δ`.
//!
//! Every fit is linear in `x`, `f(x) = θᵀx`, so the population test error
//! is exactly `‖θ − v‖² + σ²` and no test set is drawn.
//!
//! By default features are sampled in projected form: given the data, only
//! `Ψ = G Z` (with `Z = Λ^{1/2} Xᵀ`) and the component of `Gᵀa` orthogonal
//! to `span(Z)` matter, and both have closed-form Gaussian laws. That
//! replaces the `k × M` draw with a `k × n` one and is exact in
//! distribution for each fit.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::TaskEigenstructure;

/// Hashes a master seed and a path of indices into a stream seed
/// (splitmix64 mixing at each step).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix(master);
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// How random features are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSampling {
    /// Projected draw; falls back to `Full` when the data Gram matrix is
    /// singular (fewer usable modes than samples).
    #[default]
    Projected,
    /// The full `k × M` projection matrix.
    Full,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Explicit modes only; a tail, if present, is ignored.
    pub ts: TaskEigenstructure<f64>,
    pub n: usize,
    pub k: usize,
    pub ridge: f64,
    pub trials: usize,
    pub seed: u64,
    /// Reuse each trial's data (inputs, labels and noise) for every `k`.
    #[serde(default)]
    pub fix_dataset_across_k: bool,
    #[serde(default)]
    pub sampling: FeatureSampling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub data_seed: u64,
    pub feature_seed: u64,
    pub train_mse: f64,
    pub test_mse: f64,
    /// The ridgeless normal equations were singular and a minimum-norm
    /// solution was used.
    pub pseudo_inverse: bool,
}

/// Per-trial errors and their summary for one `(n, k, δ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub n: usize,
    /// `None` for KRR.
    pub k: Option<usize>,
    pub ridge: f64,
    pub seed: u64,
    pub fix_dataset_across_k: bool,
    pub trials: Vec<TrialResult>,
    pub train_mean: f64,
    pub test_mean: f64,
    /// Standard errors of the means; absent with a single trial.
    pub train_se: Option<f64>,
    pub test_se: Option<f64>,
}

/// Header of [`SimulationResult::csv_rows`].
pub const TRIAL_CSV_HEADER: [&str; 9] = [
    "n", "k", "delta", "trial", "data_seed", "feature_seed", "train_mse", "test_mse", "pseudo_inverse",
];

impl SimulationResult {
    fn new(n: usize, k: Option<usize>, ridge: f64, seed: u64, fix: bool, trials: Vec<TrialResult>) -> Self {
        let (train_mean, train_se) = mean_se(trials.iter().map(|t| t.train_mse));
        let (test_mean, test_se) = mean_se(trials.iter().map(|t| t.test_mse));
        Self { n, k, ridge, seed, fix_dataset_across_k: fix, trials, train_mean, test_mean, train_se, test_se }
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let f = |x: f64| format!("{x:.16e}");
        self.trials
            .iter()
            .map(|t| {
                vec![
                    self.n.to_string(),
                    self.k.map_or_else(|| "inf".into(), |k| k.to_string()),
                    f(self.ridge),
                    t.trial.to_string(),
                    t.data_seed.to_string(),
                    t.feature_seed.to_string(),
                    f(t.train_mse),
                    f(t.test_mse),
                    t.pseudo_inverse.to_string(),
                ]
            })
            .collect()
    }
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, Option<f64>) {
    let n = xs.clone().count();
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

/// One draw of `n` samples.
struct Dataset {
    /// `Λ^{1/2} Xᵀ`, `M × n`.
    z: DMatrix<f64>,
    y: DVector<f64>,
}

/// Shared task data: `√λ`, `v`, `σ²`.
struct Latent {
    sqrt_lambda: DVector<f64>,
    v: DVector<f64>,
    noise_var: f64,
}

impl Latent {
    fn new(ts: &TaskEigenstructure<f64>) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::invalid("simulation needs at least one explicit mode"));
        }
        let scale = ts.coeff_scale();
        Ok(Self {
            sqrt_lambda: DVector::from_iterator(ts.len(), ts.eigenvalues().iter().map(|l| l.sqrt())),
            v: DVector::from_iterator(ts.len(), ts.coeffs_sq().iter().map(|v| (v * scale).sqrt())),
            noise_var: ts.noise_var(),
        })
    }

    fn modes(&self) -> usize {
        self.v.len()
    }

    fn draw(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.modes();
        let mut z = DMatrix::zeros(m, n);
        let mut y = DVector::zeros(n);
        for j in 0..n {
            let x = normal_vector(&mut rng, m);
            y[j] = x.dot(&self.v);
            z.set_column(j, &x.component_mul(&self.sqrt_lambda));
        }
        let sigma = self.noise_var.sqrt();
        for j in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            y[j] += sigma * eps;
        }
        Dataset { z, y }
    }

    fn test_mse(&self, theta: &DVector<f64>) -> f64 {
        (theta - &self.v).norm_squared() + self.noise_var
    }
}

fn train_mse(pred: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (pred - y).norm_squared() / y.len() as f64
}

/// Solves `(A + shift·I) x = b` for symmetric PSD `A`; a singular system
/// (only possible at zero shift) gets the minimum-norm solution.
fn solve_psd(a: &DMatrix<f64>, shift: f64, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    if let Some(ch) = Cholesky::<f64, Dyn>::new(m.clone()) {
        let x = ch.solve(b);
        let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
        // reject numerically singular factorizations
        let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |acc, &d| acc.min(d * d));
        if min_pivot > scale * 1e-13 && x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    let svd = SVD::new(m, true, true);
    let eps = svd.singular_values.max() * 1e-12;
    let x = svd.solve(b, eps).map_err(|e| Error::SingularMatrix(e.to_string()))?;
    Ok((x, true))
}

/// Fits RF regression on precomputed features `Ψ` (`k × n`) for each
/// ridge; returns `(a, train predictions, pseudo flag)` per ridge.
fn fit_features(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    ridges: &[f64],
) -> Result<Vec<(DVector<f64>, DVector<f64>, bool)>> {
    let (k, n) = psi.shape();
    let kf = k as f64;
    let primal = k <= n;
    let gram = if primal { psi * psi.transpose() } else { psi.tr_mul(psi) / kf };
    let psi_y = if primal { Some(psi * y) } else { None };
    ridges
        .iter()
        .map(|&ridge| {
            let (a, pseudo) = if let Some(py) = &psi_y {
                solve_psd(&gram, ridge * kf, py)?
            } else {
                let (c, pseudo) = solve_psd(&gram, ridge, y)?;
                (psi * c / kf, pseudo)
            };
            let pred = psi.tr_mul(&a);
            Ok((a, pred, pseudo))
        })
        .collect()
}

/// Simulates RF regression over a grid of feature counts and ridges.
/// Results come back `k`-major, ridge-minor. For a given trial and `k` the
/// same data and features are used for every ridge, so any single grid
/// point equals the corresponding single-point run bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn simulate_rf_grid(
    ts: &TaskEigenstructure<f64>,
    n: usize,
    ks: &[usize],
    ridges: &[f64],
    trials: usize,
    seed: u64,
    fix_dataset_across_k: bool,
    sampling: FeatureSampling,
) -> Result<Vec<SimulationResult>> {
    if n == 0 || trials == 0 || ks.is_empty() || ridges.is_empty() || ks.contains(&0) {
        return Err(Error::invalid("n, trials and every k must be positive; grids non-empty"));
    }
    if let Some(r) = ridges.iter().find(|r| !r.is_finite() || **r < 0.0) {
        return Err(Error::invalid(format!("ridge {r}")));
    }
    let latent = Latent::new(ts)?;

    let per_trial: Vec<Vec<Vec<TrialResult>>> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<Vec<TrialResult>>> {
            let fixed = fix_dataset_across_k.then(|| {
                let s = derive_seed(seed, &[0, trial as u64]);
                (s, latent.draw(n, s))
            });
            let mut fixed_gram = None;
            ks.iter()
                .map(|&k| {
                    let owned;
                    let (data_seed, data) = match &fixed {
                        Some((s, d)) => (*s, d),
                        None => {
                            let s = derive_seed(seed, &[0, trial as u64, k as u64]);
                            owned = latent.draw(n, s);
                            (s, &owned)
                        }
                    };
                    let feature_seed = derive_seed(seed, &[1, trial as u64, k as u64]);
                    let gram_chol = match (sampling, fix_dataset_across_k) {
                        (FeatureSampling::Full, _) => None,
                        (_, true) => fixed_gram
                            .get_or_insert_with(|| data_cholesky(&data.z))
                            .clone(),
                        (_, false) => data_cholesky(&data.z),
                    };
                    let fits = rf_trial(&latent, data, k, ridges, feature_seed, gram_chol.as_ref())?;
                    Ok(fits
                        .into_iter()
                        .map(|(train_mse, test_mse, pseudo_inverse)| TrialResult {
                            trial,
                            data_seed,
                            feature_seed,
                            train_mse,
                            test_mse,
                            pseudo_inverse,
                        })
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(ks.len() * ridges.len());
    for (ki, &k) in ks.iter().enumerate() {
        for (ri, &ridge) in ridges.iter().enumerate() {
            let rows = per_trial.iter().map(|t| t[ki][ri]).collect();
            out.push(SimulationResult::new(n, Some(k), ridge, seed, fix_dataset_across_k, rows));
        }
    }
    Ok(out)
}

/// Cholesky factor of the data Gram `ZᵀZ`, if it is safely positive
/// definite.
fn data_cholesky(z: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let gram = z.tr_mul(z);
    let scale = gram.diagonal().amax();
    let ch = Cholesky::<f64, Dyn>::new(gram)?;
    let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |acc, &d| acc.min(d * d));
    (min_pivot > scale * 1e-10).then_some(ch)
}

/// One trial at one `k`: `(train, test, pseudo)` per ridge.
fn rf_trial(
    latent: &Latent,
    data: &Dataset,
    k: usize,
    ridges: &[f64],
    feature_seed: u64,
    gram_chol: Option<&Cholesky<f64, Dyn>>,
) -> Result<Vec<(f64, f64, bool)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(feature_seed);
    let n = data.y.len();
    match gram_chol {
        Some(ch) => {
            // Ψ = H Lᵀ with ZᵀZ = L Lᵀ has the law of G Z given the data
            let h = normal_matrix(&mut rng, k, n);
            let l = ch.l();
            let psi = &h * l.transpose();
            let xi = normal_vector(&mut rng, latent.modes());
            // e = (ZᵀZ)⁻¹ Zᵀ ξ, so ξ − Z e is the part of ξ orthogonal to span(Z)
            let e = ch.solve(&data.z.tr_mul(&xi));
            let fits = fit_features(&psi, &data.y, ridges)?;
            Ok(fits
                .into_iter()
                .map(|(a, pred, pseudo)| {
                    // P Gᵀa = Z L⁻ᵀ Hᵀ a; the orthogonal part has law ‖a‖·(I−P)ξ
                    let hta = h.tr_mul(&a);
                    let d = l.transpose().solve_upper_triangular(&hta).expect("triangular factor");
                    let norm_a = a.norm();
                    let in_span = &data.z * (d - &e * norm_a);
                    let theta = (in_span + &xi * norm_a).component_mul(&latent.sqrt_lambda);
                    (train_mse(&pred, &data.y), latent.test_mse(&theta), pseudo)
                })
                .collect())
        }
        None => {
            let g = normal_matrix(&mut rng, k, latent.modes());
            let psi = &g * &data.z;
            let fits = fit_features(&psi, &data.y, ridges)?;
            Ok(fits
                .into_iter()
                .map(|(a, pred, pseudo)| {
                    let theta = g.tr_mul(&a).component_mul(&latent.sqrt_lambda);
                    (train_mse(&pred, &data.y), latent.test_mse(&theta), pseudo)
                })
                .collect())
        }
    }
}

/// Simulates RF regression at a single configuration.
pub fn simulate_rf(config: &SimConfig) -> Result<SimulationResult> {
    let mut out = simulate_rf_grid(
        &config.ts,
        config.n,
        &[config.k],
        &[config.ridge],
        config.trials,
        config.seed,
        config.fix_dataset_across_k,
        config.sampling,
    )?;
    Ok(out.remove(0))
}

/// Simulates KRR with kernel `K(x, x') = Σ λᵢ xᵢ x'ᵢ` for each ridge.
pub fn simulate_krr_grid(
    ts: &TaskEigenstructure<f64>,
    n: usize,
    ridges: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<SimulationResult>> {
    if n == 0 || trials == 0 || ridges.is_empty() {
        return Err(Error::invalid("n and trials must be positive; ridge grid non-empty"));
    }
    if let Some(r) = ridges.iter().find(|r| !r.is_finite() || **r < 0.0) {
        return Err(Error::invalid(format!("ridge {r}")));
    }
    let latent = Latent::new(ts)?;
    let per_trial: Vec<Vec<TrialResult>> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<TrialResult>> {
            let data_seed = derive_seed(seed, &[0, trial as u64]);
            let data = latent.draw(n, data_seed);
            let gram = data.z.tr_mul(&data.z);
            ridges
                .iter()
                .map(|&ridge| {
                    let (c, pseudo_inverse) = solve_psd(&gram, ridge, &data.y)?;
                    let pred = &gram * &c;
                    let theta = (&data.z * &c).component_mul(&latent.sqrt_lambda);
                    Ok(TrialResult {
                        trial,
                        data_seed,
                        feature_seed: 0,
                        train_mse: train_mse(&pred, &data.y),
                        test_mse: latent.test_mse(&theta),
                        pseudo_inverse,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ridges
        .iter()
        .enumerate()
        .map(|(ri, &ridge)| {
            let rows = per_trial.iter().map(|t| t[ri]).collect();
            SimulationResult::new(n, None, ridge, seed, true, rows)
        })
        .collect())
}

pub fn simulate_krr(
    ts: &TaskEigenstructure<f64>,
    n: usize,
    ridge: f64,
    trials: usize,
    seed: u64,
) -> Result<SimulationResult> {
    Ok(simulate_krr_grid(ts, n, &[ridge], trials, seed)?.remove(0))
}
