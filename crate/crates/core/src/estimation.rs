//! Measuring the powerlaw exponents `(α, β)` of an empirical kernel.
//!
//! The proxy estimators fit log-log slopes of quantities that are cheap to
//! measure on subsamples of size `n`:
//!
//! * `κ(n) ≈ 1 / Tr[K_n⁻¹]`, which decays as `n^{-α}`;
//! * the ridgeless zero-noise test error, which decays as `n^{-(β-1)}`.
//!
//! [`direct_eigenstructure`] diagonalizes the full kernel instead. Its
//! eigenvalues `eig(K)/N` estimate the population `λᵢ` only for `i ≪ N`,
//! which biases the direct fits.
//!
//! Everything here is `f64` and dense; the eigendecomposition is `O(N³)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::derive_seed;

/// Maximum asymmetry `|K_ij − K_ji|` accepted, relative to `max(1, max|K|)`.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// A kernel matrix on `N` points with `C` label columns.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDataset {
    name: String,
    kernel: DMatrix<f64>,
    labels: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct FileHeader {
    name: String,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "C")]
    c: usize,
    dtype: String,
    layout: String,
}

impl KernelDataset {
    /// Validates shapes and symmetry; the stored kernel is exactly
    /// symmetrized.
    pub fn new(name: impl Into<String>, kernel: DMatrix<f64>, labels: DMatrix<f64>) -> Result<Self> {
        let n = kernel.nrows();
        if n == 0 || kernel.ncols() != n {
            return Err(Error::invalid(format!(
                "kernel must be square and non-empty, got {}x{}",
                kernel.nrows(),
                kernel.ncols()
            )));
        }
        if labels.nrows() != n || labels.ncols() == 0 {
            return Err(Error::invalid(format!(
                "labels must be {n}xC with C >= 1, got {}x{}",
                labels.nrows(),
                labels.ncols()
            )));
        }
        if kernel.iter().chain(labels.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("kernel and labels must be finite"));
        }
        let scale = kernel.amax().max(1.0);
        let mut asym: f64 = 0.0;
        for j in 0..n {
            for i in 0..j {
                asym = asym.max((kernel[(i, j)] - kernel[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::invalid(format!("kernel is not symmetric (max gap {asym:e})")));
        }
        let kernel = (&kernel + kernel.transpose()) * 0.5;
        Ok(Self { name: name.into(), kernel, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of points `N`.
    pub fn len(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of label columns `C`.
    pub fn classes(&self) -> usize {
        self.labels.ncols()
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn labels(&self) -> &DMatrix<f64> {
        &self.labels
    }

    /// `K[idx, idx]`.
    pub fn principal(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.kernel[(idx[a], idx[b])])
    }

    /// Reads the binary format: one JSON header line
    /// `{"name", "N", "C", "dtype": "f64", "layout": "row-major"}`, then
    /// little-endian `f64` values of `K` (N×N) followed by `Y` (N×C).
    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path.as_ref())?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: FileHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.dtype != "f64" || header.layout != "row-major" {
            return Err(Error::Format(format!(
                "unsupported dtype/layout {}/{}",
                header.dtype, header.layout
            )));
        }
        let (n, c) = (header.n, header.c);
        let mut read_block = |rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let mut buf = vec![0u8; rows * cols * 8];
            reader
                .read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated data: {e}")))?;
            let vals: Vec<f64> = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            Ok(DMatrix::from_row_slice(rows, cols, &vals))
        };
        let kernel = read_block(n, n)?;
        let labels = read_block(n, c)?;
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Self::new(header.name, kernel, labels)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        let header = FileHeader {
            name: self.name.clone(),
            n: self.len(),
            c: self.classes(),
            dtype: "f64".into(),
            layout: "row-major".into(),
        };
        let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{json}")?;
        for m in [&self.kernel, &self.labels] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads plain CSV: row `i` holds `K[i, :]` followed by `Y[i, :]`, so
    /// `C` is the column count minus the row count. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn read_csv(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Self> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let row = t
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        let n = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if n == 0 || width <= n || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Format(format!(
                "expected {n} rows of equal width > {n}, one kernel row plus labels each"
            )));
        }
        let kernel = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let labels = DMatrix::from_fn(n, width - n, |i, j| rows[i][n + j]);
        Self::new(name, kernel, labels)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        for i in 0..self.len() {
            let row: Vec<String> = self
                .kernel
                .row(i)
                .iter()
                .chain(self.labels.row(i).iter())
                .map(|x| format!("{x:.17e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Picks the reader from the first byte: `{` is the binary format,
    /// anything else is CSV.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut first = [0u8; 1];
        File::open(path)?.read_exact(&mut first)?;
        if first[0] == b'{' {
            Self::read_binary(path)
        } else {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("kernel");
            Self::read_csv(path, name)
        }
    }
}

/// `1 / Tr[K⁻¹]` and whether a stabilizing ridge was needed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaProxy {
    pub value: f64,
    pub stabilized: bool,
}

fn cholesky_ok(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let ch = Cholesky::new(m.clone())?;
    let scale = m.diagonal().amax();
    let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &d| a.min(d * d));
    (min_pivot > scale * 1e-14).then_some(ch)
}

/// `1 / Tr[K⁻¹]` via Cholesky, `Tr[K⁻¹] = ‖L⁻¹‖_F²`. A numerically singular
/// `K` is retried once with ridge `10⁻¹²·Tr(K)/N`.
pub fn kappa_proxy(k: &DMatrix<f64>) -> Result<KappaProxy> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(Error::invalid("kappa_proxy needs a non-empty square matrix"));
    }
    let trace = k.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::SingularMatrix(format!("trace {trace} is not positive")));
    }
    let (ch, stabilized) = match cholesky_ok(k) {
        Some(ch) => (ch, false),
        None => {
            let mut m = k.clone();
            let ridge = 1e-12 * trace / n as f64;
            for i in 0..n {
                m[(i, i)] += ridge;
            }
            let ch = cholesky_ok(&m).ok_or_else(|| {
                Error::SingularMatrix("kernel is singular even after stabilization".into())
            })?;
            (ch, true)
        }
    };
    let mut linv = DMatrix::<f64>::identity(n, n);
    if !ch.l_dirty().solve_lower_triangular_mut(&mut linv) {
        return Err(Error::SingularMatrix("zero pivot in Cholesky factor".into()));
    }
    // only the lower triangle of L⁻¹ is meaningful
    let mut tr_inv = 0.0;
    for j in 0..n {
        for i in j..n {
            tr_inv += linv[(i, j)] * linv[(i, j)];
        }
    }
    let value = 1.0 / tr_inv;
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::SingularMatrix(format!("Tr[K⁻¹] = {tr_inv}")));
    }
    Ok(KappaProxy { value, stabilized })
}

/// Loss used for the log-log line fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitLoss {
    #[default]
    LeastSquares,
    /// Least absolute deviations, by iteratively reweighted least squares.
    LeastAbsolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Fraction range `[lo, hi]` of the points used in the fit.
    pub window: (f64, f64),
    pub loss: FitLoss,
    /// Random subsamples per size, averaged in log space.
    pub repetitions: usize,
    /// Held-out block size for [`measure_beta`]; defaults to
    /// `N − max(sizes)`.
    pub holdout: Option<usize>,
    /// RMS log residual above which a fit is flagged as poor.
    pub residual_flag: f64,
    /// Head indices skipped by the direct eigenvalue fit.
    pub direct_skip_head: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: (0.1, 0.8),
            loss: FitLoss::LeastSquares,
            repetitions: 5,
            holdout: None,
            residual_flag: 0.05,
            direct_skip_head: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    /// RMS residual of the line fit exceeds `residual_flag`.
    PoorFit,
    /// The exponent is not significantly above 1 (by the larger of 0.02 and
    /// two standard errors of the slope), so the data show no admissible
    /// powerlaw: a constant spectrum, or labels that are pure noise.
    NoPowerlaw,
}

/// A line fitted to `(ln x, ln y)` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Half-open range of `points` used in the fit.
    pub window: (usize, usize),
    /// `(ln x, ln y)`.
    pub points: Vec<(f64, f64)>,
    /// RMS residual over the window.
    pub residual: f64,
    /// Ordinary least-squares standard error of the slope.
    pub slope_se: f64,
    pub flags: Vec<FitFlag>,
}

/// Margin above 1 below which an exponent is flagged [`FitFlag::NoPowerlaw`].
const ADMISSIBLE_MARGIN: f64 = 0.02;

fn window_range(len: usize, window: (f64, f64)) -> Result<(usize, usize)> {
    let (a, b) = window;
    if !(0.0..1.0).contains(&a) || !(b > a && b <= 1.0) {
        return Err(Error::invalid(format!("fit window {window:?} must satisfy 0 <= lo < hi <= 1")));
    }
    let lo = (a * len as f64).floor() as usize;
    let hi = ((b * len as f64).ceil() as usize).min(len);
    if hi < lo + 3 {
        return Err(Error::invalid(format!(
            "fit window {window:?} keeps {} of {len} points, need at least 3",
            hi.saturating_sub(lo)
        )));
    }
    Ok((lo, hi))
}

fn weighted_line(pts: &[(f64, f64)], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = pts.iter().zip(w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = pts.iter().zip(w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().zip(w).map(|(p, w)| w * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().zip(w).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `ln y = slope·ln x + intercept` on `pts` (already windowed).
fn fit_line(pts: &[(f64, f64)], loss: FitLoss) -> (f64, f64) {
    let mut w = vec![1.0; pts.len()];
    let (mut slope, mut intercept) = weighted_line(pts, &w);
    if loss == FitLoss::LeastAbsolute {
        for _ in 0..100 {
            for (wi, p) in w.iter_mut().zip(pts) {
                *wi = 1.0 / (p.1 - slope * p.0 - intercept).abs().max(1e-10);
            }
            let (s, c) = weighted_line(pts, &w);
            let done = (s - slope).abs() < 1e-12 && (c - intercept).abs() < 1e-12;
            slope = s;
            intercept = c;
            if done {
                break;
            }
        }
    }
    (slope, intercept)
}

/// Fits the windowed points and maps the slope to an exponent.
fn fit_exponent(
    points: Vec<(f64, f64)>,
    opts: &FitOptions,
    to_exponent: impl Fn(f64) -> f64,
) -> Result<ExponentFit> {
    let (lo, hi) = window_range(points.len(), opts.window)?;
    let win = &points[lo..hi];
    if win.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::SingularMatrix("non-finite point in the fit window".into()));
    }
    let (slope, intercept) = fit_line(win, opts.loss);
    if !slope.is_finite() {
        return Err(Error::invalid("degenerate fit: all x values coincide"));
    }
    let residual = (win
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum::<f64>()
        / win.len() as f64)
        .sqrt();
    let exponent = to_exponent(slope);
    let mx = win.iter().map(|p| p.0).sum::<f64>() / win.len() as f64;
    let sxx: f64 = win.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope_se = residual * (win.len() as f64 / ((win.len() - 2) as f64 * sxx)).sqrt();
    let mut flags = Vec::new();
    if residual > opts.residual_flag {
        flags.push(FitFlag::PoorFit);
    }
    if exponent - 1.0 <= ADMISSIBLE_MARGIN.max(2.0 * slope_se) {
        flags.push(FitFlag::NoPowerlaw);
    }
    Ok(ExponentFit { exponent, slope, intercept, window: (lo, hi), points, residual, slope_se, flags })
}

fn check_sizes(sizes: &[usize], max: usize) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 sizes, got {}", sizes.len())));
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sizes must be positive and strictly increasing"));
    }
    if *sizes.last().expect("non-empty") > max {
        return Err(Error::invalid(format!("largest size exceeds the {max} available points")));
    }
    Ok(())
}

/// Averages `f(size, rep)` over repetitions in log space, for each size.
fn log_mean_over_reps(
    sizes: &[usize],
    reps: usize,
    f: impl Fn(usize, usize) -> Result<f64> + Sync,
) -> Result<Vec<(f64, f64)>> {
    let jobs: Vec<(usize, usize)> =
        sizes.iter().enumerate().flat_map(|(s, _)| (0..reps).map(move |r| (s, r))).collect();
    let vals = jobs
        .par_iter()
        .map(|&(s, r)| f(sizes[s], r))
        .collect::<Result<Vec<f64>>>()?;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(s, &n)| {
            let m = vals[s * reps..(s + 1) * reps].iter().map(|v| v.ln()).sum::<f64>() / reps as f64;
            ((n as f64).ln(), m)
        })
        .collect())
}

/// Estimates `α` from the slope of `ln κ(n)` against `ln n`, with `κ(n)`
/// the [`kappa_proxy`] of random principal submatrices.
pub fn measure_alpha(
    ds: &KernelDataset,
    sizes: &[usize],
    subsample_seed: u64,
    opts: &FitOptions,
) -> Result<ExponentFit> {
    check_sizes(sizes, ds.len())?;
    let reps = opts.repetitions.max(1);
    let points = log_mean_over_reps(sizes, reps, |n, r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(subsample_seed, &[0, n as u64, r as u64]));
        let idx = sample(&mut rng, ds.len(), n).into_vec();
        Ok(kappa_proxy(&ds.principal(&idx))?.value)
    })?;
    fit_exponent(points, opts, |s| -s)
}

/// Ridgeless KRR fit on `train`, mean squared error on `test` averaged
/// over label columns.
fn ridgeless_holdout_mse(ds: &KernelDataset, train: &[usize], test: &[usize]) -> Result<f64> {
    let k_tt = ds.principal(train);
    let y_t = DMatrix::from_fn(train.len(), ds.classes(), |i, c| ds.labels[(train[i], c)]);
    let coef = match cholesky_ok(&k_tt) {
        Some(ch) => ch.solve(&y_t),
        None => {
            let svd = SVD::new(k_tt, true, true);
            let eps = svd.singular_values.max() * 1e-12;
            svd.solve(&y_t, eps).map_err(|e| Error::SingularMatrix(e.to_string()))?
        }
    };
    let k_ht = DMatrix::from_fn(test.len(), train.len(), |a, b| ds.kernel[(test[a], train[b])]);
    let pred = k_ht * coef;
    let mut sq = 0.0;
    for (a, &i) in test.iter().enumerate() {
        for c in 0..ds.classes() {
            sq += (pred[(a, c)] - ds.labels[(i, c)]).powi(2);
        }
    }
    let mse = sq / (test.len() * ds.classes()) as f64;
    if mse.is_finite() && mse > 0.0 {
        Ok(mse)
    } else {
        Err(Error::SingularMatrix(format!("held-out error {mse} is not positive")))
    }
}

/// Estimates `β` as `1 − slope` of the ridgeless held-out error against
/// `n`. Each repetition sets aside its own random block of `holdout`
/// points and trains on nested prefixes of a shuffle of the rest.
pub fn measure_beta(
    ds: &KernelDataset,
    sizes: &[usize],
    subsample_seed: u64,
    opts: &FitOptions,
) -> Result<ExponentFit> {
    let n_total = ds.len();
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    let holdout = opts.holdout.unwrap_or(n_total.saturating_sub(max_size));
    if holdout == 0 || holdout >= n_total {
        return Err(Error::invalid(format!(
            "need a held-out block strictly inside the {n_total} points, got {holdout}"
        )));
    }
    check_sizes(sizes, n_total - holdout)?;
    let reps = opts.repetitions.max(1);
    let perms: Vec<Vec<usize>> = (0..reps)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(subsample_seed, &[1, r as u64]));
            sample(&mut rng, n_total, n_total).into_vec()
        })
        .collect();
    let points = log_mean_over_reps(sizes, reps, |n, r| {
        let (test, pool) = perms[r].split_at(holdout);
        ridgeless_holdout_mse(ds, &pool[..n], test)
    })?;
    fit_exponent(points, opts, |s| 1.0 - s)
}

/// Empirical eigenstructure of the full kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectEigenstructure {
    /// `eig(K)/N`, descending.
    pub eigenvalues: Vec<f64>,
    /// `v̂ᵢ² = (uᵢᵀy)²/N` per label column (`coeffs_sq[c][i]`), so that
    /// `Σᵢ v̂ᵢ² = ‖y‖²/N`.
    pub coeffs_sq: Vec<Vec<f64>>,
    /// `Σ_{j≥i} v̂ⱼ²` per label column.
    pub tailsums: Vec<Vec<f64>>,
}

/// Dense symmetric eigendecomposition, `O(N³)`.
pub fn direct_eigenstructure(ds: &KernelDataset) -> DirectEigenstructure {
    let n = ds.len();
    let eig = SymmetricEigen::new(ds.kernel.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let nf = n as f64;
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i] / nf).collect();
    let proj = eig.eigenvectors.tr_mul(&ds.labels);
    let mut coeffs_sq = Vec::with_capacity(ds.classes());
    let mut tailsums = Vec::with_capacity(ds.classes());
    for c in 0..ds.classes() {
        let v: Vec<f64> = order.iter().map(|&i| proj[(i, c)].powi(2) / nf).collect();
        let mut t = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            acc += v[i];
            t[i] = acc;
        }
        coeffs_sq.push(v);
        tailsums.push(t);
    }
    DirectEigenstructure { eigenvalues, coeffs_sq, tailsums }
}

/// About 64 log-spaced 1-based indices in `[first, last]`.
fn log_indices(first: usize, last: usize) -> Vec<usize> {
    let (a, b) = ((first as f64).ln(), (last as f64).ln());
    let mut out: Vec<usize> = (0..64)
        .map(|t| (a + (b - a) * t as f64 / 63.0).exp().round() as usize)
        .collect();
    out.dedup();
    out
}

impl DirectEigenstructure {
    /// `α̂` from the slope of `ln λ̂ᵢ` against `ln i`, skipping the first
    /// `direct_skip_head` indices. Non-positive eigenvalues end the range.
    pub fn fit_alpha(&self, opts: &FitOptions) -> Result<ExponentFit> {
        let last = self.eigenvalues.iter().take_while(|&&l| l > 0.0).count();
        let first = opts.direct_skip_head + 1;
        if last < first + 3 {
            return Err(Error::invalid("too few positive eigenvalues beyond the skipped head"));
        }
        let points = log_indices(first, last)
            .into_iter()
            .map(|i| ((i as f64).ln(), self.eigenvalues[i - 1].ln()))
            .collect();
        fit_exponent(points, opts, |s| -s)
    }

    /// `β̂ = 1 − slope` of the label-summed tailsum `Σ_{j≥i} v̂ⱼ²` against
    /// `i`.
    pub fn fit_beta(&self, opts: &FitOptions) -> Result<ExponentFit> {
        let n = self.eigenvalues.len();
        let summed: Vec<f64> = (0..n).map(|i| self.tailsums.iter().map(|t| t[i]).sum()).collect();
        let last = summed.iter().take_while(|&&t| t > 0.0).count();
        if last < 4 {
            return Err(Error::invalid("too few positive tailsums"));
        }
        let points = log_indices(1, last)
            .into_iter()
            .map(|i| ((i as f64).ln(), summed[i - 1].ln()))
            .collect();
        fit_exponent(points, opts, |s| 1.0 - s)
    }
}

/// Gaussian data with powerlaw eigenstructure `λᵢ = i^{-α}`, `vᵢ² = i^{-β}`
/// for `i ≤ modes`.
///
/// The first `explicit_modes` eigenfunctions are drawn as independent
/// standard normals. The remaining modes enter through their central limit:
/// they add `(Σλ)·I + (Σλ²)^{1/2}·W` to the kernel, with `W` a symmetric
/// Gaussian matrix (unit off-diagonal variance, diagonal variance 2), and
/// an independent `N(0, Σv²)` term to the labels. The tail is treated as
/// unlearnable, so its label part is not correlated with its kernel part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticKernelSpec {
    pub alpha: f64,
    pub beta: f64,
    pub samples: usize,
    pub modes: usize,
    pub explicit_modes: usize,
    #[serde(default)]
    pub noise_var: f64,
    pub seed: u64,
}

impl SyntheticKernelSpec {
    /// Ground truth `α = 1.1`, `β = 1.3` on 2000 points with `3·10⁶`
    /// modes, of which `10⁴` are explicit.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            alpha: 1.1,
            beta: 1.3,
            samples: 2000,
            modes: 3_000_000,
            explicit_modes: 10_000,
            noise_var: 0.0,
            seed,
        }
    }
}

const SYNTH_CHUNK: usize = 512;

/// Builds the dataset described by [`SyntheticKernelSpec`].
pub fn synthetic_powerlaw_dataset(spec: &SyntheticKernelSpec) -> Result<KernelDataset> {
    let SyntheticKernelSpec { alpha, beta, samples: n, modes, explicit_modes, noise_var, seed } = *spec;
    if !(alpha > 0.0 && beta > 0.0 && noise_var >= 0.0) {
        return Err(Error::invalid("need alpha > 0, beta > 0 and noise_var >= 0"));
    }
    if n == 0 || modes == 0 || explicit_modes == 0 {
        return Err(Error::invalid("samples, modes and explicit_modes must be positive"));
    }
    let explicit = explicit_modes.min(modes);
    let chunks = explicit.div_ceil(SYNTH_CHUNK);
    let (kernel, y) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * SYNTH_CHUNK;
            let end = (start + SYNTH_CHUNK).min(explicit);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, c as u64]));
            let mut phi = DMatrix::<f64>::from_fn(n, end - start, |_, _| rng.sample(StandardNormal));
            let mut y = DVector::<f64>::zeros(n);
            for (j, mut col) in phi.column_iter_mut().enumerate() {
                let i = (start + j + 1) as f64;
                y.axpy(i.powf(-0.5 * beta), &col, 1.0);
                col *= i.powf(-0.5 * alpha);
            }
            let mut k = DMatrix::<f64>::zeros(n, n);
            k.gemm(1.0, &phi, &phi.transpose(), 0.0);
            (k, y)
        })
        .reduce(
            || (DMatrix::zeros(n, n), DVector::zeros(n)),
            |(ka, ya), (kb, yb)| (ka + kb, ya + yb),
        );
    let mut kernel = kernel;
    let mut y = y;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    if modes > explicit {
        let (mut s1, mut s2, mut p) = (0.0, 0.0, 0.0);
        for i in (explicit + 1..=modes).rev() {
            let lam = (i as f64).powf(-alpha);
            s1 += lam;
            s2 += lam * lam;
            p += (i as f64).powf(-beta);
        }
        let sd = s2.sqrt();
        for j in 0..n {
            kernel[(j, j)] += s1 + sd * 2f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
            for i in 0..j {
                let w = sd * rng.sample::<f64, _>(StandardNormal);
                kernel[(i, j)] += w;
                kernel[(j, i)] += w;
            }
        }
        let ps = p.sqrt();
        for j in 0..n {
            y[j] += ps * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let sigma = noise_var.sqrt();
    if sigma > 0.0 {
        for j in 0..n {
            y[j] += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let kernel = (&kernel + kernel.transpose()) * 0.5;
    let name = format!("powerlaw_a{alpha}_b{beta}_n{n}");
    KernelDataset::new(name, kernel, DMatrix::from_column_slice(n, 1, y.as_slice()))
}

/// Log-spaced, strictly increasing integer grid from `lo` to `hi`.
pub fn log_size_grid(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    if points < 2 || lo >= hi {
        return vec![lo.max(1)];
    }
    let (a, b) = ((lo.max(1) as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..points)
        .map(|t| (a + (b - a) * t as f64 / (points - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_dataset(diag: &[f64]) -> KernelDataset {
        let n = diag.len();
        let k = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        let y = DMatrix::from_fn(n, 1, |i, _| (i as f64 + 1.0).sin());
        KernelDataset::new("diag", k, y).unwrap()
    }

    #[test]
    fn proxy_of_identity_is_one_over_n() {
        let p = kappa_proxy(&DMatrix::identity(37, 37)).unwrap();
        assert!((p.value - 1.0 / 37.0).abs() < 1e-15);
        assert!(!p.stabilized);
    }

    #[test]
    fn proxy_of_diagonal_is_harmonic() {
        let d = [3.0, 0.5, 0.25, 2.0, 1e-3];
        let want = 1.0 / d.iter().map(|x| 1.0 / x).sum::<f64>();
        let got = kappa_proxy(&DMatrix::from_diagonal(&DVector::from_column_slice(&d))).unwrap();
        assert!(((got.value - want) / want).abs() < 1e-13);
    }

    #[test]
    fn proxy_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::<f64>::from_fn(30, 50, |_, _| rng.sample(StandardNormal));
        let k = &a * a.transpose();
        let want = 1.0 / k.clone().try_inverse().unwrap().trace();
        let got = kappa_proxy(&k).unwrap().value;
        assert!(((got - want) / want).abs() < 1e-10);
    }

    #[test]
    fn rank_deficient_kernel_is_stabilized() {
        let v = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let k = &v * v.transpose();
        let p = kappa_proxy(&k).unwrap();
        assert!(p.stabilized);
        assert!(p.value > 0.0 && p.value < 1e-10);
        assert!(matches!(kappa_proxy(&DMatrix::zeros(3, 3)), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn dataset_validation() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-6, 1.0]);
        let y = DMatrix::zeros(2, 1);
        assert!(KernelDataset::new("x", k.clone(), y.clone()).is_err());
        assert!(KernelDataset::new("x", DMatrix::identity(2, 2), DMatrix::zeros(3, 1)).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-10, 1.0]);
        let ds = KernelDataset::new("x", ok, y).unwrap();
        assert_eq!(ds.kernel()[(0, 1)], ds.kernel()[(1, 0)]);
    }

    #[test]
    fn file_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.sample(StandardNormal));
        let k = &a * a.transpose();
        let y = DMatrix::<f64>::from_fn(6, 2, |_, _| rng.sample(StandardNormal));
        let ds = KernelDataset::new("rt", k, y).unwrap();
        let dir = std::env::temp_dir().join(format!("eigenrisk-est-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let bin = dir.join("k.bin");
        ds.write_binary(&bin).unwrap();
        assert_eq!(KernelDataset::read(&bin).unwrap(), ds);
        let csv = dir.join("rt.csv");
        ds.write_csv(&csv).unwrap();
        assert_eq!(KernelDataset::read(&csv).unwrap(), ds);
        std::fs::write(&bin, b"{\"name\":\"t\",\"N\":2,\"C\":1,\"dtype\":\"f64\",\"layout\":\"row-major\"}\n\0\0").unwrap();
        assert!(matches!(KernelDataset::read(&bin), Err(Error::Format(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn direct_recovers_diagonal_and_parseval() {
        let d = [4.0, 0.1, 2.0, 1.0];
        let ds = diag_dataset(&d);
        let de = direct_eigenstructure(&ds);
        let want = [1.0, 0.5, 0.25, 0.025];
        for (g, w) in de.eigenvalues.iter().zip(want) {
            assert!((g - w).abs() < 1e-14);
        }
        let y2 = ds.labels().norm_squared() / 4.0;
        assert!((de.coeffs_sq[0].iter().sum::<f64>() - y2).abs() < 1e-14);
        assert!((de.tailsums[0][0] - y2).abs() < 1e-14);
        // eigenvalue sum equals Tr(K)/N
        assert!((de.eigenvalues.iter().sum::<f64>() - ds.kernel().trace() / 4.0).abs() < 1e-14);
    }

    #[test]
    fn line_fits() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 - 1.5 * i as f64)).collect();
        for loss in [FitLoss::LeastSquares, FitLoss::LeastAbsolute] {
            let (s, c) = fit_line(&pts, loss);
            assert!((s + 1.5).abs() < 1e-9 && (c - 2.0).abs() < 1e-9);
        }
        // one outlier moves OLS but not LAD
        let mut bad = pts.clone();
        bad[5].1 += 10.0;
        let (s_ols, _) = fit_line(&bad, FitLoss::LeastSquares);
        let (s_lad, _) = fit_line(&bad, FitLoss::LeastAbsolute);
        assert!((s_lad + 1.5).abs() < 1e-6);
        assert!((s_ols + 1.5).abs() > 1e-3);
    }

    #[test]
    fn size_grid_checks() {
        let ds = diag_dataset(&[1.0; 10]);
        let o = FitOptions::default();
        assert!(matches!(measure_alpha(&ds, &[2, 4], 0, &o), Err(Error::InvalidArgument(_))));
        assert!(matches!(measure_alpha(&ds, &[2, 4, 4], 0, &o), Err(Error::InvalidArgument(_))));
        assert!(matches!(measure_alpha(&ds, &[2, 4, 11], 0, &o), Err(Error::InvalidArgument(_))));
        assert!(matches!(measure_beta(&ds, &[2, 4, 10], 0, &o), Err(Error::InvalidArgument(_))));
        assert_eq!(log_size_grid(10, 1000, 3), vec![10, 100, 1000]);
    }

    #[test]
    fn constant_kernel_is_flagged() {
        let n = 200;
        let k = DMatrix::identity(n, n) * 3.0;
        let y = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let ds = KernelDataset::new("const", k, y).unwrap();
        let fit = measure_alpha(&ds, &log_size_grid(10, 200, 12), 1, &FitOptions::default()).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit.flags.contains(&FitFlag::NoPowerlaw));
    }

    fn fast_task(alpha: f64, beta: f64, noise: f64, seed: u64) -> KernelDataset {
        synthetic_powerlaw_dataset(&SyntheticKernelSpec {
            alpha,
            beta,
            samples: 800,
            modes: 200_000,
            explicit_modes: 3000,
            noise_var: noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn alpha_from_powerlaw_kernel() {
        // the proxy tracks κ(n), whose local exponent is α for α well above 1
        let ds = fast_task(2.0, 2.5, 0.0, 11);
        let fit = measure_alpha(&ds, &log_size_grid(20, 800, 14), 5, &FitOptions::default()).unwrap();
        assert!((fit.exponent - 2.0).abs() < 0.1, "{fit:?}");
        assert!(fit.flags.is_empty(), "{:?}", fit.flags);
    }

    #[test]
    fn proxy_decreases_with_n() {
        let ds = fast_task(1.5, 1.5, 0.0, 4);
        let fit = measure_alpha(&ds, &log_size_grid(10, 800, 10), 2, &FitOptions::default()).unwrap();
        assert!(fit.points.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn beta_from_realizable_task() {
        let ds = fast_task(2.0, 2.5, 0.0, 12);
        let opts = FitOptions { holdout: Some(200), ..FitOptions::default() };
        let fit = measure_beta(&ds, &log_size_grid(20, 600, 12), 6, &opts).unwrap();
        assert!((fit.slope + 1.5).abs() < 0.15, "{fit:?}");
    }

    #[test]
    fn pure_noise_labels_are_flagged() {
        let ds = fast_task(2.0, 2.5, 0.0, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y = DMatrix::from_fn(ds.len(), 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = KernelDataset::new("noise", ds.kernel().clone(), y).unwrap();
        let opts = FitOptions { holdout: Some(200), ..FitOptions::default() };
        let fit = measure_beta(&noise, &log_size_grid(20, 600, 12), 6, &opts).unwrap();
        assert!(fit.slope.abs() < 0.15, "{fit:?}");
        assert!(fit.flags.contains(&FitFlag::NoPowerlaw), "{fit:?}");
    }
}
