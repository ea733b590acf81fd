//! Omniscient risk estimates for random-feature (RF) and kernel ridge
//! regression (KRR), with powerlaw asymptotics, a Gaussian-universality
//! Monte Carlo simulator, and spectral exponent estimation.
//!
//! The closed-form theory is generic over [`Scalar`] (`f32` or `f64`).
//! Simulation and estimation work on dense matrices and use `f64` only.

pub mod eigensolver;
pub mod error;
pub mod estimation;
pub mod limits;
pub mod powerlaw;
pub mod risk;
pub mod roots;
pub mod scalar;
pub mod simulator;
pub mod spectrum;
mod tail;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use spectrum::{
    make_powerlaw_structure, ModeSums, PowerlawTail, PowerlawTask, TailEstimate,
    TaskEigenstructure,
};
pub use eigensolver::{
    rf_derivatives, solve_krr_kappa, solve_rf_constants, solve_rf_constants_nested,
    solve_ridgeless, ConstantDerivatives, ImplicitConstants, SolverOptions,
};
pub use risk::{
    krr_risk, learnabilities, optimal_ridge, optimal_ridge_with, rf_risk, risk, risk_with, Features,
    Learnabilities, OptimalRidge, RidgeSearch, RiskReport, RISK_CSV_HEADER,
};
pub use powerlaw::{
    continuum_sums, error_exponent, interpolation_threshold, kappa_of_ratio, null_kappa, null_risk,
    optimal_ratio, ratio_of_kappa, risk_of_ratio, scaled_noise, suboptimality_bound,
    OptimalRatioResult, RatioBranch, RatioCurve,
};
pub use limits::{
    bach_ridgeless_risk, check_all_limits, large_n_risk, maloney_risk, LimitCheckResult, LimitGrid,
    LimitName,
};
pub use simulator::{
    derive_seed, simulate_krr, simulate_krr_grid, simulate_rf, simulate_rf_grid, FeatureSampling,
    SimConfig, SimulationResult, TrialResult, TRIAL_CSV_HEADER,
};
pub use estimation::{
    direct_eigenstructure, kappa_proxy, log_size_grid, measure_alpha, measure_beta,
    synthetic_powerlaw_dataset, DirectEigenstructure, ExponentFit, FitFlag, FitLoss, FitOptions,
    KappaProxy, KernelDataset, SyntheticKernelSpec,
};

pub type Task64 = TaskEigenstructure<f64>;
pub type Task32 = TaskEigenstructure<f32>;
pub type PowerlawTask64 = PowerlawTask<f64>;
pub type PowerlawTask32 = PowerlawTask<f32>;
pub type Constants64 = ImplicitConstants<f64>;
pub type Constants32 = ImplicitConstants<f32>;
pub type Report64 = RiskReport<f64>;
pub type Report32 = RiskReport<f32>;
