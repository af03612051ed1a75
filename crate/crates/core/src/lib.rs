//! Factor extraction for approximate dynamic factor models with known
//! parameters, together with exact finite-sample MSEs and a seeded Monte
//! Carlo harness for checking them.

pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod mse;
pub mod rng;

pub use error::{DfmError, Result};
pub use estimators::{
    extract_lp, extract_ls, kalman_filter, CovarianceMode, CovarianceSpec, FactorEstimate, FactorExtractor, Family,
    KalmanOutput, KalmanState, Method,
};
pub use model::{
    build_idio_cov, build_state_noise_cov, draw_loadings, simulate, validate_identification, DfmParameters,
    FactorPath, HeteroMode, IdentificationReport, Panel, ScenarioConfig,
};
pub use montecarlo::{
    band_series, coverage_check, run_experiment, scaling_study, BandPoint, BandRequest, BandSeries, BandSource,
    ExperimentOptions, ExperimentResult, ScalingStudy, SphericalVariance,
};
pub use mse::{
    asymptotic_variance, equivalence_gap, mse_kf_riccati, mse_lp, mse_ls, theoretical_mse, EquivalencePair,
    Intermediates, MseReport, RiccatiOptions, SteadyStateSolve,
};
pub use rng::RngStream;
