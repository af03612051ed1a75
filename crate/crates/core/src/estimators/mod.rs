//! The nine factor extractors.
//!
//! Each extractor is a least-squares, linear-projection or Kalman-filter
//! estimator run under a working idiosyncratic covariance (full, diagonal
//! or spherical) that may differ from the truth. Only `r×r` systems are
//! inverted; `n×n` matrices are never formed.

pub(crate) mod kalman;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{DfmError, Result};
use crate::linalg::{spd_inverse, symmetrized};
use crate::model::{DfmParameters, Panel};

pub use kalman::{kalman_filter, KalmanOutput, KalmanState};
pub(crate) use kalman::KalmanRunner;

/// Structure of the working idiosyncratic covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CovarianceMode {
    Full,
    Diagonal,
    Spherical,
}

/// The idiosyncratic covariance an estimator assumes.
///
/// `Full` uses the true `Σ_ε`, `Diagonal` uses `diag(Σ_ε)`, and `Spherical`
/// uses `σ² I_n`. A spherical variance of `None` resolves to the mean of
/// `diag(Σ_ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceSpec {
    Full,
    Diagonal,
    Spherical { variance: Option<f64> },
}

impl CovarianceSpec {
    pub fn spherical(variance: f64) -> Self {
        CovarianceSpec::Spherical {
            variance: Some(variance),
        }
    }

    pub fn mode(&self) -> CovarianceMode {
        match self {
            CovarianceSpec::Full => CovarianceMode::Full,
            CovarianceSpec::Diagonal => CovarianceMode::Diagonal,
            CovarianceSpec::Spherical { .. } => CovarianceMode::Spherical,
        }
    }

    /// The spec matching `mode`, with `spherical_variance` used only in the
    /// spherical case.
    pub fn for_mode(mode: CovarianceMode, spherical_variance: Option<f64>) -> Self {
        match mode {
            CovarianceMode::Full => CovarianceSpec::Full,
            CovarianceMode::Diagonal => CovarianceSpec::Diagonal,
            CovarianceMode::Spherical => CovarianceSpec::Spherical {
                variance: spherical_variance,
            },
        }
    }

    /// Validates the spec and pins the spherical variance against `params`.
    pub fn resolve(&self, params: &DfmParameters) -> Result<CovarianceSpec> {
        match *self {
            CovarianceSpec::Spherical { variance } => {
                let v = variance.unwrap_or_else(|| params.mean_idio_variance());
                if !(v > 0.0 && v.is_finite()) {
                    return Err(DfmError::invalid(
                        "spherical_variance",
                        format!("{v} is not a positive finite number"),
                    ));
                }
                Ok(CovarianceSpec::spherical(v))
            }
            other => Ok(other),
        }
    }

    pub fn spherical_variance(&self) -> Option<f64> {
        match self {
            CovarianceSpec::Spherical { variance } => *variance,
            _ => None,
        }
    }
}

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    LeastSquares,
    LinearProjection,
    KalmanFilter,
}

/// The nine extraction procedures.
///
/// Ordering follows the usual table layout: spherical, diagonal and full
/// variants of LS, then LP, then KF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ols,
    Wls,
    Gls,
    SLp,
    DLp,
    FLp,
    SKf,
    DKf,
    FKf,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ols,
        Method::Wls,
        Method::Gls,
        Method::SLp,
        Method::DLp,
        Method::FLp,
        Method::SKf,
        Method::DKf,
        Method::FKf,
    ];

    pub fn new(family: Family, mode: CovarianceMode) -> Method {
        use CovarianceMode::*;
        use Family::*;
        match (family, mode) {
            (LeastSquares, Full) => Method::Gls,
            (LeastSquares, Diagonal) => Method::Wls,
            (LeastSquares, Spherical) => Method::Ols,
            (LinearProjection, Full) => Method::FLp,
            (LinearProjection, Diagonal) => Method::DLp,
            (LinearProjection, Spherical) => Method::SLp,
            (KalmanFilter, Full) => Method::FKf,
            (KalmanFilter, Diagonal) => Method::DKf,
            (KalmanFilter, Spherical) => Method::SKf,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Method::Gls | Method::Wls | Method::Ols => Family::LeastSquares,
            Method::FLp | Method::DLp | Method::SLp => Family::LinearProjection,
            Method::FKf | Method::DKf | Method::SKf => Family::KalmanFilter,
        }
    }

    pub fn mode(self) -> CovarianceMode {
        match self {
            Method::Gls | Method::FLp | Method::FKf => CovarianceMode::Full,
            Method::Wls | Method::DLp | Method::DKf => CovarianceMode::Diagonal,
            Method::Ols | Method::SLp | Method::SKf => CovarianceMode::Spherical,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Gls => "GLS",
            Method::Wls => "WLS",
            Method::Ols => "OLS",
            Method::FLp => "fLP",
            Method::DLp => "dLP",
            Method::SLp => "sLP",
            Method::FKf => "fKF",
            Method::DKf => "dKF",
            Method::SKf => "sKF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = DfmError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| DfmError::invalid("method", format!("unknown method `{s}`")))
    }
}

/// Extracted factors `f_1 … f_T` (one column per period).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorEstimate {
    pub method: Method,
    pub values: DMatrix<f64>,
    pub assumed: CovarianceSpec,
}

/// `WΛ` and `Λ′WΛ` for a working precision `W`.
#[derive(Debug, Clone)]
pub(crate) struct Weighting {
    pub weighted_loadings: DMatrix<f64>,
    pub signal: DMatrix<f64>,
}

impl Weighting {
    /// `assumed` must already be resolved.
    pub(crate) fn new(params: &DfmParameters, assumed: &CovarianceSpec) -> Result<Self> {
        let loadings = params.loadings();
        let weighted_loadings = match assumed {
            CovarianceSpec::Full if !params.idio_is_diagonal() => params.idio_cholesky().solve(loadings),
            CovarianceSpec::Full | CovarianceSpec::Diagonal => {
                let variances = params.idio_variances();
                let mut w = loadings.clone();
                for (i, mut row) in w.row_iter_mut().enumerate() {
                    row /= variances[i];
                }
                w
            }
            CovarianceSpec::Spherical { variance } => {
                let v = variance.ok_or_else(|| {
                    DfmError::invalid("spherical_variance", "unresolved spherical variance")
                })?;
                loadings / v
            }
        };
        Ok(Weighting::from_weighted(loadings, weighted_loadings))
    }

    /// `W = I`, the scale-free weighting of ordinary least squares.
    pub(crate) fn identity(params: &DfmParameters) -> Self {
        Weighting::from_weighted(params.loadings(), params.loadings().clone())
    }

    fn from_weighted(loadings: &DMatrix<f64>, weighted_loadings: DMatrix<f64>) -> Self {
        let signal = symmetrized(loadings.transpose() * &weighted_loadings);
        Weighting {
            weighted_loadings,
            signal,
        }
    }
}

fn check_panel(panel: &Panel, params: &DfmParameters) -> Result<()> {
    if panel.n() != params.n() {
        return Err(DfmError::DimensionMismatch(format!(
            "panel has {} series, model has {}",
            panel.n(),
            params.n()
        )));
    }
    Ok(())
}

/// A ready-to-apply extractor with all weights precomputed.
#[derive(Debug, Clone)]
pub struct FactorExtractor {
    method: Method,
    assumed: CovarianceSpec,
    kind: ExtractorKind,
}

#[derive(Debug, Clone)]
enum ExtractorKind {
    /// `f_t = G Y_t` for a fixed `r×n` matrix.
    Static(DMatrix<f64>),
    Kalman(KalmanRunner),
}

impl FactorExtractor {
    pub fn new(params: &DfmParameters, method: Method, assumed: CovarianceSpec) -> Result<Self> {
        if assumed.mode() != method.mode() {
            return Err(DfmError::invalid(
                "assumed",
                format!("{method} requires a {:?} working covariance", method.mode()),
            ));
        }
        let assumed = assumed.resolve(params)?;
        let r = params.r();
        let kind = match method.family() {
            Family::LeastSquares => {
                // σ² cancels in OLS, so it is computed with W = I exactly.
                let w = if method == Method::Ols {
                    Weighting::identity(params)
                } else {
                    Weighting::new(params, &assumed)?
                };
                let inv = spd_inverse(&w.signal, "Λ′WΛ")?;
                ExtractorKind::Static(inv * w.weighted_loadings.transpose())
            }
            Family::LinearProjection => {
                let w = Weighting::new(params, &assumed)?;
                let inv = spd_inverse(&(&w.signal + DMatrix::identity(r, r)), "Λ′WΛ + I")?;
                ExtractorKind::Static(inv * w.weighted_loadings.transpose())
            }
            Family::KalmanFilter => {
                ExtractorKind::Kalman(KalmanRunner::new(params, Weighting::new(params, &assumed)?))
            }
        };
        Ok(FactorExtractor {
            method,
            assumed,
            kind,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn assumed(&self) -> CovarianceSpec {
        self.assumed
    }

    /// The static `r×n` weight matrix for LS and LP extractors.
    pub fn static_weights(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            ExtractorKind::Static(g) => Some(g),
            ExtractorKind::Kalman(_) => None,
        }
    }

    pub fn extract(&self, panel: &Panel) -> Result<FactorEstimate> {
        let values = match &self.kind {
            ExtractorKind::Static(g) => {
                if panel.n() != g.ncols() {
                    return Err(DfmError::DimensionMismatch(format!(
                        "panel has {} series, extractor expects {}",
                        panel.n(),
                        g.ncols()
                    )));
                }
                g * panel.observations()
            }
            ExtractorKind::Kalman(runner) => runner.filter_means(panel)?,
        };
        Ok(FactorEstimate {
            method: self.method,
            values,
            assumed: self.assumed,
        })
    }
}

/// GLS, WLS or OLS depending on `assumed`:
/// `f_t = (Λ′WΛ)⁻¹ Λ′W Y_t`.
pub fn extract_ls(panel: &Panel, params: &DfmParameters, assumed: CovarianceSpec) -> Result<FactorEstimate> {
    check_panel(panel, params)?;
    FactorExtractor::new(params, Method::new(Family::LeastSquares, assumed.mode()), assumed)?
        .extract(panel)
}

/// fLP, dLP or sLP depending on `assumed`:
/// `f_t = (Λ′WΛ + I_r)⁻¹ Λ′W Y_t`.
pub fn extract_lp(panel: &Panel, params: &DfmParameters, assumed: CovarianceSpec) -> Result<FactorEstimate> {
    check_panel(panel, params)?;
    FactorExtractor::new(params, Method::new(Family::LinearProjection, assumed.mode()), assumed)?
        .extract(panel)
}
