//! Exact finite-sample MSE matrices under the true idiosyncratic covariance.
//!
//! Least-squares and projection MSEs are closed forms. Kalman-filter MSEs
//! come from iterating the Riccati recursion to its steady state; when the
//! filter runs under a wrong covariance, the believed recursion is coupled
//! with the five-term recursion for the true error covariance.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{DfmError, Result};
use crate::estimators::kalman::{check_psd, riccati_step};
use crate::estimators::{CovarianceMode, CovarianceSpec, Family, Method, Weighting};
use crate::linalg::{frobenius, spd_inverse, symmetrize, symmetrized};
use crate::model::DfmParameters;

pub const DEFAULT_RICCATI_TOL: f64 = 1e-12;
pub const DEFAULT_RICCATI_HORIZON: usize = 10_000;

/// Intermediates shared by the closed-form MSEs.
///
/// `a`, `b` and `c` are the `r×r` correction terms whose sum with `I_r`
/// gives the projection MSEs under a wrong working covariance; `d` is the
/// steady-state one-step MSE `ΦP̄Φ′ + Σ_η`.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    pub omega: DMatrix<f64>,
    pub omega_star: DMatrix<f64>,
    pub a: Option<DMatrix<f64>>,
    pub b: Option<DMatrix<f64>>,
    pub c: Option<DMatrix<f64>>,
    pub d: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSolve {
    pub p_bar: DMatrix<f64>,
    pub pi_bar: DMatrix<f64>,
    pub k_bar: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Largest successive Frobenius delta of the two recursions, per step.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub method: Method,
    pub assumed: CovarianceSpec,
    pub true_mse: DMatrix<f64>,
    pub believed_mse: DMatrix<f64>,
    /// True `P_t`, `t = 1, 2, …` (Kalman filters only).
    pub time_series: Option<Vec<DMatrix<f64>>>,
    /// Believed `P_t` (Kalman filters only).
    pub believed_series: Option<Vec<DMatrix<f64>>>,
    pub steady_state: Option<SteadyStateSolve>,
    pub intermediates: Intermediates,
}

impl MseReport {
    pub fn is_misspecified(&self) -> bool {
        self.true_mse != self.believed_mse
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiOptions {
    pub horizon: usize,
    pub tol: f64,
    /// Starting `P_0` for both recursions; `I_r` when `None`.
    pub initial_mse: Option<DMatrix<f64>>,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            horizon: DEFAULT_RICCATI_HORIZON,
            tol: DEFAULT_RICCATI_TOL,
            initial_mse: None,
        }
    }
}

fn base_intermediates(params: &DfmParameters) -> Result<Intermediates> {
    let full = Weighting::new(params, &CovarianceSpec::Full)?;
    let diagonal = Weighting::new(params, &CovarianceSpec::Diagonal)?;
    Ok(Intermediates {
        omega: full.signal,
        omega_star: diagonal.signal,
        a: None,
        b: None,
        c: None,
        d: None,
    })
}

/// True error covariance equals the believed one.
fn correctly_specified(params: &DfmParameters, mode: CovarianceMode) -> bool {
    match mode {
        CovarianceMode::Full => true,
        CovarianceMode::Diagonal => params.idio_is_diagonal(),
        CovarianceMode::Spherical => false,
    }
}

/// The working covariance an assumed spec stands for, as an `n×n` matrix.
fn working_cov(params: &DfmParameters, assumed: &CovarianceSpec) -> Result<DMatrix<f64>> {
    let n = params.n();
    Ok(match assumed.resolve(params)? {
        CovarianceSpec::Full => params.idio_cov().clone(),
        CovarianceSpec::Diagonal => DMatrix::from_diagonal(&params.idio_variances()),
        CovarianceSpec::Spherical { variance } => {
            DMatrix::identity(n, n) * variance.expect("resolved spherical variance")
        }
    })
}

/// `Λ′M⁻¹(ΛΛ′ + S)M⁻¹Λ − 2Λ′M⁻¹Λ` with `M = ΛΛ′ + working`, formed with
/// `n×n` matrices and a Cholesky factorization of `M`.
pub fn projection_correction(
    loadings: &DMatrix<f64>,
    working: &DMatrix<f64>,
    truth: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let common = loadings * loadings.transpose();
    let m = &common + working;
    let chol = m.cholesky().ok_or(DfmError::NotPositiveDefinite { what: "ΛΛ′ + Σ_W" })?;
    let g = chol.solve(loadings);
    let quad = g.transpose() * (&common + truth) * &g;
    let lin = loadings.transpose() * &g;
    Ok(symmetrized(quad - lin * 2.0))
}

/// GLS, WLS or OLS.
pub fn mse_ls(params: &DfmParameters, assumed: CovarianceSpec) -> Result<MseReport> {
    let assumed = assumed.resolve(params)?;
    let method = Method::new(Family::LeastSquares, assumed.mode());
    let intermediates = base_intermediates(params)?;
    let (true_mse, believed_mse) = match assumed {
        CovarianceSpec::Full => {
            let m = spd_inverse(&intermediates.omega, "Λ′Σ⁻¹Λ")?;
            (m.clone(), m)
        }
        CovarianceSpec::Diagonal => {
            let believed = spd_inverse(&intermediates.omega_star, "Λ′Σ*⁻¹Λ")?;
            if params.idio_is_diagonal() {
                (believed.clone(), believed)
            } else {
                let w = Weighting::new(params, &assumed)?;
                (sandwich(&believed, &w.weighted_loadings, params.idio_cov()), believed)
            }
        }
        CovarianceSpec::Spherical { variance } => {
            let w = Weighting::identity(params);
            let bread = spd_inverse(&w.signal, "Λ′Λ")?;
            let believed = &bread * variance.expect("resolved spherical variance");
            (sandwich(&bread, &w.weighted_loadings, params.idio_cov()), believed)
        }
    };
    Ok(MseReport {
        method,
        assumed,
        true_mse,
        believed_mse,
        time_series: None,
        believed_series: None,
        steady_state: None,
        intermediates,
    })
}

/// `B X′ΣX B`.
fn sandwich(bread: &DMatrix<f64>, weighted: &DMatrix<f64>, truth: &DMatrix<f64>) -> DMatrix<f64> {
    let x = weighted * bread;
    symmetrized(x.transpose() * truth * x)
}

/// fLP, dLP or sLP.
pub fn mse_lp(params: &DfmParameters, assumed: CovarianceSpec) -> Result<MseReport> {
    let assumed = assumed.resolve(params)?;
    let method = Method::new(Family::LinearProjection, assumed.mode());
    let r = params.r();
    let mut intermediates = base_intermediates(params)?;
    let w = Weighting::new(params, &assumed)?;
    let believed_mse = spd_inverse(&(&w.signal + DMatrix::identity(r, r)), "Λ′WΛ + I")?;
    let true_mse = if correctly_specified(params, assumed.mode()) {
        believed_mse.clone()
    } else {
        let correction =
            projection_correction(params.loadings(), &working_cov(params, &assumed)?, params.idio_cov())?;
        let true_mse = DMatrix::identity(r, r) + &correction;
        match assumed.mode() {
            CovarianceMode::Diagonal => intermediates.c = Some(correction),
            _ => intermediates.a = Some(correction),
        }
        true_mse
    };
    Ok(MseReport {
        method,
        assumed,
        true_mse,
        believed_mse,
        time_series: None,
        believed_series: None,
        steady_state: None,
        intermediates,
    })
}

/// fKF, dKF or sKF via the Riccati recursions, run to steady state.
///
/// The believed recursion uses the assumed covariance throughout. When the
/// filter is mis-specified the true recursion
/// `P_t = Π_t + KΛΠ_tΛ′K′ + KΣK′ − KΛΠ_t − Π_tΛ′K′`, with `Π_t = ΦP_{t−1}Φ′ + Σ_η`
/// and `K` the believed gain, is iterated alongside it. Gains are taken in
/// their `r×r` form, so `KΛ = GΛ′WΛ` and `KΣK′ = G(WΛ)′Σ(WΛ)G′`.
pub fn mse_kf_riccati(params: &DfmParameters, assumed: CovarianceSpec, options: &RiccatiOptions) -> Result<MseReport> {
    let assumed = assumed.resolve(params)?;
    let method = Method::new(Family::KalmanFilter, assumed.mode());
    let r = params.r();
    if !(options.tol > 0.0) || options.horizon == 0 {
        return Err(DfmError::invalid("riccati", "tolerance and horizon must be positive"));
    }
    let start = options.initial_mse.clone().unwrap_or_else(|| DMatrix::identity(r, r));
    if start.shape() != (r, r) {
        return Err(DfmError::DimensionMismatch(format!(
            "initial MSE is {}×{}, expected {r}×{r}",
            start.nrows(),
            start.ncols()
        )));
    }
    let phi = params.factor_ar();
    let noise = params.state_noise_cov();
    let w = Weighting::new(params, &assumed)?;
    let coupled = !correctly_specified(params, assumed.mode());
    let psi = coupled.then(|| symmetrized(w.weighted_loadings.transpose() * params.idio_cov() * &w.weighted_loadings));

    let mut believed = start.clone();
    let mut truth = start;
    let mut gain = DMatrix::zeros(r, r);
    let mut time_series = Vec::new();
    let mut believed_series = Vec::new();
    let mut residuals = Vec::new();
    for t in 1..=options.horizon {
        let (_, g, next_believed) = riccati_step(phi, noise, &w.signal, &believed, t)?;
        let next_truth = match &psi {
            Some(psi) => {
                let mut pi = phi * &truth * phi.transpose() + noise;
                symmetrize(&mut pi);
                let kl = &g * &w.signal;
                let kl_pi = &kl * &pi;
                let mut p = &pi + &kl_pi * kl.transpose() + &g * psi * g.transpose() - &kl_pi - kl_pi.transpose();
                symmetrize(&mut p);
                check_psd(&p, t)?;
                p
            }
            None => next_believed.clone(),
        };
        let delta = frobenius(&(&next_believed - &believed)).max(frobenius(&(&next_truth - &truth)));
        residuals.push(delta);
        believed = next_believed;
        truth = next_truth;
        gain = g;
        time_series.push(truth.clone());
        believed_series.push(believed.clone());
        if delta < options.tol {
            break;
        }
    }
    let residual = *residuals.last().expect("horizon is positive");
    if !(residual < options.tol) {
        return Err(DfmError::NoConvergence {
            horizon: options.horizon,
            residual,
        });
    }
    let pi_bar = symmetrized(phi * &truth * phi.transpose() + noise);
    let mut intermediates = base_intermediates(params)?;
    intermediates.d = Some(pi_bar.clone());
    let steady = SteadyStateSolve {
        p_bar: truth.clone(),
        pi_bar,
        k_bar: &gain * w.weighted_loadings.transpose(),
        iterations: residuals.len(),
        residual,
        residuals,
    };
    Ok(MseReport {
        method,
        assumed,
        true_mse: truth,
        believed_mse: believed,
        time_series: Some(time_series),
        believed_series: Some(believed_series),
        steady_state: Some(steady),
        intermediates,
    })
}

/// Theoretical MSE for any of the nine methods, with the Kalman filters at
/// their steady state.
pub fn theoretical_mse(params: &DfmParameters, method: Method, spherical_variance: Option<f64>) -> Result<MseReport> {
    let assumed = CovarianceSpec::for_mode(method.mode(), spherical_variance);
    match method.family() {
        Family::LeastSquares => mse_ls(params, assumed),
        Family::LinearProjection => mse_lp(params, assumed),
        Family::KalmanFilter => mse_kf_riccati(params, assumed, &RiccatiOptions::default()),
    }
}

/// `n · MSE`, the scale at which MSEs of `√N`-consistent estimators settle.
pub fn asymptotic_variance(report: &MseReport, n: usize) -> DMatrix<f64> {
    &report.true_mse * n as f64
}

/// All of `Ω`, `Ω*`, `A`, `B`, `C` and `D` on one instance, each formed
/// literally. `D` comes from the correctly specified filter.
pub fn closed_form_intermediates(params: &DfmParameters, spherical_variance: Option<f64>) -> Result<Intermediates> {
    let mut out = base_intermediates(params)?;
    let spherical = working_cov(params, &CovarianceSpec::Spherical { variance: spherical_variance })?;
    let diagonal = working_cov(params, &CovarianceSpec::Diagonal)?;
    let lambda = params.loadings();
    out.a = Some(projection_correction(lambda, &spherical, params.idio_cov())?);
    out.b = Some(projection_correction(lambda, &spherical, &diagonal)?);
    out.c = Some(projection_correction(lambda, &diagonal, params.idio_cov())?);
    out.d = mse_kf_riccati(params, CovarianceSpec::Full, &RiccatiOptions::default())?
        .steady_state
        .map(|s| s.pi_bar);
    Ok(out)
}

/// Pairs of estimators whose `N·MSE` coincide as `N → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EquivalencePair {
    DlpWls,
    SlpOls,
    FlpGls,
    FkfGls,
    DkfWls,
    SkfOls,
}

impl EquivalencePair {
    pub const ALL: [EquivalencePair; 6] = [
        EquivalencePair::DlpWls,
        EquivalencePair::SlpOls,
        EquivalencePair::FlpGls,
        EquivalencePair::FkfGls,
        EquivalencePair::DkfWls,
        EquivalencePair::SkfOls,
    ];

    pub fn methods(self) -> (Method, Method) {
        match self {
            EquivalencePair::DlpWls => (Method::DLp, Method::Wls),
            EquivalencePair::SlpOls => (Method::SLp, Method::Ols),
            EquivalencePair::FlpGls => (Method::FLp, Method::Gls),
            EquivalencePair::FkfGls => (Method::FKf, Method::Gls),
            EquivalencePair::DkfWls => (Method::DKf, Method::Wls),
            EquivalencePair::SkfOls => (Method::SKf, Method::Ols),
        }
    }

    pub fn label(self) -> String {
        let (a, b) = self.methods();
        format!("{a}-{b}")
    }
}

impl fmt::Display for EquivalencePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// `N·‖MSE_A − MSE_B‖_F` for each pair, using true MSEs.
pub fn equivalence_gap(
    params: &DfmParameters,
    spherical_variance: Option<f64>,
) -> Result<BTreeMap<EquivalencePair, f64>> {
    let mut mses = BTreeMap::new();
    for method in Method::ALL {
        mses.insert(method, theoretical_mse(params, method, spherical_variance)?.true_mse);
    }
    Ok(gaps_from(&mses, params.n()))
}

pub(crate) fn gaps_from(mses: &BTreeMap<Method, DMatrix<f64>>, n: usize) -> BTreeMap<EquivalencePair, f64> {
    EquivalencePair::ALL
        .into_iter()
        .filter_map(|pair| {
            let (a, b) = pair.methods();
            Some((pair, n as f64 * frobenius(&(mses.get(&a)? - mses.get(&b)?))))
        })
        .collect()
}
