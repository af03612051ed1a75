use nalgebra::{DMatrix, DVector};

use super::{check_panel, CovarianceSpec, FactorEstimate, Family, Method, Weighting};
use crate::error::{DfmError, Result};
use crate::linalg::{min_eigenvalue, spd_inverse, symmetrize};
use crate::model::{DfmParameters, Panel};

/// One step of the filter.
///
/// `filtered_mse` is what the filter believes, computed under the assumed
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub filtered_mean: DVector<f64>,
    pub one_step_mse: DMatrix<f64>,
    pub filtered_mse: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct KalmanOutput {
    pub estimate: FactorEstimate,
    pub states: Vec<KalmanState>,
}

/// `(Ω_W + Π⁻¹)⁻¹`, the `r×r` factor of the gain.
///
/// Falls back to `(I + ΠΩ_W)⁻¹Π` when `Π` is too close to singular for a
/// Cholesky factorization.
pub(crate) fn gain_core(signal: &DMatrix<f64>, one_step: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = signal.nrows();
    if let Ok(pi_inv) = spd_inverse(one_step, "P(t|t-1)") {
        if let Ok(g) = spd_inverse(&(signal + pi_inv), "Λ′WΛ + P(t|t-1)⁻¹") {
            return Ok(g);
        }
    }
    let lhs = DMatrix::identity(r, r) + one_step * signal;
    let mut g = lhs
        .lu()
        .solve(one_step)
        .ok_or(DfmError::SingularNormalEquations { what: "I + P(t|t-1)Λ′WΛ" })?;
    symmetrize(&mut g);
    Ok(g)
}

/// Checks `min eig(p) ≥ −1e−10·trace(p)`.
pub(crate) fn check_psd(p: &DMatrix<f64>, t: usize) -> Result<()> {
    let min = min_eigenvalue(p);
    if !min.is_finite() || min < -1e-10 * p.trace().abs() {
        return Err(DfmError::NonPsdPropagation {
            t,
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// One believed Riccati step: returns `(Π, G, P)`.
pub(crate) fn riccati_step(
    factor_ar: &DMatrix<f64>,
    state_noise_cov: &DMatrix<f64>,
    signal: &DMatrix<f64>,
    prev: &DMatrix<f64>,
    t: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let r = signal.nrows();
    let mut one_step = factor_ar * prev * factor_ar.transpose() + state_noise_cov;
    symmetrize(&mut one_step);
    let g = gain_core(signal, &one_step)?;
    let mut filtered = (DMatrix::identity(r, r) - &g * signal) * &one_step;
    symmetrize(&mut filtered);
    check_psd(&filtered, t)?;
    Ok((one_step, g, filtered))
}

/// Filter with everything that does not depend on the data precomputed.
#[derive(Debug, Clone)]
pub(crate) struct KalmanRunner {
    weighting: Weighting,
    factor_ar: DMatrix<f64>,
    state_noise_cov: DMatrix<f64>,
}

impl KalmanRunner {
    pub(crate) fn new(params: &DfmParameters, weighting: Weighting) -> Self {
        KalmanRunner {
            weighting,
            factor_ar: params.factor_ar().clone(),
            state_noise_cov: params.state_noise_cov().clone(),
        }
    }

    /// Runs the recursions; `visit` sees every step's matrices.
    fn run(
        &self,
        panel: &Panel,
        mut visit: impl FnMut(&DVector<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    ) -> Result<DMatrix<f64>> {
        let r = self.factor_ar.nrows();
        let signal = &self.weighting.signal;
        let projected = self.weighting.weighted_loadings.transpose() * panel.observations();
        let mut means = DMatrix::zeros(r, panel.t_len());
        let mut mean = DVector::zeros(r);
        let mut mse = DMatrix::identity(r, r);
        for t in 0..panel.t_len() {
            let (one_step, g, filtered) =
                riccati_step(&self.factor_ar, &self.state_noise_cov, signal, &mse, t + 1)?;
            let predicted = &self.factor_ar * &mean;
            mean = &predicted + &g * (projected.column(t) - signal * &predicted);
            means.set_column(t, &mean);
            visit(&mean, &one_step, &g, &filtered);
            mse = filtered;
        }
        if !means.iter().all(|v| v.is_finite()) {
            return Err(DfmError::NonPsdPropagation {
                t: panel.t_len(),
                min_eigenvalue: f64::NAN,
            });
        }
        Ok(means)
    }

    pub(crate) fn filter_means(&self, panel: &Panel) -> Result<DMatrix<f64>> {
        self.run(panel, |_, _, _, _| {})
    }

    fn filter(&self, panel: &Panel) -> Result<(DMatrix<f64>, Vec<KalmanState>)> {
        let weighted_t = self.weighting.weighted_loadings.transpose();
        let mut states = Vec::with_capacity(panel.t_len());
        let means = self.run(panel, |mean, one_step, g, filtered| {
            states.push(KalmanState {
                filtered_mean: mean.clone(),
                one_step_mse: one_step.clone(),
                filtered_mse: filtered.clone(),
                gain: g * &weighted_t,
            });
        })?;
        Ok((means, states))
    }
}

/// fKF, dKF or sKF depending on `assumed`, started from `f_0 = 0`,
/// `P_0 = I_r`.
pub fn kalman_filter(panel: &Panel, params: &DfmParameters, assumed: CovarianceSpec) -> Result<KalmanOutput> {
    check_panel(panel, params)?;
    let assumed = assumed.resolve(params)?;
    let runner = KalmanRunner::new(params, Weighting::new(params, &assumed)?);
    let (values, states) = runner.filter(panel)?;
    Ok(KalmanOutput {
        estimate: FactorEstimate {
            method: Method::new(Family::KalmanFilter, assumed.mode()),
            values,
            assumed,
        },
        states,
    })
}
