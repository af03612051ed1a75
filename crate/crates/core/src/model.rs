//! The approximate dynamic factor model `Y_t = Λ F_t + ε_t` with VAR(1)
//! factors `F_t = Φ F_{t-1} + η_t`, normalized so that `Var(F_t) = I_r`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Open01, StandardNormal, Uniform};

use crate::error::{DfmError, Result};
use crate::linalg::{all_finite, is_symmetric, min_eigenvalue, symmetrized};
use crate::rng::RngStream;

/// Tolerance used when checking that a supplied covariance is symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

/// Known parameters of a dynamic factor model.
///
/// Immutable once built; the constructor derives the state noise covariance
/// from the factor AR matrix and caches the Cholesky factor of `Σ_ε`.
#[derive(Debug, Clone)]
pub struct DfmParameters {
    loadings: DMatrix<f64>,
    idio_cov: DMatrix<f64>,
    factor_ar: DMatrix<f64>,
    state_noise_cov: DMatrix<f64>,
    idio_chol: Cholesky<f64, Dyn>,
    idio_is_diagonal: bool,
}

impl DfmParameters {
    pub fn new(
        loadings: DMatrix<f64>,
        idio_cov: DMatrix<f64>,
        factor_ar: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, r) = loadings.shape();
        if n == 0 || r == 0 {
            return Err(DfmError::invalid("loadings", "must be non-empty"));
        }
        if r > n {
            return Err(DfmError::invalid(
                "loadings",
                format!("more factors ({r}) than series ({n})"),
            ));
        }
        if idio_cov.shape() != (n, n) {
            return Err(DfmError::DimensionMismatch(format!(
                "idiosyncratic covariance is {:?}, expected ({n}, {n})",
                idio_cov.shape()
            )));
        }
        if factor_ar.shape() != (r, r) {
            return Err(DfmError::DimensionMismatch(format!(
                "factor AR matrix is {:?}, expected ({r}, {r})",
                factor_ar.shape()
            )));
        }
        if !all_finite(&loadings) || !all_finite(&idio_cov) || !all_finite(&factor_ar) {
            return Err(DfmError::invalid("parameters", "non-finite entries"));
        }
        if !is_symmetric(&idio_cov, SYMMETRY_TOL) {
            return Err(DfmError::invalid("idio_cov", "not symmetric"));
        }
        let idio_cov = symmetrized(idio_cov);
        let idio_chol = idio_cov
            .clone()
            .cholesky()
            .ok_or(DfmError::NotPositiveDefinite {
                what: "idiosyncratic covariance",
            })?;
        if !has_full_column_rank(&loadings) {
            return Err(DfmError::invalid("loadings", "not of full column rank"));
        }
        let state_noise_cov = build_state_noise_cov(&factor_ar)?;
        let idio_is_diagonal =
            (0..n).all(|i| (0..n).all(|j| i == j || idio_cov[(i, j)] == 0.0));
        Ok(DfmParameters {
            loadings,
            idio_cov,
            factor_ar,
            state_noise_cov,
            idio_chol,
            idio_is_diagonal,
        })
    }

    /// Same loadings and dynamics, different idiosyncratic covariance.
    pub fn with_idio_cov(&self, idio_cov: DMatrix<f64>) -> Result<Self> {
        DfmParameters::new(self.loadings.clone(), idio_cov, self.factor_ar.clone())
    }

    /// Same loadings and idiosyncratic covariance, different dynamics.
    pub fn with_factor_ar(&self, factor_ar: DMatrix<f64>) -> Result<Self> {
        DfmParameters::new(self.loadings.clone(), self.idio_cov.clone(), factor_ar)
    }

    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn idio_cov(&self) -> &DMatrix<f64> {
        &self.idio_cov
    }

    pub fn factor_ar(&self) -> &DMatrix<f64> {
        &self.factor_ar
    }

    pub fn state_noise_cov(&self) -> &DMatrix<f64> {
        &self.state_noise_cov
    }

    /// `diag(Σ_ε)` as a vector.
    pub fn idio_variances(&self) -> DVector<f64> {
        self.idio_cov.diagonal()
    }

    pub fn mean_idio_variance(&self) -> f64 {
        self.idio_cov.diagonal().mean()
    }

    pub fn idio_is_diagonal(&self) -> bool {
        self.idio_is_diagonal
    }

    pub(crate) fn idio_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.idio_chol
    }
}

fn has_full_column_rank(m: &DMatrix<f64>) -> bool {
    let sv = m.clone().singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > max * 1e-10 * (m.nrows() as f64)
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// State noise covariance that makes the VAR(1) factor stationary with
/// unit covariance: `Σ_η = I_r − ΦΦ′`.
///
/// The result is checked against the stationarity equation
/// `vec(Σ_F) = (I − Φ⊗Φ)⁻¹ vec(Σ_η)` with `Σ_F = I_r`.
pub fn build_state_noise_cov(factor_ar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !factor_ar.is_square() {
        return Err(DfmError::DimensionMismatch(format!(
            "factor AR matrix must be square, got {:?}",
            factor_ar.shape()
        )));
    }
    let r = factor_ar.nrows();
    let rho = spectral_radius(factor_ar);
    if !(rho < 1.0) {
        return Err(DfmError::NonStationary(format!(
            "spectral radius {rho} is not below 1"
        )));
    }
    let sigma_eta = symmetrized(DMatrix::identity(r, r) - factor_ar * factor_ar.transpose());
    let min_eig = min_eigenvalue(&sigma_eta);
    if min_eig < -1e-12 {
        return Err(DfmError::NonStationary(format!(
            "I − ΦΦ′ is indefinite (min eigenvalue {min_eig:e}); no unit-variance factor exists"
        )));
    }
    let implied = stationary_covariance(factor_ar, &sigma_eta)?;
    let gap = (implied - DMatrix::identity(r, r)).norm();
    if gap > 1e-8 {
        return Err(DfmError::NonStationary(format!(
            "implied factor covariance deviates from identity by {gap:e}"
        )));
    }
    Ok(sigma_eta)
}

/// Solves `Σ_F = Φ Σ_F Φ′ + Σ_η` through the Kronecker system
/// `(I − Φ⊗Φ) vec(Σ_F) = vec(Σ_η)`.
pub fn stationary_covariance(
    factor_ar: &DMatrix<f64>,
    state_noise_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r = factor_ar.nrows();
    let system = DMatrix::identity(r * r, r * r) - factor_ar.kronecker(factor_ar);
    let rhs = DVector::from_column_slice(state_noise_cov.as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| DfmError::NonStationary("I − Φ⊗Φ is singular".into()))?;
    Ok(symmetrized(DMatrix::from_column_slice(r, r, sol.as_slice())))
}

/// How the idiosyncratic variance multipliers `v_i` are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeteroMode {
    /// `v_i = 1` for every series.
    Unit,
    /// `v_i ~ U(lo, hi)` i.i.d.
    Uniform { lo: f64, hi: f64 },
}

impl HeteroMode {
    /// The heteroscedastic design `v_i ~ U(0.5, 10)`.
    pub const STANDARD_UNIFORM: HeteroMode = HeteroMode::Uniform { lo: 0.5, hi: 10.0 };
}

/// One cell of the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub phi: f64,
    pub hetero: HeteroMode,
    pub tau: f64,
    pub sigma2_star: f64,
    pub n: usize,
    pub factors: usize,
    pub t_len: usize,
    pub replications: usize,
    pub seed: u64,
    pub permute_idio: bool,
}

// Child stream indices for parameter generation.
const STREAM_LOADINGS: u64 = 1;
const STREAM_IDIO: u64 = 2;
const STREAM_HETERO: u64 = 0;
const STREAM_PERMUTATION: u64 = 1;

impl ScenarioConfig {
    /// A single-factor scenario with the given grid coordinates.
    pub fn new(phi: f64, hetero: HeteroMode, tau: f64, sigma2_star: f64, n: usize, seed: u64) -> Self {
        ScenarioConfig {
            phi,
            hetero,
            tau,
            sigma2_star,
            n,
            factors: 1,
            t_len: 100,
            replications: 1000,
            seed,
            permute_idio: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.phi) {
            return Err(DfmError::invalid("phi", format!("{} is outside [0, 1)", self.phi)));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(DfmError::invalid("tau", format!("{} is outside [0, 1)", self.tau)));
        }
        if !(self.sigma2_star > 0.0 && self.sigma2_star.is_finite()) {
            return Err(DfmError::invalid("sigma2_star", "must be positive and finite"));
        }
        if let HeteroMode::Uniform { lo, hi } = self.hetero {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(DfmError::invalid("hetero", format!("need 0 < lo < hi, got ({lo}, {hi})")));
            }
        }
        if self.factors == 0 {
            return Err(DfmError::invalid("factors", "must be at least 1"));
        }
        if self.n < self.factors {
            return Err(DfmError::invalid("n", format!("{} is smaller than the number of factors", self.n)));
        }
        if self.t_len == 0 {
            return Err(DfmError::invalid("t_len", "must be at least 1"));
        }
        if self.replications == 0 {
            return Err(DfmError::invalid("replications", "must be at least 1"));
        }
        Ok(())
    }

    /// `Φ = φ I_r`.
    pub fn factor_ar(&self) -> DMatrix<f64> {
        DMatrix::identity(self.factors, self.factors) * self.phi
    }

    /// Draws loadings and idiosyncratic covariance from `stream` and
    /// assembles the model.
    pub fn build_parameters(&self, stream: RngStream) -> Result<DfmParameters> {
        self.validate()?;
        let loadings = draw_loadings(self, stream.child(STREAM_LOADINGS));
        let idio_cov = build_idio_cov(self, stream.child(STREAM_IDIO))?;
        DfmParameters::new(loadings, idio_cov, self.factor_ar())
    }

    pub fn describe(&self) -> String {
        format!(
            "phi={} tau={} sigma2_star={} n={} hetero={:?} seed={}",
            self.phi, self.tau, self.sigma2_star, self.n, self.hetero, self.seed
        )
    }
}

/// Idiosyncratic covariance with `σ_i² = σ²*·v_i` and
/// `σ_ij = σ_i σ_j τ^{|i−j|}`, optionally relabelled by a random
/// permutation applied to rows and columns alike.
///
/// Multipliers and the permutation come from separate children of
/// `stream`, so the first `n` multipliers do not depend on `n`.
pub fn build_idio_cov(config: &ScenarioConfig, stream: RngStream) -> Result<DMatrix<f64>> {
    config.validate()?;
    let n = config.n;
    let multipliers: Vec<f64> = match config.hetero {
        HeteroMode::Unit => vec![1.0; n],
        HeteroMode::Uniform { lo, hi } => {
            let dist = Uniform::new(lo, hi).map_err(|e| DfmError::invalid("hetero", e.to_string()))?;
            let mut rng = stream.child(STREAM_HETERO).rng();
            (0..n).map(|_| rng.sample(dist)).collect()
        }
    };
    let sd: Vec<f64> = multipliers
        .iter()
        .map(|v| (config.sigma2_star * v).sqrt())
        .collect();
    let mut cov = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            config.sigma2_star * multipliers[i]
        } else {
            sd[i] * sd[j] * config.tau.powi(i.abs_diff(j) as i32)
        }
    });
    if config.permute_idio {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream.child(STREAM_PERMUTATION).rng());
        cov = DMatrix::from_fn(n, n, |i, j| cov[(perm[i], perm[j])]);
    }
    if cov.clone().cholesky().is_none() {
        return Err(DfmError::NotPositiveDefinite {
            what: "idiosyncratic covariance",
        });
    }
    Ok(cov)
}

/// Loadings with i.i.d. `U(0,1)` entries, filled row by row.
pub fn draw_loadings(config: &ScenarioConfig, stream: RngStream) -> DMatrix<f64> {
    let mut rng = stream.rng();
    let values: Vec<f64> = (0..config.n * config.factors)
        .map(|_| rng.sample::<f64, _>(Open01))
        .collect();
    DMatrix::from_row_slice(config.n, config.factors, &values)
}

/// Observations `Y_1 … Y_T`, one column per period.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel(DMatrix<f64>);

impl Panel {
    pub fn new(observations: DMatrix<f64>) -> Result<Self> {
        if observations.ncols() == 0 {
            return Err(DfmError::invalid("panel", "needs at least one period"));
        }
        if !all_finite(&observations) {
            return Err(DfmError::invalid("panel", "non-finite observation"));
        }
        Ok(Panel(observations))
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.0.ncols()
    }
}

/// True factors `F_1 … F_T`, one column per period.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPath(DMatrix<f64>);

impl FactorPath {
    pub fn new(factors: DMatrix<f64>) -> Result<Self> {
        if factors.ncols() == 0 {
            return Err(DfmError::invalid("factors", "needs at least one period"));
        }
        if !all_finite(&factors) {
            return Err(DfmError::invalid("factors", "non-finite value"));
        }
        Ok(FactorPath(factors))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn r(&self) -> usize {
        self.0.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.0.ncols()
    }
}

fn standard_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_column_slice(rows, cols, &data)
}

/// Square root `S` with `S S′ = m` for a PSD matrix (Cholesky when possible).
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = m.clone().cholesky() {
        return chol.l();
    }
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

/// Factor path started from the stationary law `F_0 ~ N(0, I_r)`.
pub fn simulate_factors(params: &DfmParameters, t_len: usize, stream: RngStream) -> Result<FactorPath> {
    if t_len == 0 {
        return Err(DfmError::invalid("t_len", "must be at least 1"));
    }
    let r = params.r();
    let mut rng = stream.rng();
    let noise_sqrt = psd_sqrt(params.state_noise_cov());
    let shocks = &noise_sqrt * standard_normal_matrix(&mut rng, r, t_len);
    let mut prev = standard_normal_matrix(&mut rng, r, 1).column(0).into_owned();
    let mut factors = DMatrix::zeros(r, t_len);
    for t in 0..t_len {
        let next = params.factor_ar() * &prev + shocks.column(t);
        factors.set_column(t, &next);
        prev = next;
    }
    FactorPath::new(factors)
}

/// Observations `Y_t = Λ F_t + ε_t` for a given factor path, with
/// `ε_t ~ N(0, Σ_ε)` i.i.d. over time.
pub fn simulate_panel(params: &DfmParameters, factors: &FactorPath, stream: RngStream) -> Result<Panel> {
    if factors.r() != params.r() {
        return Err(DfmError::DimensionMismatch(format!(
            "factor path has {} rows, model has {} factors",
            factors.r(),
            params.r()
        )));
    }
    let (n, t_len) = (params.n(), factors.t_len());
    let mut rng = stream.rng();
    let z = standard_normal_matrix(&mut rng, n, t_len);
    let noise = if params.idio_is_diagonal() {
        let sd = params.idio_variances().map(f64::sqrt);
        let mut z = z;
        for mut col in z.column_iter_mut() {
            col.component_mul_assign(&sd);
        }
        z
    } else {
        params.idio_cholesky().l_dirty().lower_triangle() * z
    };
    Panel::new(params.loadings() * factors.values() + noise)
}

// Child stream indices for `simulate`.
const STREAM_FACTORS: u64 = 0;
const STREAM_NOISE: u64 = 1;

/// Draws a factor path and the observations it generates.
pub fn simulate(params: &DfmParameters, t_len: usize, stream: RngStream) -> Result<(Panel, FactorPath)> {
    let factors = simulate_factors(params, t_len, stream.child(STREAM_FACTORS))?;
    let panel = simulate_panel(params, &factors, stream.child(STREAM_NOISE))?;
    Ok((panel, factors))
}

/// Diagnostics for the restriction that `Λ′Σ_ε⁻¹Λ` is diagonal with
/// strictly decreasing diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationReport {
    pub max_off_diagonal: f64,
    pub diagonal: Vec<f64>,
    pub strictly_decreasing: bool,
}

impl IdentificationReport {
    /// Off-diagonal entries below `tol` relative to the largest diagonal entry,
    /// and strictly decreasing diagonal.
    pub fn identified(&self, tol: f64) -> bool {
        let scale = self.diagonal.iter().copied().fold(0.0, f64::max);
        self.max_off_diagonal <= tol * scale && self.strictly_decreasing
    }
}

pub fn validate_identification(params: &DfmParameters) -> IdentificationReport {
    let weighted = params.idio_cholesky().solve(params.loadings());
    let signal = params.loadings().transpose() * weighted;
    let r = signal.nrows();
    let mut max_off_diagonal: f64 = 0.0;
    for i in 0..r {
        for j in 0..r {
            if i != j {
                max_off_diagonal = max_off_diagonal.max(signal[(i, j)].abs());
            }
        }
    }
    let diagonal: Vec<f64> = signal.diagonal().iter().copied().collect();
    let strictly_decreasing = diagonal.windows(2).all(|w| w[0] > w[1]);
    IdentificationReport {
        max_off_diagonal,
        diagonal,
        strictly_decreasing,
    }
}
