#![allow(dead_code)]

use dfm_core::DfmParameters;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A random SPD matrix with eigenvalues bounded away from zero.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n);
    let scale: f64 = rng.random_range(0.2..2.0);
    (&a * a.transpose()) * (scale / n as f64) + DMatrix::identity(n, n) * rng.random_range(0.1..1.0)
}

/// A stationary `r×r` AR matrix whose `I − ΦΦ′` is positive definite.
pub fn random_ar(rng: &mut ChaCha8Rng, r: usize, max_norm: f64) -> DMatrix<f64> {
    let m = normal_matrix(rng, r, r);
    let norm = m.clone().singular_values().max();
    m * (rng.random_range(0.0..max_norm) / norm)
}

pub fn random_params(seed: u64, n: usize, r: usize, with_dynamics: bool) -> DfmParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loadings = normal_matrix(&mut rng, n, r);
    let idio = random_spd(&mut rng, n);
    let ar = if with_dynamics {
        random_ar(&mut rng, r, 0.95)
    } else {
        DMatrix::zeros(r, r)
    };
    DfmParameters::new(loadings, idio, ar).unwrap()
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn spd_inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("SPD").inverse()
}

/// `min eig(b − a) ≥ −tol`, i.e. `a ⪯ b`.
pub fn loewner_le(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (b - a).symmetric_eigenvalues().min() >= -tol
}

/// The error-covariance recursions written with `n×n` matrices exactly as
/// displayed for a filter that uses `working` in place of the true `Σ_ε`.
/// Returns the true and believed `P_t` for `t = 1..=steps`.
pub fn literal_recursions(
    params: &DfmParameters,
    working: &DMatrix<f64>,
    start: &DMatrix<f64>,
    steps: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let lambda = params.loadings();
    let phi = params.factor_ar();
    let q = params.state_noise_cov();
    let sigma = params.idio_cov();
    let mut p = start.clone();
    let mut p0 = start.clone();
    let mut truth = Vec::new();
    let mut believed = Vec::new();
    for _ in 0..steps {
        let pi = phi * &p * phi.transpose() + q;
        let pi0 = phi * &p0 * phi.transpose() + q;
        let m_inv = spd_inv(&(lambda * &pi0 * lambda.transpose() + working));
        let a = &pi0 * lambda.transpose() * &m_inv;
        let next = &pi + &a * (lambda * &pi * lambda.transpose() + sigma) * a.transpose()
            - &a * lambda * &pi
            - &pi * lambda.transpose() * a.transpose();
        let next0 = &pi0 - &a * lambda * &pi0;
        p = next;
        p0 = next0;
        truth.push(p.clone());
        believed.push(p0.clone());
    }
    (truth, believed)
}

pub fn diagonal_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&m.diagonal())
}
