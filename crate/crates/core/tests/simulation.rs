use dfm_core::{
    extract_ls, simulate, CovarianceSpec, DfmParameters, HeteroMode, Panel, RngStream, ScenarioConfig,
};
use dfm_core::model::{simulate_factors, simulate_panel};
use nalgebra::{DMatrix, DVector};

fn scalar_ar(phi: f64, n: usize, idio: DMatrix<f64>) -> DfmParameters {
    let lambda = DMatrix::from_fn(n, 1, |i, _| 0.3 + 0.05 * i as f64);
    DfmParameters::new(lambda, idio, DMatrix::from_element(1, 1, phi)).unwrap()
}

#[test]
fn white_noise_panel_second_moments() {
    let n = 4;
    let params = scalar_ar(0.0, n, DMatrix::identity(n, n));
    let t_len = 200_000;
    let (panel, _) = simulate(&params, t_len, RngStream::new(8)).unwrap();
    let y = panel.observations();
    let sample = y * y.transpose() / t_len as f64;
    let lambda = params.loadings();
    let target = lambda * lambda.transpose() + DMatrix::identity(n, n);
    // Entries are O(1) with variance ≈ 2/T, so 0.02 is about 6 standard errors.
    assert!((&sample - &target).amax() < 0.02, "{sample}");
}

#[test]
fn factor_autocorrelation_and_unit_variance() {
    let params = scalar_ar(0.7, 2, DMatrix::identity(2, 2));
    let t_len = 100_000;
    let f = simulate_factors(&params, t_len, RngStream::new(3)).unwrap();
    let x = f.values().row(0);
    let var = x.iter().map(|v| v * v).sum::<f64>() / t_len as f64;
    let lag1 = (1..t_len).map(|t| x[t] * x[t - 1]).sum::<f64>() / (t_len - 1) as f64;
    assert!((lag1 / var - 0.7).abs() < 0.01, "rho {}", lag1 / var);
    // Long-run variance of the sample variance of an AR(1) with unit
    // variance: 2(1 + φ²)/(1 − φ²)/T.
    let se = (2.0 * (1.0 + 0.49) / 0.51 / t_len as f64).sqrt();
    assert!((var - 1.0).abs() < 3.0 * se, "var {var}, se {se}");
}

#[test]
fn neighbouring_idiosyncratic_correlation() {
    let mut cfg = ScenarioConfig::new(0.0, HeteroMode::STANDARD_UNIFORM, 0.5, 1.0, 12, 4);
    cfg.t_len = 20_000;
    let params = cfg.build_parameters(RngStream::new(cfg.seed)).unwrap();
    let (panel, factors) = simulate(&params, cfg.t_len, RngStream::new(77)).unwrap();
    let resid = panel.observations() - params.loadings() * factors.values();
    for i in 0..11 {
        let a = resid.row(i);
        let b = resid.row(i + 1);
        let corr = a.dot(&b) / (a.dot(&a) * b.dot(&b)).sqrt();
        assert!((corr - 0.5).abs() < 0.03, "pair {i}: {corr}");
    }
}

#[test]
fn ls_estimators_are_unbiased_given_factors() {
    let mut cfg = ScenarioConfig::new(0.7, HeteroMode::STANDARD_UNIFORM, 0.5, 1.0, 30, 12);
    cfg.t_len = 5;
    let params = cfg.build_parameters(RngStream::new(cfg.seed)).unwrap();
    let factors = simulate_factors(&params, cfg.t_len, RngStream::new(1)).unwrap();
    let b = 2000;
    let specs = [CovarianceSpec::Full, CovarianceSpec::Diagonal, CovarianceSpec::Spherical { variance: None }];
    let mut sums = vec![DMatrix::<f64>::zeros(1, cfg.t_len); 3];
    let mut squares = vec![DMatrix::<f64>::zeros(1, cfg.t_len); 3];
    let noise = RngStream::new(2);
    for rep in 0..b {
        let panel: Panel = simulate_panel(&params, &factors, noise.child(rep)).unwrap();
        for (k, spec) in specs.iter().enumerate() {
            let est = extract_ls(&panel, &params, *spec).unwrap();
            sums[k] += &est.values;
            squares[k] += est.values.map(|v| v * v);
        }
    }
    for k in 0..3 {
        for t in 0..cfg.t_len {
            let mean = sums[k][(0, t)] / b as f64;
            let var = squares[k][(0, t)] / b as f64 - mean * mean;
            let se = (var / b as f64).sqrt();
            let truth = factors.values()[(0, t)];
            assert!((mean - truth).abs() < 3.0 * se, "spec {k}, t {t}: {mean} vs {truth} (se {se})");
        }
    }
}

#[test]
fn nested_scenarios_share_prefix_draws() {
    let small = ScenarioConfig::new(0.0, HeteroMode::STANDARD_UNIFORM, 0.5, 1.0, 50, 9);
    let large = ScenarioConfig { n: 150, ..small.clone() };
    let a = small.build_parameters(RngStream::new(9)).unwrap();
    let b = large.build_parameters(RngStream::new(9)).unwrap();
    assert_eq!(a.loadings(), &b.loadings().rows(0, 50).into_owned());
    let da: DVector<f64> = a.idio_variances();
    let db: DVector<f64> = b.idio_variances();
    assert_eq!(da, db.rows(0, 50).into_owned());
}
