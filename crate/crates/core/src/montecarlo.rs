//! Seeded Monte Carlo experiments: empirical against theoretical MSEs,
//! band coverage, and `N`-scaling of the equivalence gaps.
//!
//! Loadings and `Σ_ε` are drawn once per experiment from the scenario seed.
//! Replication `b` draws factors and noise from its own child stream, so
//! results do not depend on execution order. Per-replication statistics are
//! collected by index and reduced sequentially, which makes serial and
//! parallel runs agree bit for bit.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{DfmError, Result};
use crate::estimators::{CovarianceSpec, FactorExtractor, Family, Method};
use crate::model::{simulate, DfmParameters, ScenarioConfig};
use crate::mse::{gaps_from, theoretical_mse, EquivalencePair, MseReport};
use crate::rng::RngStream;

pub const DEFAULT_KF_BURN_IN: usize = 20;
pub const DEFAULT_LEVEL: f64 = 0.95;
/// A filter MSE within this relative distance of its limit counts as settled.
const TRANSIENT_TOL: f64 = 1e-12;

/// Child of the scenario stream that feeds the replications.
pub const STREAM_REPLICATIONS: u64 = 3;
/// Child of the scenario stream that feeds a single band path.
pub const STREAM_BAND_PATH: u64 = 4;

/// Variance the spherical estimators assume.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SphericalVariance {
    /// Mean of `diag(Σ_ε)`.
    #[default]
    MeanDiagonal,
    /// The scenario's `σ²*`.
    SigmaStar,
    Fixed(f64),
}

impl SphericalVariance {
    pub fn resolve(&self, config: &ScenarioConfig, params: &DfmParameters) -> f64 {
        match *self {
            SphericalVariance::MeanDiagonal => params.mean_idio_variance(),
            SphericalVariance::SigmaStar => config.sigma2_star,
            SphericalVariance::Fixed(v) => v,
        }
    }
}

/// Which MSE the confidence bands are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandSource {
    #[default]
    True,
    Believed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub methods: Vec<Method>,
    /// Periods dropped from the start of every Kalman-filter path, capped
    /// at the length of the filter's transient.
    pub kf_burn_in: usize,
    pub spherical: SphericalVariance,
    pub level: f64,
    pub band_source: BandSource,
    pub parallel: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            methods: Method::ALL.to_vec(),
            kf_burn_in: DEFAULT_KF_BURN_IN,
            spherical: SphericalVariance::default(),
            level: DEFAULT_LEVEL,
            band_source: BandSource::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scenario: ScenarioConfig,
    pub spherical_variance: f64,
    pub theoretical: BTreeMap<Method, DMatrix<f64>>,
    pub believed: BTreeMap<Method, DMatrix<f64>>,
    pub empirical: BTreeMap<Method, DMatrix<f64>>,
    pub mc_std_error: BTreeMap<Method, f64>,
    pub coverage: BTreeMap<Method, f64>,
}

impl ExperimentResult {
    /// Trace of the theoretical MSE (the scalar MSE when `r = 1`).
    pub fn theoretical_scalar(&self, method: Method) -> Option<f64> {
        self.theoretical.get(&method).map(|m| m.trace())
    }

    pub fn empirical_scalar(&self, method: Method) -> Option<f64> {
        self.empirical.get(&method).map(|m| m.trace())
    }
}

/// `Φ⁻¹((1 + level)/2)`.
pub fn band_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(DfmError::invalid("level", format!("{level} is not in (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 * (1.0 + level)))
}

/// Periods dropped from the error average: the configured burn-in for
/// Kalman filters, capped at the length of the filter's transient.
fn first_period(method: Method, report: &MseReport, burn_in: usize, t_len: usize) -> usize {
    if method.family() != Family::KalmanFilter || burn_in >= t_len {
        return 0;
    }
    let settled = |series: &Option<Vec<DMatrix<f64>>>, limit: &DMatrix<f64>| -> usize {
        let scale = limit.norm().max(1.0);
        series
            .as_ref()
            .and_then(|s| s.iter().position(|p| (p - limit).norm() <= TRANSIENT_TOL * scale))
            .unwrap_or(burn_in)
    };
    let transient = settled(&report.time_series, &report.true_mse)
        .max(settled(&report.believed_series, &report.believed_mse));
    burn_in.min(transient)
}

struct Replication {
    /// Per method: `Σ_t e_t e_t′ / count`.
    mse: Vec<DMatrix<f64>>,
    /// Per method: number of `(t, k)` inside the band.
    covered: Vec<usize>,
}

pub fn run_experiment(config: &ScenarioConfig, options: &ExperimentOptions) -> Result<ExperimentResult> {
    run_experiment_inner(config, options).map_err(|e| e.in_scenario(config.describe()))
}

fn run_experiment_inner(config: &ScenarioConfig, options: &ExperimentOptions) -> Result<ExperimentResult> {
    config.validate()?;
    if options.methods.is_empty() {
        return Err(DfmError::invalid("methods", "no methods requested"));
    }
    let z = band_quantile(options.level)?;
    let master = RngStream::new(config.seed);
    let params = config.build_parameters(master)?;
    let sigma2 = options.spherical.resolve(config, &params);
    let methods = &options.methods;
    let r = params.r();

    let mut reports = Vec::with_capacity(methods.len());
    let mut extractors = Vec::with_capacity(methods.len());
    for &method in methods {
        reports.push(theoretical_mse(&params, method, Some(sigma2))?);
        extractors.push(FactorExtractor::new(
            &params,
            method,
            CovarianceSpec::for_mode(method.mode(), Some(sigma2)),
        )?);
    }
    let starts: Vec<usize> = methods
        .iter()
        .zip(&reports)
        .map(|(&m, rep)| first_period(m, rep, options.kf_burn_in, config.t_len))
        .collect();
    let half_widths: Vec<Vec<f64>> = reports
        .iter()
        .map(|rep| {
            let m = match options.band_source {
                BandSource::True => &rep.true_mse,
                BandSource::Believed => &rep.believed_mse,
            };
            (0..r).map(|k| z * m[(k, k)].max(0.0).sqrt()).collect()
        })
        .collect();

    let replications = master.child(STREAM_REPLICATIONS);
    let one = |b: usize| -> Result<Replication> {
        let (panel, factors) = simulate(&params, config.t_len, replications.child(b as u64))?;
        let mut mse = Vec::with_capacity(methods.len());
        let mut covered = Vec::with_capacity(methods.len());
        for (i, extractor) in extractors.iter().enumerate() {
            let estimate = extractor.extract(&panel)?;
            let start = starts[i];
            let err = estimate.values.columns(start, config.t_len - start) - factors.values().columns(start, config.t_len - start);
            let count = err.ncols() as f64;
            mse.push(&err * err.transpose() / count);
            covered.push(
                err.column_iter()
                    .map(|e| (0..r).filter(|&k| e[k].abs() <= half_widths[i][k]).count())
                    .sum(),
            );
        }
        Ok(Replication { mse, covered })
    };
    let reps: Vec<Result<Replication>> = if options.parallel {
        (0..config.replications).into_par_iter().map(one).collect()
    } else {
        (0..config.replications).map(one).collect()
    };
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;

    let b = config.replications as f64;
    let mut result = ExperimentResult {
        scenario: config.clone(),
        spherical_variance: sigma2,
        theoretical: BTreeMap::new(),
        believed: BTreeMap::new(),
        empirical: BTreeMap::new(),
        mc_std_error: BTreeMap::new(),
        coverage: BTreeMap::new(),
    };
    for (i, (&method, report)) in methods.iter().zip(&reports).enumerate() {
        let mut total = DMatrix::zeros(r, r);
        let mut covered = 0usize;
        for rep in &reps {
            total += &rep.mse[i];
            covered += rep.covered[i];
        }
        let mean = total / b;
        let traces: Vec<f64> = reps.iter().map(|rep| rep.mse[i].trace()).collect();
        let centre = mean.trace();
        let std_error = if reps.len() > 1 {
            let var = traces.iter().map(|x| (x - centre).powi(2)).sum::<f64>() / (b - 1.0);
            (var / b).sqrt()
        } else {
            f64::NAN
        };
        let draws = (config.t_len - starts[i]) * r * reps.len();
        result.theoretical.insert(method, report.true_mse.clone());
        result.believed.insert(method, report.believed_mse.clone());
        result.empirical.insert(method, mean);
        result.mc_std_error.insert(method, std_error);
        result.coverage.insert(method, covered as f64 / draws as f64);
    }
    Ok(result)
}

/// Fraction of `(t, b)` draws with `F_t` inside `f_t ± z·√MSE`.
pub fn coverage_check(
    config: &ScenarioConfig,
    method: Method,
    level: f64,
    band_source: BandSource,
    spherical: SphericalVariance,
) -> Result<f64> {
    let options = ExperimentOptions {
        methods: vec![method],
        level,
        band_source,
        spherical,
        ..ExperimentOptions::default()
    };
    Ok(run_experiment(config, &options)?.coverage[&method])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    /// One-based period index.
    pub t: usize,
    pub truth: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandSeries {
    pub method: Method,
    pub factor: usize,
    pub points: Vec<BandPoint>,
}

/// MSE used for a band at period `t` (one-based): the Kalman transient
/// when available, the time-invariant MSE otherwise.
fn band_mse(report: &MseReport, source: BandSource, t: usize) -> &DMatrix<f64> {
    let (series, fixed) = match source {
        BandSource::True => (&report.time_series, &report.true_mse),
        BandSource::Believed => (&report.believed_series, &report.believed_mse),
    };
    series
        .as_ref()
        .and_then(|s| s.get(t - 1))
        .unwrap_or(fixed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandRequest {
    pub methods: Vec<Method>,
    pub factor: usize,
    /// Inclusive one-based period window.
    pub window: (usize, usize),
    pub level: f64,
    pub band_source: BandSource,
    pub spherical: SphericalVariance,
}

/// Bands around one simulated path of the scenario (its `t_len` periods).
pub fn band_series(config: &ScenarioConfig, request: &BandRequest) -> Result<Vec<BandSeries>> {
    band_series_inner(config, request).map_err(|e| e.in_scenario(config.describe()))
}

fn band_series_inner(config: &ScenarioConfig, request: &BandRequest) -> Result<Vec<BandSeries>> {
    config.validate()?;
    let (lo, hi) = request.window;
    if lo == 0 || lo > hi || hi > config.t_len {
        return Err(DfmError::invalid(
            "window",
            format!("[{lo}, {hi}] is not inside 1..={}", config.t_len),
        ));
    }
    if request.factor >= config.factors {
        return Err(DfmError::invalid("factor", format!("{} ≥ r = {}", request.factor, config.factors)));
    }
    let z = band_quantile(request.level)?;
    let master = RngStream::new(config.seed);
    let params = config.build_parameters(master)?;
    let sigma2 = request.spherical.resolve(config, &params);
    let (panel, factors) = simulate(&params, config.t_len, master.child(STREAM_BAND_PATH))?;
    let k = request.factor;
    request
        .methods
        .iter()
        .map(|&method| {
            let report = theoretical_mse(&params, method, Some(sigma2))?;
            let estimate = FactorExtractor::new(&params, method, CovarianceSpec::for_mode(method.mode(), Some(sigma2)))?
                .extract(&panel)?;
            let points = (lo..=hi)
                .map(|t| {
                    let half = z * band_mse(&report, request.band_source, t)[(k, k)].max(0.0).sqrt();
                    let f = estimate.values[(k, t - 1)];
                    BandPoint {
                        t,
                        truth: factors.values()[(k, t - 1)],
                        estimate: f,
                        lower: f - half,
                        upper: f + half,
                    }
                })
                .collect();
            Ok(BandSeries {
                method,
                factor: k,
                points,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingStudy {
    pub n_grid: Vec<usize>,
    /// `N · trace(MSE)` per method, aligned with `n_grid`.
    pub scaled_mse: BTreeMap<Method, Vec<f64>>,
    /// `N · ‖MSE_A − MSE_B‖_F` per pair, aligned with `n_grid`.
    pub gaps: BTreeMap<EquivalencePair, Vec<f64>>,
    /// Least-squares slope of `ln gap` on `ln N`; `None` when a gap is zero.
    pub slopes: BTreeMap<EquivalencePair, Option<f64>>,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Theoretical MSEs of `methods` and the gaps of every pair they cover,
/// recomputed for each cross-section size with the recipe's seed.
pub fn scaling_study(
    recipe: &ScenarioConfig,
    n_grid: &[usize],
    methods: &[Method],
    spherical: SphericalVariance,
) -> Result<ScalingStudy> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DfmError::invalid("n_grid", "must be non-empty and strictly increasing"));
    }
    let mut needed: Vec<Method> = methods.to_vec();
    needed.sort();
    needed.dedup();

    let per_n: Vec<Result<BTreeMap<Method, DMatrix<f64>>>> = n_grid
        .par_iter()
        .map(|&n| {
            let config = ScenarioConfig { n, ..recipe.clone() };
            let compute = || -> Result<_> {
                config.validate()?;
                let params = config.build_parameters(RngStream::new(config.seed))?;
                let sigma2 = spherical.resolve(&config, &params);
                needed
                    .iter()
                    .map(|&m| Ok((m, theoretical_mse(&params, m, Some(sigma2))?.true_mse)))
                    .collect()
            };
            compute().map_err(|e| e.in_scenario(config.describe()))
        })
        .collect();
    let per_n = per_n.into_iter().collect::<Result<Vec<_>>>()?;

    let mut scaled_mse: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    let mut gaps: BTreeMap<EquivalencePair, Vec<f64>> = BTreeMap::new();
    for (mses, &n) in per_n.iter().zip(n_grid) {
        for (&m, mse) in mses {
            scaled_mse.entry(m).or_default().push(n as f64 * mse.trace());
        }
        for (pair, gap) in gaps_from(mses, n) {
            gaps.entry(pair).or_default().push(gap);
        }
    }
    let log_n: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let slopes = gaps
        .iter()
        .map(|(&pair, g)| {
            let slope = if n_grid.len() > 1 && g.iter().all(|&v| v > 0.0) {
                let log_g: Vec<f64> = g.iter().map(|v| v.ln()).collect();
                Some(ols_slope(&log_n, &log_g))
            } else {
                None
            };
            (pair, slope)
        })
        .collect();
    Ok(ScalingStudy {
        n_grid: n_grid.to_vec(),
        scaled_mse,
        gaps,
        slopes,
    })
}
