//! Run configuration files.
//!
//! A config is a TOML document with explicit grids. The seed has no
//! default; every other key does.

use std::fmt;

use dfm_core::{BandSource, HeteroMode, Method, ScenarioConfig, SphericalVariance};
use serde::Deserialize;

pub const DEFAULT_T_LEN: usize = 100;
pub const DEFAULT_REPLICATIONS: usize = 1000;
pub const DEFAULT_BAND_N: usize = 150;
pub const DEFAULT_BAND_T_LEN: usize = 200;
pub const DEFAULT_BAND_WINDOW: (usize, usize) = (140, 160);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    /// Dotted key path, e.g. `bands.window`.
    pub field: Option<String>,
    /// One-based line in the config text.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.field, self.line) {
            (Some(field), Some(line)) => write!(f, "`{field}` (line {line}): {}", self.message),
            (Some(field), None) => write!(f, "`{field}`: {}", self.message),
            (None, Some(line)) => write!(f, "line {line}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    phi: Vec<f64>,
    sigma2_star: Vec<f64>,
    #[serde(default)]
    n: Vec<usize>,
    #[serde(default)]
    hetero: Option<RawHetero>,
    #[serde(default)]
    tau: f64,
    #[serde(default)]
    factors: Option<usize>,
    #[serde(default)]
    methods: Option<Vec<String>>,
    #[serde(default)]
    replications: Option<usize>,
    #[serde(default)]
    t_len: Option<usize>,
    #[serde(default)]
    kf_burn_in: Option<usize>,
    #[serde(default)]
    spherical_variance: Option<RawSpherical>,
    #[serde(default)]
    permute_idio: bool,
    #[serde(default)]
    level: Option<f64>,
    #[serde(default)]
    bands: Option<RawBands>,
    #[serde(default)]
    scaling: Option<RawScaling>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawHetero {
    Named(String),
    Range { lo: f64, hi: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSpherical {
    Named(String),
    Value(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBands {
    n: Option<usize>,
    t_len: Option<usize>,
    window: Option<[usize; 2]>,
    factor: Option<usize>,
    source: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScaling {
    n_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandSettings {
    pub n: usize,
    pub t_len: usize,
    pub window: (usize, usize),
    pub factor: usize,
    pub source: BandSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub phi: Vec<f64>,
    pub sigma2_star: Vec<f64>,
    pub n: Vec<usize>,
    pub hetero: HeteroMode,
    pub tau: f64,
    pub factors: usize,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub t_len: usize,
    pub kf_burn_in: usize,
    pub spherical: SphericalVariance,
    pub permute_idio: bool,
    pub level: f64,
    pub bands: BandSettings,
    pub scaling_grid: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| from_toml(text, &e))?;
        let err = |field: &str, message: String| ConfigError {
            field: Some(field.to_string()),
            line: locate(text, field),
            message,
        };

        nonempty(&raw.phi, "phi").map_err(|m| err("phi", m))?;
        nonempty(&raw.sigma2_star, "sigma2_star").map_err(|m| err("sigma2_star", m))?;
        strictly_increasing(&raw.n).map_err(|m| err("n", m))?;

        let hetero = match raw.hetero {
            None => HeteroMode::Unit,
            Some(RawHetero::Named(name)) => match name.as_str() {
                "unit" => HeteroMode::Unit,
                "uniform" => HeteroMode::STANDARD_UNIFORM,
                other => return Err(err("hetero", format!("unknown mode {other:?}, expected \"unit\" or \"uniform\""))),
            },
            Some(RawHetero::Range { lo, hi }) => HeteroMode::Uniform { lo, hi },
        };

        let methods = match raw.methods {
            None => Method::ALL.to_vec(),
            Some(names) => {
                if names.is_empty() {
                    return Err(err("methods", "must list at least one method".into()));
                }
                let mut out = Vec::with_capacity(names.len());
                for name in &names {
                    let m: Method = name.parse().map_err(|_| err("methods", format!("unknown method {name:?}")))?;
                    if out.contains(&m) {
                        return Err(err("methods", format!("{m} is listed twice")));
                    }
                    out.push(m);
                }
                out
            }
        };

        let spherical = match raw.spherical_variance {
            None => SphericalVariance::MeanDiagonal,
            Some(RawSpherical::Named(name)) => match name.as_str() {
                "mean-diagonal" => SphericalVariance::MeanDiagonal,
                "sigma2-star" => SphericalVariance::SigmaStar,
                other => {
                    return Err(err(
                        "spherical_variance",
                        format!("unknown choice {other:?}, expected \"mean-diagonal\", \"sigma2-star\" or a number"),
                    ))
                }
            },
            Some(RawSpherical::Value(v)) if v > 0.0 && v.is_finite() => SphericalVariance::Fixed(v),
            Some(RawSpherical::Value(v)) => return Err(err("spherical_variance", format!("{v} is not positive"))),
        };

        let level = raw.level.unwrap_or(dfm_core::montecarlo::DEFAULT_LEVEL);
        if !(level > 0.0 && level < 1.0) {
            return Err(err("level", format!("{level} is not in (0, 1)")));
        }

        let bands = {
            let b = raw.bands.as_ref();
            let n = b.and_then(|b| b.n).unwrap_or(DEFAULT_BAND_N);
            let t_len = b.and_then(|b| b.t_len).unwrap_or(DEFAULT_BAND_T_LEN);
            let window = b.and_then(|b| b.window).map(|[lo, hi]| (lo, hi)).unwrap_or(DEFAULT_BAND_WINDOW);
            if window.0 == 0 || window.0 > window.1 || window.1 > t_len {
                return Err(err(
                    "bands.window",
                    format!("[{}, {}] is not inside 1..={t_len}", window.0, window.1),
                ));
            }
            let source = match b.and_then(|b| b.source.as_deref()) {
                None | Some("true") => BandSource::True,
                Some("believed") => BandSource::Believed,
                Some(other) => {
                    return Err(err("bands.source", format!("unknown source {other:?}, expected \"true\" or \"believed\"")))
                }
            };
            BandSettings {
                n,
                t_len,
                window,
                factor: b.and_then(|b| b.factor).unwrap_or(0),
                source,
            }
        };

        let scaling_grid = match raw.scaling {
            None => None,
            Some(s) => {
                nonempty(&s.n_grid, "n_grid").map_err(|m| err("scaling.n_grid", m))?;
                strictly_increasing(&s.n_grid).map_err(|m| err("scaling.n_grid", m))?;
                Some(s.n_grid)
            }
        };

        let config = RunConfig {
            seed: raw.seed,
            phi: raw.phi,
            sigma2_star: raw.sigma2_star,
            n: raw.n,
            hetero,
            tau: raw.tau,
            factors: raw.factors.unwrap_or(1),
            methods,
            replications: raw.replications.unwrap_or(DEFAULT_REPLICATIONS),
            t_len: raw.t_len.unwrap_or(DEFAULT_T_LEN),
            kf_burn_in: raw.kf_burn_in.unwrap_or(dfm_core::montecarlo::DEFAULT_KF_BURN_IN),
            spherical,
            permute_idio: raw.permute_idio,
            level,
            bands,
            scaling_grid,
        };

        // Every grid point must describe a valid scenario.
        for &phi in &config.phi {
            for &s2 in &config.sigma2_star {
                let probe = config.scenario(phi, s2, config.n.first().copied().unwrap_or(config.factors));
                if let Err(dfm_core::DfmError::InvalidParameter { field, reason }) = probe.validate() {
                    return Err(err(field, reason));
                }
                let band = config.band_scenario(phi, s2);
                if let Err(dfm_core::DfmError::InvalidParameter { field, reason }) = band.validate() {
                    return Err(err(&format!("bands.{field}"), reason));
                }
                if config.bands.factor >= config.factors {
                    return Err(err("bands.factor", format!("must be below factors = {}", config.factors)));
                }
            }
        }
        Ok(config)
    }

    /// One cell of the grid. Every cell shares the master seed, so cells
    /// differing only in `n` see nested loadings.
    pub fn scenario(&self, phi: f64, sigma2_star: f64, n: usize) -> ScenarioConfig {
        ScenarioConfig {
            phi,
            hetero: self.hetero,
            tau: self.tau,
            sigma2_star,
            n,
            factors: self.factors,
            t_len: self.t_len,
            replications: self.replications,
            seed: self.seed,
            permute_idio: self.permute_idio,
        }
    }

    pub fn band_scenario(&self, phi: f64, sigma2_star: f64) -> ScenarioConfig {
        ScenarioConfig {
            t_len: self.bands.t_len,
            ..self.scenario(phi, sigma2_star, self.bands.n)
        }
    }
}

fn nonempty<T>(v: &[T], name: &str) -> Result<(), String> {
    if v.is_empty() {
        Err(format!("{name} grid is empty"))
    } else {
        Ok(())
    }
}

fn strictly_increasing(v: &[usize]) -> Result<(), String> {
    if v.windows(2).any(|w| w[0] >= w[1]) {
        Err("values must be strictly increasing".into())
    } else {
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn from_toml(text: &str, e: &toml::de::Error) -> ConfigError {
    let message = e.message().to_string();
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("missing field") || message.starts_with("unknown field"))
        .map(str::to_string);
    let line = e.span().map(|s| line_of(text, s.start));
    ConfigError { field, line, message }
}

/// Line of `key = ...` for a dotted path such as `bands.window`.
fn locate(text: &str, path: &str) -> Option<usize> {
    let (section, key) = match path.rsplit_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, path),
    };
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            continue;
        }
        let Some((lhs, _)) = trimmed.split_once('=') else { continue };
        if lhs.trim() == key && current.as_deref() == section {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 7\nphi = [0.0]\nsigma2_star = [1.0]\nn = [50]\n";

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.methods, Method::ALL.to_vec());
        assert_eq!(c.replications, 1000);
        assert_eq!(c.t_len, 100);
        assert_eq!(c.bands.window, (140, 160));
        assert_eq!(c.hetero, HeteroMode::Unit);
    }

    #[test]
    fn seed_is_required() {
        let e = RunConfig::parse("phi = [0.0]\nsigma2_star = [1.0]\n").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("seed"));
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let e = RunConfig::parse(&format!("{MINIMAL}rho = 3\n")).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("rho"));
        assert_eq!(e.line, Some(5));
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let e = RunConfig::parse(&format!("{MINIMAL}tau = 1.5\n")).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("tau"));
        assert_eq!(e.line, Some(5));
        let e = RunConfig::parse(&format!("{MINIMAL}[bands]\nwindow = [150, 140]\n")).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("bands.window"));
        assert_eq!(e.line, Some(6));
    }

    #[test]
    fn hetero_and_spherical_forms() {
        let c = RunConfig::parse(&format!("{MINIMAL}hetero = {{ lo = 1.0, hi = 2.0 }}\nspherical_variance = 0.7\n")).unwrap();
        assert_eq!(c.hetero, HeteroMode::Uniform { lo: 1.0, hi: 2.0 });
        assert_eq!(c.spherical, SphericalVariance::Fixed(0.7));
        let c = RunConfig::parse(&format!("{MINIMAL}hetero = \"uniform\"\nspherical_variance = \"sigma2-star\"\n")).unwrap();
        assert_eq!(c.hetero, HeteroMode::STANDARD_UNIFORM);
        assert_eq!(c.spherical, SphericalVariance::SigmaStar);
    }

    #[test]
    fn duplicate_methods_rejected() {
        let e = RunConfig::parse(&format!("{MINIMAL}methods = [\"fLP\", \"flp\"]\n")).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("methods"));
    }
}
