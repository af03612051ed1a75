use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dfm_core::{
    band_series, run_experiment, scaling_study, BandRequest, ExperimentOptions, ExperimentResult, Method,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{git_blob_hash, sha256_hex, OutputRecord, RunManifest, TOOL_VERSION};

pub const MSE_TABLE_HEADER: [&str; 12] = [
    "sigma2_star", "N", "row_kind", "OLS", "WLS", "GLS", "sLP", "dLP", "fLP", "sKF", "dKF", "fKF",
];
pub const BAND_HEADER: [&str; 5] = ["t", "truth", "estimate", "lower", "upper"];
pub const SCALING_HEADER: [&str; 6] = ["phi", "sigma2_star", "row_kind", "N", "item", "value"];

/// Column order of the MSE tables.
pub const TABLE_ORDER: [Method; 9] = [
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    MseTable,
    Bands,
    Scaling,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::MseTable => "mse-table",
            Command::Bands => "bands",
            Command::Scaling => "scaling",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [Command::MseTable, Command::Bands, Command::Scaling]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `Some(1)` also switches the experiments to their
    /// serial code path.
    pub threads: Option<usize>,
}

/// Runs `command` on the config text and writes its outputs and manifest
/// into `out_dir`.
pub fn run_text(
    command: Command,
    config_text: &str,
    config_path: &str,
    out_dir: &Path,
    options: RunOptions,
) -> Result<RunManifest, CliError> {
    let config = RunConfig::parse(config_text)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = options.threads {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| CliError::Threads(e.to_string()))?;
    let parallel = options.threads != Some(1);
    let files = pool.install(|| match command {
        Command::MseTable => mse_table(&config, parallel),
        Command::Bands => bands(&config),
        Command::Scaling => scaling(&config),
    })?;

    let mut outputs = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out_dir.join(&name);
        fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
        outputs.push(OutputRecord {
            path: name,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        command: command.name().to_string(),
        config_path: config_path.to_string(),
        config_hash: git_blob_hash(config_text.as_bytes()),
        config: config_text.to_string(),
        seed: config.seed,
        outputs,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

pub fn run(command: Command, config_path: &Path, out_dir: &Path, options: RunOptions) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(config_path).map_err(|e| CliError::io(config_path, e))?;
    run_text(command, &text, &config_path.display().to_string(), out_dir, options)
}

/// Regenerates a manifest's outputs into `out_dir` and checks every byte.
pub fn replay(manifest_path: &Path, out_dir: &Path, options: RunOptions) -> Result<RunManifest, CliError> {
    let original = RunManifest::read(manifest_path)?;
    let command: Command = original.command.parse().map_err(|reason| CliError::Manifest {
        path: manifest_path.to_path_buf(),
        reason,
    })?;
    let fresh = run_text(command, &original.config, &original.config_path, out_dir, options)?;
    for record in &original.outputs {
        let same = fresh.outputs.iter().any(|o| o.path == record.path && o.sha256 == record.sha256);
        if !same {
            return Err(CliError::ReplayMismatch {
                output: record.path.clone(),
            });
        }
    }
    if fresh.outputs.len() != original.outputs.len() {
        return Err(CliError::ReplayMismatch {
            output: "<output set>".into(),
        });
    }
    Ok(fresh)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn table_row(sigma2: f64, n: usize, kind: &str, values: impl Fn(Method) -> Option<f64>, fmt: fn(f64) -> String) -> Vec<String> {
    let mut row = vec![sigma2.to_string(), n.to_string(), kind.to_string()];
    row.extend(TABLE_ORDER.iter().map(|&m| values(m).map(fmt).unwrap_or_default()));
    row
}

fn three_dp(v: f64) -> String {
    format!("{v:.3}")
}

fn full(v: f64) -> String {
    v.to_string()
}

type Outputs = Vec<(String, Vec<u8>)>;

fn mse_table(config: &RunConfig, parallel: bool) -> Result<Outputs, CliError> {
    if config.n.is_empty() {
        return Err(crate::config::ConfigError {
            field: Some("n".into()),
            line: None,
            message: "mse-table needs a non-empty n grid".into(),
        }
        .into());
    }
    let options = ExperimentOptions {
        methods: config.methods.clone(),
        kf_burn_in: config.kf_burn_in,
        spherical: config.spherical,
        level: config.level,
        parallel,
        ..ExperimentOptions::default()
    };
    let mut out = Vec::new();
    for &phi in &config.phi {
        let mut results: Vec<ExperimentResult> = Vec::new();
        for &s2 in &config.sigma2_star {
            for &n in &config.n {
                results.push(run_experiment(&config.scenario(phi, s2, n), &options)?);
            }
        }
        for (suffix, fmt) in [("csv", three_dp as fn(f64) -> String), ("raw.csv", full)] {
            let mut rows = Vec::new();
            for res in &results {
                let (s2, n) = (res.scenario.sigma2_star, res.scenario.n);
                rows.push(table_row(s2, n, "A", |m| res.theoretical_scalar(m), fmt));
                rows.push(table_row(s2, n, "E", |m| res.empirical_scalar(m), fmt));
            }
            out.push((format!("mse_table_phi{phi}.{suffix}"), csv_bytes(&MSE_TABLE_HEADER, &rows)));
        }
    }
    Ok(out)
}

fn bands(config: &RunConfig) -> Result<Outputs, CliError> {
    let request = BandRequest {
        methods: config.methods.clone(),
        factor: config.bands.factor,
        window: config.bands.window,
        level: config.level,
        band_source: config.bands.source,
        spherical: config.spherical,
    };
    let mut out = Vec::new();
    for &phi in &config.phi {
        for &s2 in &config.sigma2_star {
            for series in band_series(&config.band_scenario(phi, s2), &request)? {
                let rows: Vec<Vec<String>> = series
                    .points
                    .iter()
                    .map(|p| vec![p.t.to_string(), full(p.truth), full(p.estimate), full(p.lower), full(p.upper)])
                    .collect();
                out.push((
                    format!("bands_{}_phi{phi}_sigma2-{s2}.csv", series.method),
                    csv_bytes(&BAND_HEADER, &rows),
                ));
            }
        }
    }
    Ok(out)
}

fn scaling(config: &RunConfig) -> Result<Outputs, CliError> {
    let grid = config.scaling_grid.as_ref().ok_or_else(|| crate::config::ConfigError {
        field: Some("scaling.n_grid".into()),
        line: None,
        message: "scaling needs a [scaling] section with n_grid".into(),
    })?;
    let mut rows = Vec::new();
    for &phi in &config.phi {
        for &s2 in &config.sigma2_star {
            let recipe = config.scenario(phi, s2, grid[0]);
            let study = scaling_study(&recipe, grid, &config.methods, config.spherical)?;
            let lead = |kind: &str, n: String, item: String, value: String| {
                vec![phi.to_string(), s2.to_string(), kind.to_string(), n, item, value]
            };
            for m in TABLE_ORDER {
                if let Some(values) = study.scaled_mse.get(&m) {
                    for (&n, &v) in grid.iter().zip(values) {
                        rows.push(lead("scaled_mse", n.to_string(), m.to_string(), full(v)));
                    }
                }
            }
            for (pair, values) in &study.gaps {
                for (&n, &v) in grid.iter().zip(values) {
                    rows.push(lead("gap", n.to_string(), pair.to_string(), full(v)));
                }
            }
            for (pair, slope) in &study.slopes {
                rows.push(lead("slope", String::new(), pair.to_string(), slope.map(full).unwrap_or_default()));
            }
        }
    }
    Ok(vec![("scaling.csv".into(), csv_bytes(&SCALING_HEADER, &rows))])
}
