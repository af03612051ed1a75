use std::fs;
use std::path::Path;
use std::process::Command as Process;

use dfm_cli::commands::{BAND_HEADER, MSE_TABLE_HEADER, SCALING_HEADER};
use dfm_cli::{replay, run_text, CliError, Command, RunOptions};

const GRID_3X3: &str = "\
seed = 11
phi = [0.0]
sigma2_star = [0.5, 1.0, 2.0]
n = [50, 150, 500]
replications = 4
t_len = 5
";

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn mse_table_golden_layout() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run_text(Command::MseTable, GRID_3X3, "grid.toml", dir.path(), RunOptions::default()).unwrap();
    let names: Vec<&str> = manifest.outputs.iter().map(|o| o.path.as_str()).collect();
    assert_eq!(names, ["mse_table_phi0.csv", "mse_table_phi0.raw.csv"]);
    for name in names {
        let path = dir.path().join(name);
        assert_eq!(header(&path), MSE_TABLE_HEADER);
        let rows = read_rows(&path);
        assert_eq!(rows.len(), 18);
        let keys: Vec<(String, String, String)> =
            rows.iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
        let mut want = Vec::new();
        for s in ["0.5", "1", "2"] {
            for n in ["50", "150", "500"] {
                for kind in ["A", "E"] {
                    want.push((s.to_string(), n.to_string(), kind.to_string()));
                }
            }
        }
        assert_eq!(keys, want);
    }
    let human = read_rows(&dir.path().join("mse_table_phi0.csv"));
    let raw = read_rows(&dir.path().join("mse_table_phi0.raw.csv"));
    for (h, r) in human.iter().zip(&raw) {
        for (hv, rv) in h[3..].iter().zip(&r[3..]) {
            assert_eq!(hv.split('.').nth(1).unwrap().len(), 3);
            assert_eq!(hv, &format!("{:.3}", rv.parse::<f64>().unwrap()));
        }
    }
}

#[test]
fn unrequested_methods_leave_blank_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 3\nphi = [0.0]\nsigma2_star = [1.0]\nn = [20]\nreplications = 3\nt_len = 4\nmethods = [\"fLP\", \"OLS\"]\n";
    run_text(Command::MseTable, cfg, "x", dir.path(), RunOptions::default()).unwrap();
    let rows = read_rows(&dir.path().join("mse_table_phi0.raw.csv"));
    for row in rows {
        let filled: Vec<bool> = row[3..].iter().map(|v| !v.is_empty()).collect();
        assert_eq!(filled, [true, false, false, false, false, true, false, false, false]);
    }
}

#[test]
fn empty_methods_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 3\nphi = [0.0]\nsigma2_star = [1.0]\nn = [20]\nmethods = []\n";
    match run_text(Command::MseTable, cfg, "x", dir.path(), RunOptions::default()) {
        Err(CliError::Config(e)) => {
            assert_eq!(e.field.as_deref(), Some("methods"));
            assert_eq!(e.line, Some(5));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_text(Command::MseTable, GRID_3X3, "grid.toml", a.path(), RunOptions::default()).unwrap();
    run_text(Command::MseTable, GRID_3X3, "grid.toml", b.path(), RunOptions::default()).unwrap();
    for name in ["mse_table_phi0.raw.csv", "mse_table_phi0.csv", "manifest-mse-table.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

const BANDS: &str = "\
seed = 5
phi = [0.7, 0.97]
sigma2_star = [1.0]
hetero = \"uniform\"
tau = 0.5
methods = [\"fLP\", \"fKF\", \"sLP\"]

[bands]
n = 150
t_len = 200
window = [140, 160]
";

fn half_widths(path: &Path) -> Vec<f64> {
    read_rows(path)
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
            assert!(v[3] <= v[2] && v[2] <= v[4]);
            0.5 * (v[4] - v[3])
        })
        .collect()
}

#[test]
fn band_files_have_window_rows_and_expected_widths() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run_text(Command::Bands, BANDS, "b.toml", dir.path(), RunOptions::default()).unwrap();
    assert_eq!(manifest.outputs.len(), 6);
    for o in &manifest.outputs {
        let path = dir.path().join(&o.path);
        assert_eq!(header(&path), BAND_HEADER);
        let rows = read_rows(&path);
        assert_eq!(rows.len(), 21);
        let ts: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
        assert_eq!(ts, (140..=160).collect::<Vec<_>>());
    }
    let flp = half_widths(&dir.path().join("bands_fLP_phi0.97_sigma2-1.csv"));
    assert!(flp.iter().all(|w| (w - flp[0]).abs() < 1e-12 * flp[0]));
    let fkf = half_widths(&dir.path().join("bands_fKF_phi0.97_sigma2-1.csv"));
    assert!(fkf[0] / flp[0] < 0.9, "{} vs {}", fkf[0], flp[0]);
}

#[test]
fn scaling_layout_and_bounded_scaled_mse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 8\nphi = [0.0]\nsigma2_star = [1.0]\nhetero = \"uniform\"\n\n[scaling]\nn_grid = [50, 150, 500]\n";
    run_text(Command::Scaling, cfg, "s.toml", dir.path(), RunOptions::default()).unwrap();
    let path = dir.path().join("scaling.csv");
    assert_eq!(header(&path), SCALING_HEADER);
    let rows = read_rows(&path);
    let scaled: Vec<&Vec<String>> = rows.iter().filter(|r| r[2] == "scaled_mse").collect();
    assert_eq!(scaled.len(), 9 * 3);
    let gaps = rows.iter().filter(|r| r[2] == "gap").count();
    let slopes = rows.iter().filter(|r| r[2] == "slope").count();
    assert_eq!(gaps, 6 * 3);
    assert_eq!(slopes, 6);
    for chunk in scaled.chunks(3) {
        let v: Vec<f64> = chunk.iter().map(|r| r[5].parse().unwrap()).collect();
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi / lo < 1.5, "{}: {v:?}", chunk[0][4]);
    }
}

#[test]
fn spherical_truth_gaps_do_not_depend_on_the_assumed_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 8\nphi = [0.0]\nsigma2_star = [1.0]\nhetero = \"unit\"\ntau = 0.0\n\n[scaling]\nn_grid = [50, 150, 500]\n";
    run_text(Command::Scaling, cfg, "s.toml", dir.path(), RunOptions::default()).unwrap();
    let rows = read_rows(&dir.path().join("scaling.csv"));
    for n in ["50", "150", "500"] {
        let gaps: Vec<f64> = rows
            .iter()
            .filter(|r| r[2] == "gap" && r[3] == n)
            .map(|r| r[5].parse().unwrap())
            .collect();
        assert_eq!(gaps.len(), 6);
        assert!(gaps.iter().all(|g| (g - gaps[0]).abs() <= 1e-9 * gaps[0]), "{gaps:?}");
    }
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 3\nphi = [0.0]\nsigma2_star = [1.0]\nn = [20]\nreplications = 3\nt_len = 4\n";
    run_text(Command::MseTable, cfg, "x", dir.path(), RunOptions::default()).unwrap();
    let manifest_path = dir.path().join("manifest-mse-table.json");
    let again = tempfile::tempdir().unwrap();
    replay(&manifest_path, again.path(), RunOptions { threads: Some(1) }).unwrap();

    let text = fs::read_to_string(&manifest_path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["outputs"][1]["sha256"] = serde_json::json!("00");
    fs::write(&manifest_path, v.to_string()).unwrap();
    let err = replay(&manifest_path, again.path(), RunOptions::default()).unwrap_err();
    assert!(matches!(err, CliError::ReplayMismatch { .. }), "{err}");

    v["config"] = serde_json::json!(cfg.replace("seed = 3", "seed = 4"));
    fs::write(&manifest_path, v.to_string()).unwrap();
    let err = replay(&manifest_path, again.path(), RunOptions::default()).unwrap_err();
    assert!(matches!(err, CliError::Manifest { .. }), "{err}");
}

#[test]
fn binary_reports_errors_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 3\nphi = [0.0]\nsigma2_star = [1.0]\nn = [20]\nwidth = 4\n").unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_dfm"))
        .args(["mse-table", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let line = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"], "config");
    assert_eq!(v["field"], "width");
    assert_eq!(v["line"], 5);
}

#[test]
fn binary_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.toml");
    fs::write(&cfg, "seed = 3\nphi = [0.0]\nsigma2_star = [1.0]\n\n[bands]\nn = 30\nt_len = 12\nwindow = [3, 7]\n").unwrap();
    let out_dir = dir.path().join("out");
    let status = Process::new(env!("CARGO_BIN_EXE_dfm"))
        .args(["--threads", "2", "bands", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let listed = String::from_utf8(status.stdout).unwrap();
    assert_eq!(listed.lines().count(), 9);
    assert!(out_dir.join("manifest-bands.json").exists());
    assert_eq!(read_rows(&out_dir.join("bands_sKF_phi0_sigma2-1.csv")).len(), 5);
}
