use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use slowfast::manifest::RunManifest;
use slowfast::report::{read_csv, read_json, SCHEMA_VERSION};

const VON_MISES: &str = r#"
[model]
preset = "von_mises"
n = 1
epsilon = 0.1

[grid]
m = 64
nodes = 32
"#;

fn slowfast(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env_remove("SLOWFAST_THREADS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn equilibrium_writes_density_and_residual_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = slowfast(dir.path(), VON_MISES, &["equilibrium", "--restarts", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");

    let (meta, table) = read_csv(&out.join("equilibrium.csv")).unwrap();
    assert_eq!(table.header, ["theta", "G", "H"]);
    assert_eq!(table.rows.len(), 64);
    assert!(meta.contains(&("manifest".into(), "manifest-equilibrium.json".into())));
    // G = e^{-cos θ}/Z
    let z: f64 = table.rows.iter().map(|r| (-r[0].cos()).exp()).sum::<f64>() * std::f64::consts::TAU / 64.0;
    for r in &table.rows {
        assert!((r[1] - (-r[0].cos()).exp() / z).abs() < 1e-8, "{r:?}");
    }

    let rep = read_json::<serde_json::Value>(&out.join("equilibrium.json")).unwrap();
    assert_eq!(rep.schema_version, SCHEMA_VERSION);
    assert_eq!(rep.kind, "equilibrium");
    let residual = rep.data["state"]["residual"].as_f64().unwrap();
    assert!(residual < 1e-8, "residual {residual}");
}

#[test]
fn manifest_lists_outputs_and_matches_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = slowfast(dir.path(), VON_MISES, &["coeffs"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let m = RunManifest::read(&out, "coeffs").unwrap();
    assert_eq!(m.command, "coeffs");
    assert_eq!(m.tool, "slowfast");
    assert!(m.outputs.contains(&"coeffs.json".to_string()));
    assert!(m.outputs.contains(&"coeffs_fields.csv".to_string()));
    for f in &m.outputs {
        assert!(out.join(f).exists(), "{f} listed but missing");
    }
    let rep = read_json::<serde_json::Value>(&out.join("coeffs.json")).unwrap();
    assert_eq!(rep.config_hash, m.config_hash);
    assert_eq!(m.config_hash.len(), 64);
}

#[test]
fn same_config_gives_same_hash_across_formatting() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let reformatted = VON_MISES.replace("m = 64", "m=64   # same").replace("n = 1\n", "n = 1\n\n");
    assert_eq!(slowfast(a.path(), VON_MISES, &["ops"]).status.code(), Some(0));
    assert_eq!(slowfast(b.path(), &reformatted, &["ops"]).status.code(), Some(0));
    let ha = RunManifest::read(&a.path().join("out"), "ops").unwrap().config_hash;
    let hb = RunManifest::read(&b.path().join("out"), "ops").unwrap().config_hash;
    assert_eq!(ha, hb);
}

#[test]
fn negative_gamma_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = VON_MISES.replace("epsilon = 0.1\n", "epsilon = 0.1\ngamma = -1.0\n");
    let o = slowfast(dir.path(), &cfg, &["equilibrium"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("model.gamma"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = slowfast(dir.path(), &format!("{VON_MISES}typo = 3\n"), &["ops"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.typo"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .args(["--config", dir.path().join("nope.toml").to_str().unwrap(), "ops"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn bad_usage_exits_with_config_code() {
    let o = Command::new(env!("CARGO_BIN_EXE_slowfast")).arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_comes_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, VON_MISES).unwrap();
    let run = |env: Option<&str>, flag: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_slowfast"));
        c.arg("-c").arg(&cfg).arg("-o").arg(dir.path().join(out));
        if let Some(f) = flag {
            c.args(["--threads", f]);
        }
        c.arg("ops");
        match env {
            Some(v) => c.env("SLOWFAST_THREADS", v),
            None => c.env_remove("SLOWFAST_THREADS"),
        };
        c.output().unwrap()
    };
    let o = run(Some("3"), None, "env");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(RunManifest::read(&dir.path().join("env"), "ops").unwrap().threads, 3);

    let o = run(Some("3"), Some("2"), "flag");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(RunManifest::read(&dir.path().join("flag"), "ops").unwrap().threads, 2);

    let o = run(Some("lots"), None, "bad");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SLOWFAST_THREADS"));
}

#[test]
fn rate_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{VON_MISES}\n[rate.path]\nslices = 11\n");
    let o = slowfast(dir.path(), &cfg, &["rate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let text = fs::read_to_string(out.join("rate.json")).unwrap();
    let rep = slowfast::report::from_json_str::<serde_json::Value>(&text).unwrap();
    assert_eq!(rep.kind, "rate_functionals");
    let again = slowfast::report::to_json_string(&rep).unwrap();
    let back = slowfast::report::from_json_str::<serde_json::Value>(&again).unwrap();
    assert_eq!(back, rep);
    let (_, slices) = read_csv(&out.join("rate_slices.csv")).unwrap();
    assert_eq!(slices.rows.len(), 11);
}

#[test]
fn verify_all_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = slowfast(dir.path(), "", &["verify-all", "--only", "1,2,3,4,5,6"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", stderr(&o));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 6, "{stdout}");
    let rep = read_json::<serde_json::Value>(&dir.path().join("out").join("acceptance.json")).unwrap();
    assert_eq!(rep.kind, "acceptance");
}
