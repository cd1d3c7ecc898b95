use std::path::Path;
use std::process::{Command, Output};

fn bifluid(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bifluid"));
    cmd.args(args).env_remove("BIFLUID_THREADS");
    if let Some(t) = threads {
        cmd.env("BIFLUID_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

const TINY: &str = r#"
[model]
gamma_plus = 1.5
gamma_minus = 3.0
nu = 0.05
k = 10.0

[grid]
n = 16

[time]
t_final = 0.01
dt = 2e-3
output_every = 0.01

[run]
mode = "both"
snapshots = false
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_and_rejects() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write(tmp.path(), "good.toml", TINY);
    let out = bifluid(&["validate", &good], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));

    let bad = write(tmp.path(), "bad.toml", &TINY.replace("gamma_plus = 1.5", "gamma_plus = 0.9"));
    let out = bifluid(&["validate", &bad], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma_plus"));

    let unknown = write(tmp.path(), "unknown.toml", &format!("{TINY}\n[extra]\nx = 1\n"));
    assert_eq!(bifluid(&["validate", &unknown], None).status.code(), Some(2));
}

#[test]
fn oracle_prints_closed_forms() {
    let out = bifluid(&["oracle", "closure"], None);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("gamma,R,Q,Z"));
    let golden = text.lines().nth(1).unwrap();
    let z: f64 = golden.rsplit(',').next().unwrap().parse().unwrap();
    assert!((z - 2.618_033_988_749_895).abs() < 1e-12, "{golden}");
    let two = bifluid(&["oracle", "twomarker"], None);
    assert!(two.status.success());
    assert_eq!(String::from_utf8_lossy(&two.stdout).lines().count(), 3);
}

#[test]
fn run_and_sweep_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tiny.toml", TINY);
    let run_dir = tmp.path().join("run");
    let out = bifluid(&["run", &cfg, "-o", run_dir.to_str().unwrap()], Some("2"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["diagnostics.csv", "equivalence.csv", "run_manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let sweep_dir = tmp.path().join("sweep");
    let out = bifluid(
        &["sweep", &cfg, "--axis", "k", "--values", "2,4", "-o", sweep_dir.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sweep_dir.join("sweep_summary.csv").exists());
    assert!(sweep_dir.join("k_4").join("diagnostics.csv").exists());
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tiny.toml", TINY);
    assert_eq!(bifluid(&["validate", &cfg], Some("0")).status.code(), Some(2));
    assert_eq!(bifluid(&["validate", &cfg], Some("many")).status.code(), Some(2));
    assert_eq!(
        bifluid(&["sweep", &cfg, "--axis", "colour", "--values", "1"], None).status.code(),
        Some(2)
    );

    let stiff = write(
        tmp.path(),
        "stiff.toml",
        &format!("{TINY}\n[picard]\nmax_iter = 1\npic_tol = 1e-30\n"),
    );
    let dir = tmp.path().join("stiff");
    let out = bifluid(&["run", &stiff, "-o", dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    let manifest = std::fs::read_to_string(dir.join("run_manifest.json")).unwrap();
    assert!(manifest.contains("FAILED"));
}
