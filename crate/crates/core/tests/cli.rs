//! The command-line binary: exit codes, artifacts and their headers.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affine_path::params::{from_toml_str, load};
use affine_path::reduction::Frames;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_affine-path"));
    cmd.env_clear();
    cmd
}

fn params(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("params").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn validate_reports_and_exits() {
    let out = run(bin().args(["validate", "--params"]).arg(params("heston.toml")));
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("admissible"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    // negative diffusion on the nonnegative coordinate
    std::fs::write(&bad, "[dim]\nm = 1\nn = 0\n[diffusion]\nalpha = [[[-0.2]]]\n").unwrap();
    let out = run(bin().args(["validate", "--params"]).arg(&bad));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn syntax_error_is_a_config_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[dim]\nm = 1\nn = = 0\n").unwrap();
    let out = run(bin().args(["validate", "--params"]).arg(&bad));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn bad_flags_are_config_errors() {
    let out = run(bin().args(["simulate", "--params"]).arg(params("cir.toml")).args(["--x0", "1,2"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().args(["simulate", "--params"]).arg(params("cir.toml")).args(["--x0", "-1"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().args(["simulate", "--x0", "1"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reduce_writes_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["reduce", "--params"]).arg(params("reducible.toml")).arg("--out").arg(dir.path()));
    assert_eq!(out.status.code(), Some(0));
    let reduced = load(&dir.path().join("reduced.toml")).unwrap();
    assert_eq!(reduced.dim.m(), 2);
    let frames_src = std::fs::read_to_string(dir.path().join("frames.toml")).unwrap();
    assert!(frames_src.starts_with("# affine-path"));
    let frames = Frames::from_toml_str(&frames_src).unwrap();
    assert!(frames.auxiliary);
    assert_eq!(frames.matrix, vec![vec![-0.4]]);

    // killing is outside the reducible class
    let killed = dir.path().join("killed.toml");
    let src = std::fs::read_to_string(params("cir.toml")).unwrap();
    std::fs::write(&killed, format!("{src}\n[killing]\nc = 0.1\n")).unwrap();
    let out = run(bin().args(["reduce", "--params"]).arg(&killed).arg("--out").arg(dir.path()));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn riccati_table_has_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let u0 = dir.path().join("u0.txt");
    std::fs::write(&u0, "# two vectors\n-1 0\n-0.5 2\n").unwrap();
    let out = run(bin()
        .args(["riccati", "--params"])
        .arg(params("cir.toml"))
        .arg("--u0")
        .arg(&u0)
        .args(["--T", "1", "--intervals", "4", "--out"])
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    assert!(text.starts_with("# affine-path"));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "u_index,t,re_phi,im_phi,re_psi1,im_psi1");
    assert_eq!(rows.len(), 1 + 2 * 5);
    let last: Vec<f64> = rows[5].split(',').map(|v| v.parse().unwrap()).collect();
    // u = -1, b = -0.5, s2 = 0.2: ψ = u e^{bt} / (1 - u s2 (e^{bt} - 1) / (2b))
    let e = (-0.5f64).exp();
    let psi = -e / (1.0 + 0.2 * (e - 1.0) / (2.0 * -0.5));
    assert_eq!(last[1], 1.0);
    assert!((last[4] - psi).abs() < 1e-8);
    let mantissa = rows[5].split(',').nth(4).unwrap().split('e').next().unwrap();
    assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17);
}

#[test]
fn simulate_writes_headed_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["simulate", "--params"])
        .arg(params("heston.toml"))
        .args(["--x0", "1,0", "--T", "0.5", "--samples", "3", "--seed", "5", "--intervals", "16", "--out"])
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        let text = std::fs::read_to_string(dir.path().join(format!("path_{i:05}.csv"))).unwrap();
        assert!(text.contains("# seed = 5"));
        assert!(text.contains(&format!("# sample = {i}")));
        let header_toml: String = text
            .lines()
            .filter_map(|l| l.strip_prefix("#   ").or_else(|| (l == "#").then_some("")))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(from_toml_str(&header_toml).unwrap(), load(&params("heston.toml")).unwrap());
        let rows = data_lines(&text);
        assert_eq!(rows[0], "t,paste,x1,x2,tau1");
        assert!(rows.len() >= 18);
    }
    assert!(!dir.path().join("frames.toml").exists());
}

#[test]
fn reduced_output_carries_its_frame() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["simulate", "--params"])
        .arg(params("reducible.toml"))
        .args(["--x0", "0.5,0.2", "--T", "0.25", "--out"])
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("frames.toml").exists());
    let text = std::fs::read_to_string(dir.path().join("path_00000.csv")).unwrap();
    assert_eq!(data_lines(&text)[0], "t,paste,x1,x2,x3,tau1,tau2");

    let inv = dir.path().join("inv");
    let out = run(bin()
        .args(["simulate", "--params"])
        .arg(params("reducible.toml"))
        .args(["--x0", "0.5,0.2", "--T", "0.25", "--invert-frames", "--out"])
        .arg(&inv));
    assert_eq!(out.status.code(), Some(0));
    assert!(!inv.join("frames.toml").exists());
    let text = std::fs::read_to_string(inv.join("path_00000.csv")).unwrap();
    assert_eq!(data_lines(&text)[0], "t,paste,x1,x2,tau1");
}

#[test]
fn flags_override_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let base = |out: &Path| {
        let mut cmd = bin();
        cmd.env("AFFINE_PARAMS", params("cir.toml"))
            .env("AFFINE_X0", "1")
            .env("AFFINE_SEED", "3")
            .env("AFFINE_INTERVALS", "8")
            .env("AFFINE_OUT", out)
            .arg("simulate");
        cmd
    };
    assert_eq!(run(&mut base(&a)).status.code(), Some(0));
    assert_eq!(run(base(&b).args(["--seed", "4"])).status.code(), Some(0));
    let ta = std::fs::read_to_string(a.join("path_00000.csv")).unwrap();
    let tb = std::fs::read_to_string(b.join("path_00000.csv")).unwrap();
    assert!(ta.contains("# seed = 3") && ta.contains("# intervals = 8"));
    assert!(tb.contains("# seed = 4"));
    assert_ne!(data_lines(&ta), data_lines(&tb));
}

#[test]
fn verify_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["verify", "--params"])
        .arg(params("jump_cir.toml"))
        .args(["--x0", "1", "--samples", "2000", "--seed", "1", "--moments", "--out"])
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(text.starts_with("# affine-path"));
    assert!(text.contains("PASS"));
}

#[test]
fn verify_rejects_times_beyond_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["verify", "--params"])
        .arg(params("cir.toml"))
        .args(["--x0", "1", "--samples", "100", "--times", "0.5,2", "--T", "1", "--out"])
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("verify.csv").exists());
}
