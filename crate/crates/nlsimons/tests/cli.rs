use std::path::Path;
use std::process::{Command, Output};

fn nlsimons(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlsimons"))
        .args(args)
        .env_remove("NLSIMONS_OUTPUT_ROOT")
        .current_dir(root)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn run_dir(root: &Path, prefix: &str) -> std::path::PathBuf {
    let entries: Vec<_> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries[0].clone()
}

#[test]
fn plane_verify_passes_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlsimons(&["verify", "--surface", "plane", "--kernel", "mollifier:0.3", "--ij", "all"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS simons")).count(), 4, "{stdout}");
    let run = run_dir(&dir.path().join("runs"), "verify-");
    for f in ["config.resolved", "report.json", "tables/residuals.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["command"], "verify");
    let hash = report["config_hash"].as_str().unwrap();
    assert!(run.file_name().unwrap().to_string_lossy().ends_with(&hash[..12]));
    let csv = std::fs::read_to_string(run.join("tables/residuals.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let residual: f64 = line.split(',').nth(8).unwrap().parse().unwrap();
        assert_eq!(residual, 0.0, "{line}");
    }
}

#[test]
fn moments_table_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlsimons(&["moments", "--n", "2..6", "--samples", "20000", "--output-root", "out"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}{}", text(&out.stdout), text(&out.stderr));
    let run = run_dir(&dir.path().join("out"), "moments-");
    let csv = std::fs::read_to_string(run.join("tables/moments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,Q,D,sphere_moment,varpi"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    // n = 3: Q = 4π/35 and ϖ = π.
    let r3: Vec<f64> = rows[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((r3[1] - 4.0 * std::f64::consts::PI / 35.0).abs() < 1e-15);
    assert!((r3[4] - std::f64::consts::PI).abs() < 1e-15);
}

#[test]
fn failed_check_exits_one() {
    // A sloped bump is not integrated exactly on the plane's polar rule, so
    // the exact-zero plane criterion reports FAIL.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("div.toml");
    std::fs::write(
        &cfg,
        "command = \"divergence-check\"\n[surface]\nspec = \"plane\"\n[divergence]\nlevels = [5, 6]\nslope = [0.5, -0.3, 0.2]\n",
    )
    .unwrap();
    let out = nlsimons(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}{}", text(&out.stdout), text(&out.stderr));
    assert!(text(&out.stdout).contains("FAIL divergence j=1"));
    let report = std::fs::read_to_string(run_dir(&dir.path().join("runs"), "divergence-check-").join("report.json"))
        .unwrap();
    assert!(report.contains("\"pass\": false"));
}

#[test]
fn config_errors_exit_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "command = \"verify\"\n[verify]\nlevels = [5, \"six\"]\n").unwrap();
    let out = nlsimons(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("verify.levels"), "{}", text(&out.stderr));

    let out = nlsimons(&["verify", "--kernel", "cauchy:1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("kernel.spec"), "{}", text(&out.stderr));

    let out = nlsimons(&["moments", "--surface", "sphere"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--surface"));

    let out = nlsimons(&["limit-study", "--surface", "sphere", "--point", "neck"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("surface.point"));

    let out = nlsimons(&["verify", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn capability_errors_exit_two() {
    // The Simons residual needs a compactly supported smooth kernel.
    let dir = tempfile::tempdir().unwrap();
    let out = nlsimons(&["verify", "--kernel", "fractional:0.5,1", "--levels", "4"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("compactly supported"), "{}", text(&out.stderr));
}

#[test]
fn output_root_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["stability-check", "--samples", "1", "--workers", "1"];
    let out = Command::new(env!("CARGO_BIN_EXE_nlsimons"))
        .args(args)
        .env("NLSIMONS_OUTPUT_ROOT", dir.path().join("env"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    run_dir(&dir.path().join("env"), "stability-check-");

    let mut with_flag = args.to_vec();
    with_flag.extend(["--output-root", "flag"]);
    let out = Command::new(env!("CARGO_BIN_EXE_nlsimons"))
        .args(&with_flag)
        .env("NLSIMONS_OUTPUT_ROOT", dir.path().join("env"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    // Same config, so the same directory name under a different root.
    assert_eq!(
        run_dir(&dir.path().join("flag"), "stability-check-").file_name(),
        run_dir(&dir.path().join("env"), "stability-check-").file_name()
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "levelset-verify",
        "--function",
        "sigmoid-sphere:1,8",
        "--ij",
        "1,1",
        "--grids",
        "16,32",
        "--steepness",
        "8",
    ];
    let mut reports = Vec::new();
    for (root, workers) in [("a", "1"), ("b", "3")] {
        let mut a = args.to_vec();
        a.extend(["--output-root", root, "--workers", workers]);
        let cfg = dir.path().join("small.toml");
        std::fs::write(
            &cfg,
            "command = \"levelset-verify\"\n[levelset]\ncoarea_bumps = 1\nsharp_grid = 32\nsharp_sphere_nodes = 48\n",
        )
        .unwrap();
        a.extend(["--config", cfg.to_str().unwrap()]);
        let out = nlsimons(&a, dir.path());
        assert!(out.status.code().is_some_and(|c| c < 2), "{}", text(&out.stderr));
        let run = run_dir(&dir.path().join(root), "levelset-verify-");
        reports.push((
            std::fs::read(run.join("report.json")).unwrap(),
            std::fs::read(run.join("config.resolved")).unwrap(),
            std::fs::read(run.join("tables/sharp_interface.csv")).unwrap(),
        ));
    }
    assert!(reports[0] == reports[1]);
}
