use std::fs;
use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asynczo"))
}

#[test]
fn schedule_prints_step_and_radius() {
    let out = cli().args(["schedule", "--l0", "1", "--n-bar", "1", "--p-min", "1", "--horizon", "1000"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let alpha: f64 = text.lines().next().unwrap().trim_start_matches("alpha = ").parse().unwrap();
    assert!((alpha - 0.01).abs() < 1e-12);

    let out = cli().args(["schedule", "--l0", "0", "--n-bar", "1", "--p-min", "1", "--horizon", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_from_config_overrides_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        "[objective]\nkind = \"benchmark\"\n[run]\nestimators = [\"residual-async\", \"two-point-async\"]\ntrials = 2\nbudget_queries = 300\nalpha = 0.5\nmu = 0.1\n",
    )
    .unwrap();
    for (i, jobs) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let status = cli()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--jobs", jobs, "--record-every", "30", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let trace = fs::read_to_string(out.join("trace_residual-async_1.csv")).unwrap();
        assert_eq!(trace.lines().count(), 11);
    }
    for name in ["summary.csv", "report.txt", "trace_two-point-async_0.csv"] {
        assert_eq!(fs::read(dir.path().join("out0").join(name)).unwrap(), fs::read(dir.path().join("out1").join(name)).unwrap());
    }
    let report = fs::read_to_string(dir.path().join("out0/report.txt")).unwrap();
    assert!(report.contains("experiment.seed = 7"));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[objective]\nkind = \"benchmark\"\n[run]\nestimators = [\"residual-async\"]\nalpha = 0.5\nmu = 0.1\nstep = 3\n").unwrap();
    let out = cli().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn verify_exit_status_tracks_failures() {
    let out = cli().args(["verify", "smoothing"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    // Halving L1 must be detected.
    let out = cli().args(["verify", "smoothing", "--halve-l1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("status = FAIL"));
    assert!(text.contains("observed") && text.contains("bound") && text.contains("tolerance"));

    let out = cli().args(["verify", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
