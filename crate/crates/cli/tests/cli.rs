use std::path::Path;
use std::process::{Command, Output};

fn flowlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .args(args)
        .env_remove("FLOWLAB_SEED")
        .output()
        .unwrap()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_passes() {
    let out = flowlab(&["check"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.ends_with("ok")));
}

#[test]
fn compare_writes_the_report_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = flowlab(&[
        "compare", "--methods", "ode,sde,self_guided_sde", "--seeds", "2", "--particles", "400", "--out", path_arg(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,seed,t0,lambda,sliced_w2,masked_mse,runtime_ms");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("ode,0,0.6,0.2,"));
    assert!(rows.iter().all(|r| r.ends_with(",0")));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("self_guided_sde"));
}

#[test]
fn timing_flag_fills_runtime() {
    let out = flowlab(&["compare", "--methods", "ode", "--seeds", "1", "--particles", "200", "--timing"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    let runtime: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!(runtime > 0.0);
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_flowlab"));
        cmd.args(["compare", "--methods", "ode", "--seeds", "1", "--particles", "200"]).args(extra);
        cmd.env_remove("FLOWLAB_SEED");
        if let Some(v) = env {
            cmd.env("FLOWLAB_SEED", v);
        }
        let out = cmd.output().unwrap();
        String::from_utf8(out.stdout).unwrap().lines().nth(1).unwrap().to_string()
    };
    assert!(run(Some("7"), &[]).starts_with("ode,7,"));
    assert!(run(Some("7"), &["--seed", "3"]).starts_with("ode,3,"));
    assert!(run(None, &[]).starts_with("ode,0,"));
}

#[test]
fn schedule_json_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("s.json");
    let out = flowlab(&[
        "schedule", "--mode", "diagonal", "--views", "8", "--frames", "16", "--ntraj", "3", "--out", path_arg(&json),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["mode"], "diagonal");
    assert_eq!(v["n_traj"], 3);
    let trajectories = v["trajectories"].as_array().unwrap();
    assert_eq!(trajectories.len(), 3);
    assert!(trajectories.iter().all(|t| t.as_array().unwrap().len() == 16));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(flowlab(&["teleport"]).status.code(), Some(1));
    assert_eq!(flowlab(&["compare", "--bogus"]).status.code(), Some(1));
    assert_eq!(flowlab(&["compare", "--methods", "warp"]).status.code(), Some(1));
    assert_eq!(flowlab(&["schedule", "--views", "4", "--frames", "4", "--ntraj", "9"]).status.code(), Some(1));
    assert_eq!(flowlab(&["compare", "--t0", "1.5"]).status.code(), Some(1));
    assert_eq!(flowlab(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_report_lines() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[sampler]\nt0 = 0.6\nsteps = \"many\"\n").unwrap();
    let out = flowlab(&["compare", "--config", path_arg(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    std::fs::write(&bad, "[sampler]\ntemperature = 2.0\n").unwrap();
    let out = flowlab(&["compare", "--config", path_arg(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("temperature"), "{}", stderr(&out));

    let missing = dir.path().join("nope.toml");
    assert_eq!(flowlab(&["compare", "--config", path_arg(&missing)]).status.code(), Some(1));
}

#[test]
fn config_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[sampler]\nt0 = 0.8\nlambda = 0.5\n\n[experiment]\nmethods = [\"sde\"]\nseeds = 2\nseed = 4\nparticles = 200\n",
    )
    .unwrap();
    let out = flowlab(&["compare", "--config", path_arg(&cfg), "--lambda", "0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("sde,4,0.8,0.1,"), "{}", rows[0]);
    assert!(rows[1].starts_with("sde,5,0.8,0.1,"), "{}", rows[1]);
}

#[test]
fn sweep_emits_one_block_per_t0() {
    let out = flowlab(&["sweep", "--methods", "ode", "--seeds", "2", "--particles", "200", "--t0-values", "0.2,0.8"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let t0s: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(t0s, ["0.2", "0.2", "0.8", "0.8"]);
}

#[test]
fn restore_writes_samples_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let svg = dir.path().join("r.svg");
    let args = [
        "restore", "--method", "self_guided_sde", "--particles", "300", "--seed", "2", "--out", path_arg(&csv), "--svg",
        path_arg(&svg),
    ];
    let out = flowlab(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x0,x1");
    assert_eq!(text.lines().count(), 301);
    let first_svg = std::fs::read(&svg).unwrap();
    assert!(String::from_utf8_lossy(&first_svg).contains(">restored<"));
    flowlab(&args);
    assert_eq!(std::fs::read(&svg).unwrap(), first_svg);
}

#[test]
fn plotting_three_dimensional_samples_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[target]\nmeans = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]\n").unwrap();
    let svg = dir.path().join("r.svg");
    let out = flowlab(&[
        "restore", "--config", path_arg(&cfg), "--particles", "100", "--out", path_arg(&dir.path().join("r.csv")),
        "--svg", path_arg(&svg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dimension"), "{}", stderr(&out));
    assert!(!svg.exists());
}

#[test]
fn trained_field_round_trips_through_restore() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("f.flf");
    let out = flowlab(&["train", "--steps", "50", "--batch", "64", "--out", path_arg(&field)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bytes = std::fs::read(&field).unwrap();
    assert_eq!(&bytes[..4], b"FLF1");
    let out = flowlab(&[
        "restore", "--method", "sde", "--particles", "100", "--field", path_arg(&field), "--out",
        path_arg(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    std::fs::write(&field, b"nonsense").unwrap();
    let out = flowlab(&[
        "restore", "--particles", "100", "--field", path_arg(&field), "--out", path_arg(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
