use std::path::Path;
use std::process::{Command, Output};

fn streamsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamsched"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run(dir: &Path, scheduler: &str) -> Output {
    streamsched(&[
        "run",
        "--scenario",
        "continuous-queries-small",
        "--scheduler",
        scheduler,
        "--seeds",
        "1,2",
        "--epochs",
        "4",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&streamsched(&["--help"])), 0);
    assert_eq!(code(&streamsched(&["--version"])), 0);
}

#[test]
fn run_report_compare() {
    let rr = tempfile::tempdir().unwrap();
    let random = tempfile::tempdir().unwrap();
    let out = run(rr.path(), "round-robin");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("round-robin on continuous-queries-small"));
    assert!(rr.path().join("episode_seed2.csv").exists());
    assert_eq!(code(&run(random.path(), "random")), 0);

    let out = streamsched(&["report", "--out", rr.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(rr.path().join("report_seed1.csv").exists());

    let out = streamsched(&[
        "compare",
        random.path().to_str().unwrap(),
        rr.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("improvement"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"scenario": "word-count", "scheduler": "dqn", "seeds": [3],
            "agent": {"epochs": 3, "pretrain_samples": 8, "pretrain_steps": 2, "batch_size": 4}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = streamsched(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("episode_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("checkpoint_seed3.json").exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&streamsched(&["run", "--scheduler", "t-storm", "--out", out])), 1);
    assert_eq!(code(&streamsched(&["run", "--scenario", "nowhere", "--out", out])), 1);
    assert_eq!(code(&streamsched(&["run", "--epochs", "many"])), 1);
    assert_eq!(code(&streamsched(&["frobnicate"])), 1);
    assert_eq!(
        code(&streamsched(&["run", "--config", dir.path().join("absent.json").to_str().unwrap()])),
        1
    );
}

#[test]
fn compare_mismatch_and_overload_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("overload.json");
    std::fs::write(
        &scenario,
        r#"{
  "name": "overload",
  "topology": {
    "components": [
      {"id": "src", "kind": "source", "executor_count": 1, "service_time_mean": 0.0},
      {"id": "slow", "kind": "processing_unit", "executor_count": 1, "service_time_mean": 0.01}
    ],
    "edges": [{"from": "src", "to": "slow", "grouping": "shuffle"}],
    "source_rates": {"src": 1000.0}
  },
  "cluster": {"machine_count": 2, "slots_per_machine": 4, "intra_machine_delay": 0.0,
              "inter_machine_delay": 0.001, "machine_capacity": 1.0},
  "sim": {"seed": 0, "warmup_duration": 0.5, "measure_duration": 1.0, "measurement_samples": 1,
          "sample_interval": 1.0, "service_time_distribution": "exponential",
          "arrival_process": "poisson", "queue_cap": 50}
}"#,
    )
    .unwrap();
    let out = streamsched(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let small = dir.path().join("small");
    let words = dir.path().join("words");
    assert_eq!(code(&run(&small, "round-robin")), 0);
    let out = streamsched(&[
        "run",
        "--scenario",
        "word-count",
        "--epochs",
        "2",
        "--out",
        words.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let out = streamsched(&["compare", small.to_str().unwrap(), words.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}
