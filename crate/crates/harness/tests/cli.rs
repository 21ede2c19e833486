use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_obftf");

fn obftf(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_train(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "train", "--preset", "regression-outliers", "--out-dir", out, "--epochs", "4", "--eval_every", "2",
        "--dataset.n_train", "300", "--dataset.n_test", "400",
    ];
    args.extend_from_slice(extra);
    obftf(&args)
}

#[test]
fn metrics_header_is_pinned() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_train(dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,step,train_mean_loss,test_mean_loss,test_accuracy,normalized_test_loss,selected_count,solver_objective,solver_status,forward_count,backward_count,wall_time_ms"
    );
    assert_eq!(lines.count(), 2);
    for f in ["config.resolved.json", "params.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.resolved.json")).unwrap()).unwrap();
    assert!(resolved["code_version"].as_str().unwrap().starts_with("obftf-harness"));
    assert_eq!(resolved["config"]["epochs"], 4);
    assert_eq!(resolved["train_data"]["outliers"].as_array().unwrap().len(), 20);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(a.path(), &["--seed", "5"])), 0);
    assert_eq!(code(&small_train(b.path(), &["--seed", "5"])), 0);
    for f in ["metrics.csv", "params.bin"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(c.path(), &["--seed", "6"])), 0);
    assert_ne!(std::fs::read(a.path().join("metrics.csv")).unwrap(), std::fs::read(c.path().join("metrics.csv")).unwrap());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_train(dir.path(), &["--batch_size", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch_size"));
    assert_eq!(code(&small_train(dir.path(), &["--no_such_field", "1"])), 2);
    assert_eq!(code(&obftf(&["train", "--preset", "nope"])), 2);
    assert_eq!(code(&obftf(&["frobnicate"])), 2);
    assert_eq!(code(&obftf(&["train", "--epochs"])), 2);
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = obftf(&[
        "train", "--preset", "mnist-desk", "--out-dir", dir.path().to_str().unwrap(), "--dataset.dir", "/nonexistent",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn solve_cli() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("losses.txt");
    std::fs::write(&f, "1\n2\n3\n4\n").unwrap();
    let o = obftf(&["solve", f.to_str().unwrap(), "--budget", "2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "indices,objective,status,nodes,time_us");
    assert!(lines.next().unwrap().starts_with("0;3,0,proven-optimal,"));

    let o = obftf(&["solve", f.to_str().unwrap(), "--budget", "2", "--solver", "brute"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("\n0;3,0,proven-optimal,"));

    assert_eq!(code(&obftf(&["solve", f.to_str().unwrap(), "--budget", "5"])), 2);
    std::fs::write(&f, "1\nx\n").unwrap();
    assert_eq!(code(&obftf(&["solve", f.to_str().unwrap(), "--budget", "1"])), 2);
    std::fs::write(&f, "0.5\n").unwrap();
    let o = obftf(&["solve", f.to_str().unwrap(), "--budget", "1"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("\n0,0,"));
    assert_eq!(code(&obftf(&["solve", "/nonexistent/losses", "--budget", "1"])), 3);
}

#[test]
fn sweep_writes_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let o = obftf(&[
        "sweep", "--preset", "regression-outliers", "--out-dir", dir.path().to_str().unwrap(),
        "--samplers", "uniform,obftf", "--rates", "0.1,0.25,0.5", "--seeds", "3", "--workers", "2",
        "--epochs", "2", "--dataset.n_train", "200", "--dataset.n_test", "200",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let mut lines = agg.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sampler,rate,runs,failed,test_mean_loss_mean,test_mean_loss_std,normalized_test_loss_mean,normalized_test_loss_std,test_accuracy_mean,test_accuracy_std,backward_count_mean"
    );
    assert_eq!(lines.count(), 6);
    let long = std::fs::read_to_string(dir.path().join("runs_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 19);
    assert!(dir.path().join("aggregate.dat").exists());
    assert!(dir.path().join("cells/obftf_r0.25_s2/metrics.csv").exists());
}

#[test]
fn sweep_with_failures_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = obftf(&[
        "sweep", "--preset", "regression-outliers", "--out-dir", dir.path().to_str().unwrap(),
        "--samplers", "uniform", "--rates", "0.5", "--seeds", "1", "--epochs", "40",
        "--lr", r#"{"kind":"constant","rate":10.0}"#, "--dataset.n_train", "200", "--dataset.n_test", "200",
    ]);
    assert_ne!(code(&o), 0);
    let failures = std::fs::read_to_string(dir.path().join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 2);
}

#[test]
fn gen_data_then_bilevel() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = obftf(&["gen-data", "--out-dir", d, "--n-train", "12", "--n-test", "100", "--noise-half-width", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let header = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert!(header.starts_with("x,y\n"));
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    let o = obftf(&["bilevel", "--train", train.to_str().unwrap(), "--test", test.to_str().unwrap(), "--k", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert!(row[1].parse::<f64>().unwrap() < 1e-12);
    assert_eq!(row[7], "495");
}

#[test]
fn bench_solver_cli() {
    let o = obftf(&["bench-solver", "--n", "24", "--budgets", "3,6", "--instances", "4"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("n,b,instance,exact_objective,exact_status,exact_nodes,exact_time_us,strided_objective,ratio\n"));
    assert_eq!(text.lines().count(), 5);
}
