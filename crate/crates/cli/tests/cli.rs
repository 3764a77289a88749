use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use wdlab_cli::config::parse_config;
use wdlab_cli::csv_io::read_trajectory_file;

fn wdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdlab"))
        .args(args)
        .output()
        .expect("spawn wdlab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn sgd_config(lambda: f64, mode: &str, steps: usize) -> String {
    format!(
        "[schedule]\ngamma_max = 0.1\n\n[optimizer]\nlambda = {lambda}\ndecay_mode = \"{mode}\"\n\n[[layers]]\ndim = 32\n\n[[layers]]\ndim = 8\nsigma = 2.0\ninitial_scale = 0.5\n\n[run]\nsteps = {steps}\nseed = 5\n"
    )
}

fn adam_cosine(mode: &str) -> String {
    format!(
        "[schedule]\nkind = \"cosine\"\ngamma_max = 0.01\n\n[optimizer]\nmethod = \"adam\"\nlambda = 0.1\nbeta1 = 0.9\nbeta2 = 0.999\ndecay_mode = \"{mode}\"\n\n[[layers]]\ndim = 256\n\n[run]\nsteps = 20000\nseed = 4\n"
    )
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn summary_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("missing {key}"))
        .to_string()
}

#[test]
fn validate_minimal_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m.toml", &sgd_config(1e-4, "coupled", 50));
    let out = wdlab(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 run(s)"));
}

#[test]
fn validate_rejects_momentum_one_with_line() {
    let dir = TempDir::new().unwrap();
    let text = sgd_config(1e-4, "coupled", 50)
        .replace("lambda = 0.0001", "lambda = 0.0001\nmomentum = 1.0");
    let cfg = write_config(dir.path(), "bad.toml", &text);
    let out = wdlab(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:6:"), "{err}");
    assert!(err.contains("momentum"), "{err}");
}

#[test]
fn single_run_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m.toml", &sgd_config(1e-3, "coupled", 200));
    let out_dir = dir.path().join("out");
    let out = wdlab(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        files_in(&out_dir),
        vec!["run_000.csv", "run_000.summary.txt"]
    );

    // the file reproduces an in-process run exactly
    let planned = parse_config(&cfg).unwrap();
    let expected = wdlab::sim::run(&planned[0].config).unwrap().trajectory;
    assert_eq!(
        read_trajectory_file(&out_dir.join("run_000.csv")).unwrap(),
        expected
    );

    let summary = fs::read_to_string(out_dir.join("run_000.summary.txt")).unwrap();
    assert_eq!(summary_value(&summary, "layers"), "2");
    assert_eq!(summary_value(&summary, "steps"), "200");
    assert!(summary.lines().all(|l| l.contains('=')));
}

#[test]
fn sweep_runs_in_parallel() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{}\n[sweep]\ngamma_max = [0.05, 0.1]\nlambda = [1e-4, 1e-3]\n",
        sgd_config(1e-4, "coupled", 100)
    );
    let cfg = write_config(dir.path(), "s.toml", &text);
    let out_dir = dir.path().join("out");
    let out = wdlab(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "3",
    ]);
    assert_eq!(code(&out), 0);
    let names = files_in(&out_dir);
    assert_eq!(names.len(), 8);
    let s3 = fs::read_to_string(out_dir.join("run_003.summary.txt")).unwrap();
    assert_eq!(summary_value(&s3, "sweep.gamma_max"), "0.1");
    assert_eq!(summary_value(&s3, "sweep.lambda"), "0.001");
}

#[test]
fn zero_decay_warns_but_succeeds() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "z.toml", &sgd_config(0.0, "coupled", 300));
    let out_dir = dir.path().join("out");
    let out = wdlab(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let summary = fs::read_to_string(out_dir.join("run_000.summary.txt")).unwrap();
    assert_eq!(summary_value(&summary, "warning"), "true");
    assert_eq!(summary_value(&summary, "layer.0.converged"), "false");
    assert!(summary.contains("lambda is zero"));
    let traj = read_trajectory_file(&out_dir.join("run_000.csv")).unwrap();
    let norms = traj.series(0, |r| r.weight_norm);
    assert!(norms.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn unwritable_out_dir_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m.toml", &sgd_config(1e-3, "coupled", 50));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out_dir = blocker.join("out");
    let out = wdlab(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot create output directory"));
}

#[test]
fn aborted_run_exits_two_without_partial_files() {
    let dir = TempDir::new().unwrap();
    let text = "[schedule]\ngamma_max = 0.1\n\n[optimizer]\nlambda = 3.0\ndecay_mode = \"uncoupled\"\n\n[[layers]]\ndim = 4\n\n[run]\nsteps = 2000\nseed = 0\n";
    let cfg = write_config(dir.path(), "nan.toml", text);
    let out_dir = dir.path().join("out");
    let out = wdlab(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("aborted at step"));
    assert!(files_in(&out_dir).is_empty());
}

#[test]
fn config_error_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "u.toml",
        &sgd_config(1e-3, "coupled", 50).replace("seed = 5", "seed = 5\nthreads = 2"),
    );
    let out = wdlab(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("u.toml:"));
    let missing = wdlab(&["validate", dir.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(code(&missing), 1);
    let usage = wdlab(&["frobnicate"]);
    assert_eq!(code(&usage), 1);
}

fn run_to(dir: &Path, name: &str, text: &str) -> PathBuf {
    let cfg = write_config(dir, &format!("{name}.toml"), text);
    let out_dir = dir.join(name);
    let out = wdlab(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    out_dir.join("run_000.csv")
}

#[test]
fn compare_identical_has_zero_deltas() {
    let dir = TempDir::new().unwrap();
    let csv = run_to(dir.path(), "a", &sgd_config(1e-3, "coupled", 200));
    let report = dir.path().join("report.txt");
    let out = wdlab(&[
        "compare",
        csv.to_str().unwrap(),
        csv.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&report).unwrap();
    for line in text
        .lines()
        .filter(|l| l.contains(".delta=") || l.contains(".max_dev="))
    {
        assert!(line.ends_with("=0"), "{line}");
    }
    assert!(text.contains("layer.1.weight_norm_ordering=equal"));
}

#[test]
fn compare_rejects_truncated_and_mismatched() {
    let dir = TempDir::new().unwrap();
    let a = run_to(dir.path(), "a", &sgd_config(1e-3, "coupled", 200));
    let b = run_to(dir.path(), "b", &sgd_config(1e-3, "coupled", 100));
    let text = fs::read_to_string(&a).unwrap();
    let truncated = dir.path().join("t.csv");
    fs::write(&truncated, &text[..text.len() - 40]).unwrap();
    let report = dir.path().join("r.txt");
    for other in [&truncated, &b] {
        let out = wdlab(&[
            "compare",
            a.to_str().unwrap(),
            other.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 1);
        assert!(!report.exists());
    }
}

#[test]
fn compare_flags_adamw_below_adamc() {
    let dir = TempDir::new().unwrap();
    let w = run_to(dir.path(), "adamw", &adam_cosine("coupled"));
    let c = run_to(dir.path(), "adamc", &adam_cosine("corrected"));
    let report = dir.path().join("r.txt");
    let out = wdlab(&[
        "compare",
        w.to_str().unwrap(),
        c.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(summary_value(&text, "layer.0.weight_norm_ordering"), "less");
    assert!(
        summary_value(&text, "layer.0.final_weight_norm.delta")
            .parse::<f64>()
            .unwrap()
            > 0.0
    );
}

#[test]
fn adam_constant_summary_has_infnorm_probe() {
    let dir = TempDir::new().unwrap();
    let text = adam_cosine("coupled")
        .replace("kind = \"cosine\"\n", "")
        .replace("steps = 20000", "steps = 500");
    let csv = run_to(dir.path(), "p", &text);
    let summary = fs::read_to_string(csv.with_file_name("run_000.summary.txt")).unwrap();
    assert!(
        summary_value(&summary, "layer.0.infnorm_probe")
            .parse::<f64>()
            .unwrap()
            > 0.0
    );
}
