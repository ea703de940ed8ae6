use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn por(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_por")).args(args).output().expect("spawn por")
}

fn ok(args: &[&str]) -> String {
    let o = por(args);
    assert!(
        o.status.success(),
        "por {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--set",
    "steps.value_guide=60",
    "--set",
    "steps.execute=40",
    "--set",
    "steps.log_every=20",
    "--set",
    "steps.batch_size=32",
];

fn gen(dir: &Path, name: &str, n: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    ok(&["gen-data", "--env", "fourroom-a", "--n", n, "--seed", "1", "--out", p(&out)]);
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", p(data), "--config", "fourroom", "--out", p(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a.pord", "2000");
    let b = gen(dir.path(), "b.pord", "2000");
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn gen_data_rejects_zero() {
    let dir = TempDir::new().unwrap();
    let o = por(&["gen-data", "--env", "fourroom-a", "--n", "0", "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_env_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = por(&["gen-data", "--env", "fourroom-z", "--n", "10", "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_dataset_is_data_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.pord");
    fs::write(&data, b"PORDnot really").unwrap();
    let o = por(&["train", "--data", p(&data), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn toy_reports_both_step_counts() {
    let out = ok(&["toy", "--layout", "canonical"]);
    assert!(out.contains("action-stitching: 11 steps"), "{out}");
    assert!(out.contains("state-stitching: 7 or 8 steps"), "{out}");
}

#[test]
fn train_is_reproducible_and_replayable() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "d.pord", "3000");
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    train(&data, &r1, &[]);
    train(&data, &r2, &[]);
    for f in ["config", "dataset_hash", "metrics.csv", "value.ckpt", "guide.ckpt", "execute.ckpt"] {
        assert_eq!(fs::read(r1.join(f)).unwrap(), fs::read(r2.join(f)).unwrap(), "{f}");
    }
    // Replaying from the stored config reproduces the run.
    let r3 = dir.path().join("r3");
    ok(&["train", "--data", p(&data), "--config", p(&r1.join("config")), "--out", p(&r3)]);
    for f in ["config", "metrics.csv", "execute.ckpt"] {
        assert_eq!(fs::read(r1.join(f)).unwrap(), fs::read(r3.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(r1.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss_v,loss_g,loss_pi,"));
}

#[test]
fn eval_writes_episode_csv() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "d.pord", "2000");
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    let out = ok(&["eval", "--run", p(&run), "--episodes", "3"]);
    assert!(out.contains("success_rate="));
    let csv = fs::read_to_string(run.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let o = por(&["eval", "--run", p(&dir.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn transfer_keeps_execute_checkpoint() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "d.pord", "2000");
    let run_a = dir.path().join("a");
    train(&data, &run_a, &[]);
    let run_b = dir.path().join("b");
    ok(&["transfer", "--from", p(&run_a), "--task", "fourroom-b", "--data", p(&data), "--out", p(&run_b)]);
    assert_eq!(fs::read(run_a.join("execute.ckpt")).unwrap(), fs::read(run_b.join("execute.ckpt")).unwrap());
    assert_ne!(fs::read(run_a.join("guide.ckpt")).unwrap(), fs::read(run_b.join("guide.ckpt")).unwrap());
    assert_ne!(
        fs::read(run_a.join("dataset_hash")).unwrap(),
        fs::read(run_b.join("dataset_hash")).unwrap()
    );
}

#[test]
fn seeds_fan_out_into_subdirectories() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "d.pord", "2000");
    let out = dir.path().join("multi");
    train(&data, &out, &["--seeds", "3,4"]);
    let a = fs::read_to_string(out.join("seed-3/config")).unwrap();
    let b = fs::read_to_string(out.join("seed-4/config")).unwrap();
    assert!(a.contains("seed = 3") && b.contains("seed = 4"));
    assert_ne!(
        fs::read(out.join("seed-3/execute.ckpt")).unwrap(),
        fs::read(out.join("seed-4/execute.ckpt")).unwrap()
    );
}

#[test]
fn mix_scheme_runs_on_action_free_supplement() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "d.pord", "3000");
    for scheme in ["main", "more", "mix"] {
        let out = dir.path().join(scheme);
        let mut args = vec!["mix", "--data", p(&data), "--scheme", scheme, "--fraction-e", "0.3", "--out", p(&out)];
        args.extend_from_slice(TINY);
        ok(&args);
        assert!(out.join("metrics.csv").exists());
    }
    let o = por(&["mix", "--data", p(&data), "--scheme", "most", "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plot_is_deterministic_and_names_bad_lines() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("metrics.csv");
    fs::write(&csv, "step,loss_v,eval_success_rate\n10,0.5,\n20,0.25,0.4\n").unwrap();
    let (o1, o2) = (dir.path().join("p1"), dir.path().join("p2"));
    ok(&["plot", p(&csv), "--out", p(&o1)]);
    ok(&["plot", p(&csv), "--out", p(&o2)]);
    for f in ["loss_v.svg", "eval_success_rate.svg"] {
        assert_eq!(fs::read(o1.join(f)).unwrap(), fs::read(o2.join(f)).unwrap());
    }
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "step,loss_v\n1,0.1\n2,oops\n").unwrap();
    let o = por(&["plot", p(&bad), "--out", p(&o1)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn verify_bound_writes_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bound");
    let stdout = ok(&[
        "verify-bound",
        "--out",
        p(&out),
        "--samples",
        "50",
        "--trajectories",
        "20",
        "--set",
        "steps.value_guide=100",
        "--set",
        "steps.execute=100",
        "--set",
        "steps.log_every=50",
    ]);
    assert!(stdout.contains("violation_rate"));
    let csv = fs::read_to_string(out.join("bound.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(out.join("config").exists());
}

#[test]
fn help_lists_commands() {
    let out = ok(&["--help"]);
    for c in ["gen-data", "train", "eval", "transfer", "mix", "toy", "verify-bound", "plot"] {
        assert!(out.contains(c), "{c}");
    }
}
