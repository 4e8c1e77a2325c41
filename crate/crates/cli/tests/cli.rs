use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn symrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symrd"))
        .args(args)
        .output()
        .expect("spawn symrd")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Data lines of a history CSV with the trailing wall_ms column dropped.
fn history_without_wall(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

const TINY: &[&str] = &[
    "--task", "tsp", "--n", "6", "--method", "rl_only", "--budget", "100", "--batch-size", "10",
    "--val-count", "8",
];

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = symrd(&["gen-data", "--task", "cvrp", "--n", "10", "--count", "7", "--seed", "42", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["datasets"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn gen_data_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    assert_eq!(code(&symrd(&["gen-data", "--task", "tsp", "--n", "5", "--count", "0", "--out", p(&out)])), 1);
    assert_eq!(code(&symrd(&["gen-data", "--task", "knapsack", "--n", "5", "--count", "3", "--out", p(&out)])), 1);
    assert!(!out.exists());
}

#[test]
fn tiny_run_writes_ten_records_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut histories = Vec::new();
    for name in ["r1", "r2"] {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--out-dir", p(&out)];
        args.extend_from_slice(TINY);
        let o = symrd(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["history.csv", "final.json", "manifest.json", "config.txt", "val.jsonl"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        assert!(!out.join(".symrd.lock").exists());
        histories.push(history_without_wall(&out.join("history.csv")));
    }
    assert_eq!(histories[0].len(), 10);
    assert_eq!(histories[0], histories[1]);
}

#[test]
fn config_file_and_override_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "task = tsp\nn = 6\nmethod = rl_only\nbudget = 100\nbatch_size = 10\nval_count = 8\nseed = 5\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&symrd(&["train", "--config", p(&cfg), "--out-dir", p(&a)])), 0);
    let mut args = vec!["train", "--out-dir", p(&b)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--seed=5"]);
    assert_eq!(code(&symrd(&args)), 0);
    assert_eq!(
        history_without_wall(&a.join("history.csv")),
        history_without_wall(&b.join("history.csv"))
    );
}

#[test]
fn train_reports_config_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--out-dir", p(&out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--bogus-key", "1"]);
    assert_eq!(code(&symrd(&args)), 2);

    let mut args = vec!["train", "--out-dir", p(&out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--val-path", "/nonexistent/val.jsonl"]);
    let o = symrd(&args);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/val.jsonl"));
}

#[test]
fn locked_out_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".symrd.lock"), "1").unwrap();
    let mut args = vec!["train", "--out-dir", p(&out)];
    args.extend_from_slice(TINY);
    assert_eq!(code(&symrd(&args)), 4);
}

#[test]
fn eval_reads_checkpoint_and_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--out-dir", p(&run), "--checkpoints"];
    args.extend_from_slice(TINY);
    assert_eq!(code(&symrd(&args)), 0);
    assert_eq!(fs::read_dir(run.join("checkpoints")).unwrap().count(), 10);

    let data = dir.path().join("d.jsonl");
    assert_eq!(code(&symrd(&["gen-data", "--task", "tsp", "--n", "6", "--count", "4", "--seed", "9", "--out", p(&data)])), 0);
    let metrics = dir.path().join("m.csv");
    let ckpt = run.join("final.json");
    let o = symrd(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--optimality", "--out", p(&metrics)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["val_cost", "l1_gap", "optimality_gap"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    assert!(dir.path().join("m.csv.manifest.json").exists());

    let wrong = dir.path().join("c.jsonl");
    assert_eq!(code(&symrd(&["gen-data", "--task", "cvrp", "--n", "6", "--count", "2", "--out", p(&wrong)])), 0);
    assert_eq!(code(&symrd(&["eval", "--checkpoint", p(&ckpt), "--data", p(&wrong)])), 2);
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&symrd(&["eval", "--checkpoint", p(&ckpt), "--data", p(&missing)])), 4);
}

#[test]
fn verify_passes_and_catches_a_broken_transform() {
    for task in ["tsp", "atsp", "cvrp", "ffsp"] {
        let o = symrd(&["verify", "--task", task, "--n", "5", "--trials", "10"]);
        assert_eq!(code(&o), 0, "{task}: {}", String::from_utf8_lossy(&o.stdout));
    }
    let o = symrd(&["verify", "--task", "tsp", "--n", "6", "--trials", "20", "--corrupt-transform"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(code(&symrd(&["verify", "--task", "tsp", "--trials", "0"])), 1);
}

fn write_cfg(dir: &Path, name: &str, method: &str, budget: u64) {
    fs::write(
        dir.join(name),
        format!("task = tsp\nn = 6\nmethod = {method}\nbudget = {budget}\nbatch_size = 10\nval_count = 6\n"),
    )
    .unwrap();
}

fn summary_rows(path: &Path) -> Vec<csv::StringRecord> {
    let text = fs::read_to_string(path).unwrap();
    let body = text.split_once('\n').unwrap().1;
    csv::Reader::from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn compare_of_identical_configs_gives_identical_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfgs");
    fs::create_dir_all(&cfgs).unwrap();
    write_cfg(&cfgs, "a.cfg", "rl_only", 100);
    write_cfg(&cfgs, "b.cfg", "rl_only", 100);
    let out = dir.path().join("out");
    let o = symrd(&["compare", "--config-dir", p(&cfgs), "--seeds", "0,1,2,3", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = summary_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 20);
    let (a, b) = rows.split_at(10);
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(&ra[4], &rb[4]);
        assert_eq!(&ra[6], &rb[6]);
        assert_eq!(&ra[5], "4");
    }
    // sample standard deviation over the four seed histories
    let last_k = &a[9][4];
    let costs: Vec<f64> = (0..4)
        .map(|s| {
            let h = fs::read_to_string(out.join("a").join(format!("seed{s}")).join("history.csv")).unwrap();
            let line = h.lines().find(|l| l.split(',').nth(4) == Some(last_k)).unwrap();
            line.split(',').nth(5).unwrap().parse().unwrap()
        })
        .collect();
    let mean = costs.iter().sum::<f64>() / 4.0;
    let std = (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let got: f64 = a[9][7].parse().unwrap();
    assert!((got - std).abs() < 1e-12, "{got} vs {std}");
}

#[test]
fn compare_rejects_mismatched_budgets() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), "a.cfg", "rl_only", 100);
    write_cfg(dir.path(), "b.cfg", "rl_only", 200);
    let out = dir.path().join("out");
    let o = symrd(&["compare", "--config-dir", p(dir.path()), "--seeds", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.join("summary.csv").exists());
}
