use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn lockon(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lockon"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn lockon")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = lockon(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited with a code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, preset: &str, seed: u64) -> std::path::PathBuf {
    let path = dir.join(format!("{preset}-{seed}.jsonl"));
    ok(dir, &["simulate", "--preset", preset, "--seed", &seed.to_string(), "--out", s(&path)]);
    path
}

fn truth_fraction(log: &Path) -> f64 {
    let text = fs::read_to_string(log).unwrap();
    let frames: Vec<serde_json::Value> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    let held = frames.iter().filter(|f| f["truth_constrained"] == serde_json::Value::Bool(true)).count();
    held as f64 / frames.len() as f64
}

#[test]
fn presets_have_expected_lock_on_share() {
    let dir = TempDir::new().unwrap();
    assert!(truth_fraction(&simulate(dir.path(), "highway", 42)) > 0.9);
    assert!(truth_fraction(&simulate(dir.path(), "campus-curves", 42)) < 0.2);
}

#[test]
fn same_seed_same_bytes() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "mixed", 7);
    let b = dir.path().join("again.jsonl");
    ok(dir.path(), &["simulate", "--preset", "mixed", "--seed", "7", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = simulate(dir.path(), "mixed", 8);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn run_then_eval_writes_consistent_tables() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = simulate(d, "highway", 3);
    for m in ["pnp", "ekf", "ours"] {
        ok(d, &["run", "--log", s(&log), "--method", m]);
        assert!(d.join(format!("segments_{m}.csv")).exists());
    }
    ok(
        d,
        &[
            "eval",
            "--log",
            s(&log),
            "--estimates",
            s(&d.join("estimates_pnp.csv")),
            s(&d.join("estimates_ekf.csv")),
            s(&d.join("estimates_ours.csv")),
        ],
    );
    let results = fs::read_to_string(d.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 3 * 3);

    // active + inactive frame counts add up to the overall count for every method/bin
    let split = fs::read_to_string(d.join("split.csv")).unwrap();
    let rows: Vec<Vec<&str>> = split.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for m in ["pnp", "ekf", "ours"] {
        let frames = |subset: &str| -> usize {
            rows.iter().find(|r| r[0] == m && r[1] == subset).map(|r| r[3].parse().unwrap()).unwrap()
        };
        assert_eq!(frames("active") + frames("inactive"), frames("all"), "{m}");
    }
}

#[test]
fn ground_truth_estimates_score_perfectly() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = simulate(d, "highway", 11);
    ok(d, &["run", "--log", s(&log), "--method", "pnp"]);

    // overwrite every estimated pose with ground truth
    let frames: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let est = fs::read_to_string(d.join("estimates_pnp.csv")).unwrap();
    let mut lines = est.lines();
    let mut fixed = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let mut cols: Vec<String> = line.split(',').map(String::from).collect();
        let id: u64 = cols[1].parse().unwrap();
        let gt = &frames.iter().find(|f| f["frame_id"] == id).unwrap()["gt"];
        let p = gt["p"].as_array().unwrap();
        let q = gt["q"].as_array().unwrap();
        for i in 0..3 {
            cols[3 + i] = p[i].to_string();
        }
        for i in 0..4 {
            cols[6 + i] = q[i].to_string();
        }
        fixed.push_str(&cols.join(","));
        fixed.push('\n');
    }
    let perfect = d.join("perfect.csv");
    fs::write(&perfect, fixed).unwrap();
    ok(d, &["eval", "--log", s(&log), "--estimates", s(&perfect), "--bins", "0.001:0.01"]);
    let results = fs::read_to_string(d.join("results.csv")).unwrap();
    let row: Vec<&str> = results.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn single_value_sweep_matches_eval() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = simulate(d, "highway", 5);
    ok(d, &["run", "--log", s(&log), "--method", "ours", "--alpha", "3"]);
    ok(d, &["eval", "--log", s(&log), "--estimates", s(&d.join("estimates_ours.csv"))]);
    ok(d, &["sweep", "--log", s(&log), "--param", "alpha", "--values", "3"]);

    let results = fs::read_to_string(d.join("results.csv")).unwrap();
    let recall: Vec<f64> = results.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let sweep = fs::read_to_string(d.join("sweep_alpha.csv")).unwrap();
    let row: Vec<&str> = sweep.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..3], ["alpha", "3", "ours"]);
    let swept: Vec<f64> = row[3..3 + recall.len()].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(swept, recall);
}

#[test]
fn sequential_flag_gives_identical_estimates() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = simulate(d, "campus-curves", 2);
    let par = d.join("par.csv");
    let seq = d.join("seq.csv");
    ok(d, &["run", "--log", s(&log), "--method", "ours", "--out", s(&par)]);
    ok(d, &["--sequential", "run", "--log", s(&log), "--method", "ours", "--out", s(&seq)]);
    assert_eq!(fs::read(par).unwrap(), fs::read(seq).unwrap());
}

#[test]
fn user_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = simulate(d, "highway", 1);

    let unknown = lockon(d, &["sweep", "--log", s(&log), "--param", "nonsense", "--values", "1"]);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("nonsense"));

    assert_eq!(code(&lockon(d, &["run", "--log", s(&log), "--method", "ours", "--alpha", "0.5"])), 2);
    assert_eq!(code(&lockon(d, &["simulate", "--preset", "moon-base"])), 2);

    let bad = d.join("bad.json");
    fs::write(&bad, "{ \"name\": 3 ").unwrap();
    assert_eq!(code(&lockon(d, &["simulate", "--scenario", s(&bad)])), 2);

    let missing = d.join("missing.jsonl");
    assert_eq!(code(&lockon(d, &["run", "--log", s(&missing), "--method", "pnp"])), 2);

    let garbage = d.join("garbage.jsonl");
    fs::write(&garbage, "not json\n").unwrap();
    assert_eq!(code(&lockon(d, &["run", "--log", s(&garbage), "--method", "pnp"])), 2);

    // a regular file where a directory is needed
    let blocker = d.join("blocker");
    fs::write(&blocker, "").unwrap();
    let unwritable = blocker.join("log.jsonl");
    assert_eq!(code(&lockon(d, &["simulate", "--preset", "highway", "--out", s(&unwritable)])), 2);

    let wrong = d.join("wrong.csv");
    fs::write(&wrong, "method,frame_id\nours,0\n").unwrap();
    assert_eq!(code(&lockon(d, &["eval", "--log", s(&log), "--estimates", s(&wrong)])), 2);
}

#[test]
fn estimates_from_another_log_are_rejected() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let a = simulate(d, "highway", 1);
    let b = simulate(d, "stop-and-go", 1);
    ok(d, &["run", "--log", s(&a), "--method", "pnp"]);
    let o = lockon(d, &["eval", "--log", s(&b), "--estimates", s(&d.join("estimates_pnp.csv"))]);
    assert_eq!(code(&o), 2);
}
