use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dws_core::instance;

const HEADER: &str = "r,ws_size,supp_size,e_size,tau_next,objective,inner_iters,cum_seconds";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dws-bench"))
        .args(args)
        .output()
        .expect("spawn dws-bench")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    ok(&[
        "gen", "--n", "300", "--s", "5", "--c", "2", "--alpha", "0.1", "--seed", seed, "--out",
        p(&path),
    ]);
    path
}

#[test]
fn gen_is_byte_identical_for_equal_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.csi", "42");
    let b = gen(dir.path(), "b.csi", "42");
    let c = gen(dir.path(), "c.csi", "43");
    let (a, b, c) = (fs::read(a).unwrap(), fs::read(b).unwrap(), fs::read(c).unwrap());
    assert_eq!(&a[..4], b"CSI1");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let inst = instance::decode_instance(&a).unwrap();
    assert_eq!((inst.n(), inst.s, inst.seed), (300, 5, 42));
}

#[test]
fn solve_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "i.csi", "7");
    let trace = dir.path().join("t.csv");
    let summary = dir.path().join("s.json");
    let x = dir.path().join("x.bin");
    ok(&[
        "solve", "--in", p(&inst), "--strategy", "dws", "--trace", p(&trace), "--summary",
        p(&summary), "--x-out", p(&x),
    ]);
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<&str> = lines.collect();

    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(rows.len() as u64, s["outer_iterations"].as_u64().unwrap());
    assert_eq!(s["strategy"], "dws");
    assert_eq!(s["n"], 300);
    assert_eq!(s["terminated"], true);
    for key in [
        "seed", "s", "k", "eta", "tau_sum", "max_ws", "final_supp", "final_objective",
        "wall_seconds", "certificate_max_violation",
    ] {
        assert!(!s[key].is_null(), "missing {key}");
    }
    let tau_sum: u64 = rows
        .iter()
        .map(|r| r.split(',').nth(4).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(tau_sum, s["tau_sum"].as_u64().unwrap());

    let last = rows.last().unwrap().split(',').nth(5).unwrap();
    assert!(last.contains('e') && last.split('e').next().unwrap().len() == 18, "{last}");
    let f: f64 = last.parse().unwrap();
    assert_eq!(f, s["final_objective"].as_f64().unwrap());

    let xv = instance::read_solution(&x).unwrap();
    assert_eq!(xv.len(), 300);
}

#[test]
fn trace_columns_are_reproducible_except_time() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "i.csi", "9");
    let strip = |name: &str| {
        let t = dir.path().join(name);
        ok(&["solve", "--in", p(&inst), "--strategy", "doubling", "--trace", p(&t)]);
        fs::read_to_string(&t)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip("a.csv"), strip("b.csv"));
}

#[test]
fn oracle_solution_certifies_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "i.csi", "3");
    let sol = dir.path().join("sol.bin");
    ok(&["oracle", "--in", p(&inst), "--out", p(&sol)]);
    let out = ok(&["certify", "--in", p(&inst), "--x", p(&sol), "--tol", "1e-8"]);
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["status"], "optimal");

    let zero = dir.path().join("zero.bin");
    instance::write_solution(&zero, &vec![0.0; 300]).unwrap();
    let out = ok(&["certify", "--in", p(&inst), "--x", p(&zero)]);
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["status"], "suboptimal");
}

#[test]
fn bench_rows_are_sorted_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let summary = dir.path().join("bench.json");
    ok(&[
        "bench", "--n", "300", "--s", "5", "--seed-start", "5", "--seeds", "3", "--strategies",
        "full,dws,doubling", "--out", p(&csv), "--summary", p(&summary),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("strategy,seed,{HEADER}"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();

    let sums: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(sums.len(), 9);
    let total: u64 = sums.iter().map(|s| s["outer_iterations"].as_u64().unwrap()).sum();
    assert_eq!(rows.len() as u64, total);

    let keys: Vec<(u64, &str)> = sums
        .iter()
        .map(|s| (s["seed"].as_u64().unwrap(), s["strategy"].as_str().unwrap()))
        .collect();
    assert_eq!(keys[..3], [(5, "dws"), (5, "doubling"), (5, "full")]);
    assert!(keys.windows(2).all(|w| w[0].0 <= w[1].0));

    let f: Vec<f64> = sums.iter().map(|s| s["final_objective"].as_f64().unwrap()).collect();
    for chunk in f.chunks(3) {
        for v in chunk {
            assert!((v - chunk[0]).abs() <= 1e-7 * (1.0 + chunk[0].abs()), "{chunk:?}");
        }
    }
}

#[test]
fn usage_and_format_errors_exit_one() {
    assert_eq!(run(&["solve", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csi");
    fs::write(&bad, b"CSI2 not really").unwrap();
    let out = run(&["solve", "--in", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format error"));

    let missing = dir.path().join("missing.csi");
    assert_eq!(run(&["solve", "--in", p(&missing)]).status.code(), Some(1));

    let inst = gen(dir.path(), "i.csi", "1");
    let out = run(&["solve", "--in", p(&inst), "--strategy", "skglm"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["solve", "--in", p(&inst), "--h", "3"]);
    assert_eq!(out.status.code(), Some(1));

    let short = dir.path().join("short.bin");
    instance::write_solution(&short, &[0.0; 4]).unwrap();
    let out = run(&["certify", "--in", p(&inst), "--x", p(&short)]);
    assert_eq!(out.status.code(), Some(1));
    let trunc = dir.path().join("trunc.bin");
    fs::write(&trunc, &instance::encode_solution(&[1.0; 300])[..100]).unwrap();
    assert_eq!(run(&["certify", "--in", p(&inst), "--x", p(&trunc)]).status.code(), Some(1));
}

#[test]
fn gen_rejects_impossible_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen", "--n", "20", "--s", "10", "--k", "30", "--out", p(&dir.path().join("x.csi")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
