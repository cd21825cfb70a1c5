use std::process::Command;

use taylorshift::cli::run_with;
use taylorshift::io::{format_matrix, read_matrix_file};
use taylorshift::sampling::{sample_gaussian, RandomSeed};
use taylorshift::{attention, KernelKind, Matrix, NormMode};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["tslab"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn data_lines(s: &str) -> Vec<&str> {
    s.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn crossover_theory_table() {
    let (code, out, _) = run(&["crossover-theory", "--d", "8,16,32,64,128"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("# tslab crossover-theory {"));
    let lines = data_lines(&out);
    assert_eq!(lines[0], "d,n0_exact,n0,n1_exact,n1");
    let pairs: Vec<(String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].to_string(), f[4].to_string())
        })
        .collect();
    let want = [
        ("73", "47"),
        ("273", "159"),
        ("1057", "574"),
        ("4161", "2174"),
        ("16513", "8446"),
    ];
    assert_eq!(pairs.len(), want.len());
    for (got, want) in pairs.iter().zip(want) {
        assert_eq!((got.0.as_str(), got.1.as_str()), want);
    }
}

#[test]
fn cost_smallest_case_csv_and_json() {
    let (code, out, _) = run(&["cost", "--d", "1", "--n", "1"]);
    assert_eq!(code, 0);
    assert_eq!(data_lines(&out)[1], "1,1,1,10,27,3,7");

    let (code, out, err) = run(&["--format", "json", "cost", "--d", "1", "--n", "1"]);
    assert_eq!(code, 0);
    assert!(err.starts_with("# tslab cost "));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let row = &v.as_array().unwrap()[0];
    assert_eq!(row["ops_direct"], 10);
    assert_eq!(row["entries_eff"], 7);
}

#[test]
fn large_counts_keep_full_precision_in_json() {
    let (code, out, _) = run(&[
        "--format",
        "json",
        "cost",
        "--d",
        "4096",
        "--n",
        "4294967296",
    ]);
    assert_eq!(code, 0);
    let want = taylorshift::costmodel::ops_direct(1 << 32, 4096);
    assert!(want > u64::MAX as u128);
    assert!(out.contains(&format!("\"ops_direct\": {want}")), "{out}");
}

#[test]
fn equiv_small_run_passes() {
    let (code, out, _) = run(&["equiv", "--trials", "10", "--max-n", "32", "--max-d", "8"]);
    assert_eq!(code, 0, "{out}");
    let row: Vec<&str> = data_lines(&out)[1].split(',').collect();
    assert_eq!(row[0], "10");
    assert!(row[1].parse::<f64>().unwrap() <= 1e-8);
    assert_eq!(row.last(), Some(&"true"));
}

#[test]
fn usage_and_runtime_errors_exit_2() {
    assert_eq!(run(&["no-such-command"]).0, 2);
    assert_eq!(run(&["cost", "--d", "1"]).0, 2);
    assert_eq!(run(&["cost", "--d", "x", "--n", "1"]).0, 2);
    let (code, _, err) = run(&["heads", "--d-emb", "0", "--n", "4"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error:"));
    let (code, _, err) = run(&["attend", "--input", "/nonexistent/qkv.txt"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
}

#[test]
fn help_exits_0() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("crossover-theory"));
}

#[test]
fn heads_lists_all_divisors() {
    let (code, out, _) = run(&["heads", "--d-emb", "12", "--n", "100"]);
    assert_eq!(code, 0);
    let hs: Vec<u64> = data_lines(&out)[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(hs, [1, 2, 3, 4, 6, 12]);
}

#[test]
fn scaling_emits_one_row_per_expression() {
    let (code, out, _) = run(&["scaling", "--n", "64", "--d", "4", "--trials", "4"]);
    assert_eq!(code, 0);
    let lines = data_lines(&out);
    assert_eq!(lines.len(), 1 + 5);
    assert!(lines[1..].iter().all(|l| l.starts_with("64,4,4,")));
}

#[test]
fn instability_footer_reports_slope() {
    let (code, out, _) = run(&["instability", "--scales", "1,2,4"]);
    assert_eq!(code, 0);
    let footer = out.lines().last().unwrap();
    assert!(footer.starts_with("# log-log slope"), "{footer}");
    let slope: f64 = footer.rsplit(' ').next().unwrap().parse().unwrap();
    assert!((slope - 4.0).abs() < 0.01);
}

#[test]
fn bench_row_matches_memory_model() {
    let (code, out, _) = run(&[
        "bench",
        "--kernel",
        "taylor_efficient,taylor_direct",
        "--d",
        "4",
        "--n",
        "64",
        "--reps",
        "1",
        "--warmup",
        "0",
    ]);
    assert_eq!(code, 0, "{out}");
    let lines = data_lines(&out);
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[9], f[10], "{l}");
        assert_eq!(f[11], "ok");
    }
}

#[test]
fn output_is_deterministic_for_a_seed() {
    let args = [
        "--seed", "11", "scaling", "--n", "32", "--d", "2", "--trials", "8",
    ];
    assert_eq!(run(&args).1, run(&args).1);
}

fn qkv_file(dir: &std::path::Path) -> (std::path::PathBuf, [Matrix; 3]) {
    let s = RandomSeed::new(5, 0);
    let m: [Matrix; 3] = [0, 1, 2].map(|i| sample_gaussian(6, 3, s.derive(i)));
    let path = dir.join("qkv.txt");
    let text: String = m.iter().map(|x| format_matrix(x) + "\n").collect();
    std::fs::write(&path, text).unwrap();
    (path, m)
}

#[test]
fn attend_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (input, [q, k, v]) = qkv_file(dir.path());
    let out = dir.path().join("y.txt");
    let (code, _, err) = run(&[
        "attend",
        "--input",
        input.to_str().unwrap(),
        "--kernel",
        "taylor_efficient",
        "--tau",
        "2.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let got = read_matrix_file::<f64>(&out).unwrap();
    let want = attention(
        &q,
        &k,
        &v,
        2.5,
        KernelKind::TaylorEfficient,
        NormMode::InputOutput,
    )
    .unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(
        got[0]
            .as_slice()
            .iter()
            .map(|x| x.to_bits())
            .collect::<Vec<_>>(),
        want.as_slice()
            .iter()
            .map(|x| x.to_bits())
            .collect::<Vec<_>>()
    );
}

#[test]
fn binary_writes_into_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_tslab"))
        .args(["crossover-theory", "--d", "8"])
        .env("TS_LAB_OUT", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(status.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("crossover-theory.csv")).unwrap();
    assert!(text
        .lines()
        .any(|l| l.starts_with("8,") && l.contains(",73,")));

    let bad = Command::new(env!("CARGO_BIN_EXE_tslab"))
        .arg("bogus")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
