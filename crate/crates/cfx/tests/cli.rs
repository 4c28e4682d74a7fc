//! End-to-end tests of the `cfx` binary: stream round trips, report
//! schemas, ground-truth outputs, and exit codes.

use std::io::Write;
use std::process::{Command, Stdio};

fn cfx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfx"))
}

/// Runs a subcommand with the given stdin, returning (stdout, stderr,
/// exit code).
fn run_with_stdin(args: &[&str], stdin: &str) -> (String, String, i32) {
    let mut child = cfx()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn cfx");
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    (
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
        out.status.code().unwrap_or(-1),
    )
}

fn run(args: &[&str]) -> (String, String, i32) {
    run_with_stdin(args, "")
}

fn digits_of(cfd1: &str) -> (i64, Vec<u64>) {
    let mut head = 0i64;
    let mut tail = Vec::new();
    for tok in cfd1.split_whitespace() {
        if let Some(h) = tok.strip_prefix("h=") {
            head = h.parse().unwrap();
        } else if !tok.starts_with('#') {
            tail.push(tok.parse().unwrap());
        }
    }
    (head, tail)
}

#[test]
fn measure_prints_gauss_mass_of_cylinder_one() {
    let (out, _, code) = run(&["measure", "--cylinder", "1"]);
    assert_eq!(code, 0);
    let v: f64 = out.trim().parse().unwrap();
    assert!((v - (4.0f64 / 3.0).log2()).abs() < 1e-12);
}

#[test]
fn states_counts_unimodular_pair() {
    let (out, _, code) = run(&["states", "--det", "1", "--count"]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "2");
}

#[test]
fn transform_doubles_golden_ratio_digits() {
    // 2 · [0; 1, 1, 1, ...] = [1; 4, 4, 4, ...]. Each output digit 4
    // consumes about three input 1s' worth of information, so 160
    // input digits pin down ~50 output digits.
    let input = format!("h=0\n{}\n", vec!["1"; 160].join(" "));
    let (out, err, code) = run_with_stdin(&["transform", "--matrix", "2,0;0,1"], &input);
    assert_eq!(code, 0, "stderr: {err}");
    let (head, tail) = digits_of(&out);
    assert_eq!(head, 1);
    assert!(tail.len() > 40, "{tail:?}");
    assert!(tail[..40].iter().all(|&d| d == 4), "{tail:?}");
}

#[test]
fn transform_round_trips_through_inverse() {
    // Doubling then halving returns the original digits, up to the
    // held-back suffix of each pass.
    let input = format!("h=0\n{}\n", vec!["1"; 80].join(" "));
    let (doubled, _, code) = run_with_stdin(&["transform", "--matrix", "2,0;0,1"], &input);
    assert_eq!(code, 0);
    let (halved, _, code) = run_with_stdin(&["transform", "--matrix", "1,0;0,2"], &doubled);
    assert_eq!(code, 0);
    let (head, tail) = digits_of(&halved);
    assert_eq!(head, 0);
    assert!(tail.len() >= 50);
    assert!(tail.iter().all(|&d| d == 1), "{tail:?}");
}

#[test]
fn transform_tail_exact_resolves_rational_completely() {
    // x = [0; 2, 3] = 3/7; 2x = 6/7 = [0; 1, 6]. Passing the exact
    // remainder (zero) lets the stream flush without holdback loss.
    let (out, err, code) = run_with_stdin(
        &["transform", "--matrix", "2,0;0,1", "--tail-exact", "0/1"],
        "h=0\n2 3\n",
    );
    assert_eq!(code, 0, "stderr: {err}");
    let (head, tail) = digits_of(&out);
    assert_eq!((head, tail), (0, vec![1, 6]));
}

#[test]
fn transform_rejects_singular_matrix() {
    let (_, err, code) = run_with_stdin(&["transform", "--matrix", "1,2;2,4"], "h=0\n1 2 3\n");
    assert_eq!(code, 1);
    assert!(!err.is_empty());
}

#[test]
fn transform_rejects_malformed_matrix() {
    let (_, _, code) = run_with_stdin(&["transform", "--matrix", "1,2;3"], "h=0\n1\n");
    assert_eq!(code, 1);
}

#[test]
fn graph_json_reports_components_and_markov() {
    let (out, _, code) = run(&["graph", "--det", "2", "--markov", "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["schema"], "cfx/1");
    assert_eq!(v["det"], 2);
    assert_eq!(v["states"], 8);
    assert!(!v["sinks"].as_array().unwrap().is_empty());
    let markov = v["markov"].as_array().unwrap();
    assert!(!markov.is_empty());
    let pi = markov[0]["pi"].as_array().unwrap();
    let total: f64 = pi.iter().map(|x| x["pi"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn graph_writes_dot_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.dot");
    let (_, _, code) = run(&["graph", "--det", "1", "--dot", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let dot = std::fs::read_to_string(&path).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("doublecircle"));
}

#[test]
fn verify_agrees_with_oracle_and_exits_zero() {
    let (out, _, code) = run(&[
        "verify",
        "--matrix",
        "2,0;0,1",
        "--digits",
        "400",
        "--bits",
        "2000",
        "--seed",
        "5",
        "--json",
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["schema"], "cfx/1");
    assert_eq!(v["clean"], true);
    assert_eq!(v["source"]["seed"], 5);
}

#[test]
fn triggers_census_respects_counting_identity() {
    let (out, _, code) = run(&[
        "triggers",
        "--matrix",
        "2,0;0,1",
        "--target",
        "1",
        "--digits",
        "1500",
        "--bits",
        "4000",
        "--seed",
        "3",
        "--report",
        "json",
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["schema"], "cfx/1");
    let nice = v["nice_count"].as_i64().unwrap();
    let mult = v["multiplicity_sum"].as_i64().unwrap();
    assert!((nice - mult).abs() <= 4, "nice {nice} vs multiplicities {mult}");
    assert!(nice > 0);
}

#[test]
fn simulate_reports_digit_frequencies_near_gauss() {
    let (out, _, code) = run(&[
        "simulate",
        "--matrix",
        "2,0;0,1",
        "--digits",
        "30000",
        "--bits",
        "30000",
        "--seed",
        "11",
        "--report",
        "json",
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["schema"], "cfx/1");
    let f1 = v["digit_freqs"]["1"].as_f64().unwrap();
    assert!((f1 - 0.4150).abs() < 0.02, "digit-1 frequency {f1}");
    assert_eq!(v["source"]["seed"], 11);
}

#[test]
fn source_file_feeds_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("input.cfd1");
    // A long but finite stream of small digits.
    let digits: Vec<String> = (0..2000).map(|i| ((i % 3) + 1).to_string()).collect();
    std::fs::write(&path, format!("h=0\n{}\n", digits.join(" "))).unwrap();
    let (out, err, code) = run(&[
        "simulate",
        "--matrix",
        "1,0;0,1",
        "--digits",
        "2000",
        "--source-file",
        path.to_str().unwrap(),
        "--report",
        "json",
    ]);
    assert_eq!(code, 0, "stderr: {err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["n"], 2000);
    assert_eq!(v["source"]["kind"], "file");
}
