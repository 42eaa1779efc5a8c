use std::process::Command;

use papred::{read_csv, BENCH_HEADER};

fn papred() -> Command {
    Command::new(env!("CARGO_BIN_EXE_papred"))
}

fn inproc_bench(out: &std::path::Path, alg: &str, seed: &str) {
    let status = papred()
        .args(["bench", "--transport", "inproc", "--algorithm", alg, "--ranks", "3", "--size", "999"])
        .args(["--iters", "4", "--base-ms", "4", "--max-delay", "3", "--tau-ms", "0.1", "--seed", seed, "--out"])
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn bench_csv_appends_under_one_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    inproc_bench(&out, "prr", "5");
    inproc_bench(&out, "prr", "5");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().filter(|l| *l == BENCH_HEADER.join(",")).count(), 1);
    let rows = read_csv(&out).unwrap();
    assert_eq!(rows.len(), 2 * 4 * 3);
    // same seed, same layout: both runs list the same (iteration, rank) pairs
    let keys: Vec<_> = rows.iter().map(|r| (r.iteration, r.rank)).collect();
    assert_eq!(keys[..12], keys[12..]);
    // one-late: rank 1 enters last in every iteration
    for it in rows.chunks(3) {
        assert!(it[1].arrival_ms > it[0].arrival_ms && it[1].arrival_ms > it[2].arrival_ms, "{it:?}");
    }
}

#[test]
fn report_over_bench_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ring = dir.path().join("ring.csv");
    let prr = dir.path().join("prr.csv");
    inproc_bench(&ring, "ring", "1");
    inproc_bench(&prr, "prr", "1");
    let out = papred()
        .arg("report")
        .arg(format!("ring={}", ring.display()))
        .arg(&prr)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "label,iterations,mean_elapsed_ms,std_ms,speedup_vs_ring,minus_2sigma_ms,plus_2sigma_ms");
    assert!(lines[1].starts_with("ring,4,"));
    assert!(lines[2].starts_with("prr,4,"));
    let speedup: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(speedup, 1.0);
    assert!(!lines[2].split(',').nth(4).unwrap().is_empty());
}

#[test]
fn sim_sweep_is_reproducible() {
    let run = || {
        let out = papred()
            .args(["sim-sweep", "--algorithms", "ring,prr", "--ranks", "4,6", "--delays", "0,3,10"])
            .args(["--mode", "rand-late", "--seeds", "3"])
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.starts_with("algorithm,P,mode,delay_tau,seed,total_tau,mean_elapsed_tau,speedup_vs_ring"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = papred().args(["bench", "--transport", "inproc", "--algorithm", "rabenseifner", "--ranks", "3"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not support"));
}

#[test]
fn demo_prints_one_line_per_algorithm() {
    let out = papred()
        .args(["demo", "--iters", "2", "--size", "5000", "--compute-ms", "5", "--skew-ms", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("ring,") && lines[2].starts_with("prr,"));
}
