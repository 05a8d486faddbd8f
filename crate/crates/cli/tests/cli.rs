use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anyonforge"))
        .args(args)
        .env_remove("ANYONFORGE_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON report")
}

#[test]
fn bratteli_a5_row_six() {
    let o = run(&["bratteli", "--dynkin", "A5", "--kmax", "6"]);
    assert_eq!(o.status.code(), Some(0));
    let table: Vec<String> = stdout(&o)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert_eq!(table.last().unwrap(), "6\t5 9 4\t122");

    let o = run(&[
        "bratteli", "--dynkin", "A5", "--kmax", "6", "--format", "json",
    ]);
    let r = json(&o);
    assert_eq!(r["results"]["dims"][6], 122);
    assert_eq!(r["pass"], true);
}

#[test]
fn pmpo_trace_at_k2() {
    let o = run(&["pmpo", "--dynkin", "A5", "--k", "2", "--report", "trace"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).lines().any(|l| l == "trace\t2.000000"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn pmpo_projector_report() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("site.json");
    let o = run(&[
        "pmpo",
        "--dynkin",
        "A3",
        "--k",
        "2",
        "--report",
        "trace,projector",
        "--format",
        "json",
        "--dump",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert_eq!(r["results"]["projector"]["mode"], "dense");
    assert_eq!(r["results"]["rank"]["nearest"], 2);
    let site: Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert!(!site["entries"].as_array().unwrap().is_empty());
}

#[test]
fn json_reports_are_deterministic() {
    for args in [
        &["tube", "anyons", "--builtin", "vec_z3", "--format", "json"][..],
        &[
            "modinv",
            "enumerate",
            "--builtin",
            "toric_code",
            "--cap",
            "2",
            "--format",
            "json",
        ][..],
        &[
            "pmpo",
            "--dynkin",
            "A4",
            "--k",
            "3",
            "--report",
            "trace,projector",
            "--format",
            "json",
        ][..],
    ] {
        let a = run(args);
        let b = run(args);
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert!(json(&a).get("elapsed_ms").is_none());
    }
}

#[test]
fn timing_is_opt_in() {
    let o = run(&[
        "graph", "pf", "--dynkin", "E6", "--format", "json", "--timing",
    ]);
    assert!(json(&o)["elapsed_ms"].is_u64());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        run(&["bratteli", "--dynkin", "A5", "--kmax", "6", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["nope"]).status.code(), Some(2));
    assert_eq!(
        run(&["graph", "pf", "--dynkin", "Q7"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["tube", "anyons", "--builtin", "ising"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["conn", "check", "/nonexistent/c.json"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn failed_check_exits_one_and_names_residual() {
    let o = run(&["graph", "pf", "--dynkin", "A5", "--tol-pf", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    assert!(err.contains("pf_eigen_residual"), "{err}");
    assert!(stdout(&o).contains("# FAIL\tpf_eigen_residual"));
}

#[test]
fn connection_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("a4.json");
    let f = file.to_str().unwrap();
    assert_eq!(
        run(&["conn", "make", "--dynkin", "A4", "--out", f])
            .status
            .code(),
        Some(0)
    );
    let o = run(&[
        "conn", "check", "--flat", "--rect", "3x3", f, "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert!(r["residuals"]["flatness"].as_f64().unwrap() < 1e-9);
    assert!(r["residuals"]["biunitarity"].as_f64().unwrap() < 1e-10);
    assert_eq!(
        run(&["conn", "check", "--flat", "--rect", "3by3", f])
            .status
            .code(),
        Some(2)
    );
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn compose_and_decompose_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(
        dir.path(),
        "a.json",
        r#"{"z": [[1,0,1,0],[0,0,0,0],[1,0,1,0],[0,0,0,0]]}"#,
    );
    let b = write(
        dir.path(),
        "b.json",
        "[[1,0,1,0],[0,0,0,0],[1,0,1,0],[0,0,0,0]]",
    );
    let o = run(&[
        "modinv",
        "compose",
        &a,
        &b,
        "--pool-builtin",
        "toric_code",
        "--cap",
        "2",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert_eq!(r["results"]["summands"], 2);
    assert_eq!(r["results"]["decomposition"]["status"], "found");
}

#[test]
fn config_file_then_env_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "format = \"json\"\ntol_pf = 1e-3\n");
    let o = run(&["graph", "pf", "--dynkin", "A3", "--config", &cfg]);
    let r = json(&o);
    assert_eq!(r["inputs"]["tol_pf"], 1e-3);

    let o = Command::new(env!("CARGO_BIN_EXE_anyonforge"))
        .args(["graph", "pf", "--dynkin", "A3", "--tol-pf", "1e-5"])
        .env("ANYONFORGE_CONFIG", &cfg)
        .output()
        .unwrap();
    let r = json(&o);
    assert_eq!(r["inputs"]["tol_pf"], 1e-5);

    let o = run(&[
        "graph", "pf", "--dynkin", "A3", "--config", &cfg, "--format", "tsv",
    ]);
    assert!(stdout(&o).starts_with("beta\t"));

    let bad = write(dir.path(), "bad.toml", "tolerance = 1\n");
    assert_eq!(
        run(&["graph", "pf", "--dynkin", "A3", "--config", &bad])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn tube_from_fsymbol_file_and_crosscheck() {
    let dir = tempfile::tempdir().unwrap();
    let f = anyonforge::tube::f_fibonacci::<f64>().to_json();
    let path = write(dir.path(), "fib.json", &serde_json::to_string(&f).unwrap());
    let o = run(&["tube", "anyons", "--fsymbols", &path, "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["results"]["spectrum"]["count"], 4);

    let o = run(&["tube", "anyons", "--dynkin", "A3", "--format", "json"]);
    assert_eq!(json(&o)["results"]["spectrum"]["count"], 4);

    assert_eq!(
        run(&[
            "tube",
            "crosscheck",
            "--builtin",
            "vec_z3",
            "--md",
            "double_z3"
        ])
        .status
        .code(),
        Some(0)
    );
    assert_eq!(
        run(&[
            "tube",
            "crosscheck",
            "--builtin",
            "vec_z2",
            "--md",
            "fibonacci"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn verify_all_quick_passes() {
    let o = run(&["verify-all", "--quick", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r = json(&o);
    assert_eq!(r["verdicts"].as_array().unwrap().len(), 10);
}
