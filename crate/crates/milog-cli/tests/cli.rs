//! End-to-end tests against the built binary: every invocation must print
//! one valid JSON document and use the documented exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_milog"))
}

fn run(args: &[&str]) -> (Value, Output) {
    let out = bin().args(args).output().expect("binary runs");
    let text = String::from_utf8(out.stdout.clone()).expect("utf8 output");
    let json: Value = serde_json::from_str(text.trim())
        .unwrap_or_else(|e| panic!("non-JSON output for {args:?}: {e}\n{text}"));
    (json, out)
}

fn temp_file(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("milog-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn fixture_file(name: &str, m: &milog::structure::FiniteStructure) -> PathBuf {
    temp_file(name, &milog::files::structure_to_json_string(m))
}

#[test]
fn eval_zero_test_is_exact_zero_and_deterministic() {
    let tri = fixture_file("tri.json", &milog::fixtures::tri());
    let args = [
        "eval",
        "--structure",
        tri.to_str().unwrap(),
        "--formula",
        "(ind (P x))",
        "--assign",
        "x=a",
    ];
    let (json, out) = run(&args);
    assert!(out.status.success());
    assert_eq!(json["status"], "ok");
    assert_eq!(json["payload"]["exact"], "0/1");
    // Referential transparency: byte-identical reruns.
    let first = bin().args(args).output().unwrap().stdout;
    let second = bin().args(args).output().unwrap().stdout;
    assert_eq!(first, second);
}

#[test]
fn eval_reports_bounds_with_budget() {
    let tri = fixture_file("tri2.json", &milog::fixtures::tri());
    let (json, out) = run(&[
        "eval",
        "--structure",
        tri.to_str().unwrap(),
        "--formula",
        "(iinf n nat (max (recip n) (P x)))",
        "--assign",
        "x=b",
        "--budget",
        "8",
    ]);
    assert!(out.status.success());
    assert_eq!(json["payload"]["lo"], "0/1");
    assert_eq!(json["payload"]["budget"], 8);
}

#[test]
fn satisfies_subcommand() {
    let tri = fixture_file("tri3.json", &milog::fixtures::tri());
    let (json, _) = run(&[
        "satisfies",
        "--structure",
        tri.to_str().unwrap(),
        "--formula",
        "(P x)",
        "--assign",
        "x=a",
    ]);
    assert_eq!(json["payload"]["satisfies"], true);
}

#[test]
fn transform_rho_outputs_operator_free_formula() {
    let tri = fixture_file("tri4.json", &milog::fixtures::tri());
    let (json, out) = run(&[
        "transform",
        "--pass",
        "rho",
        "--structure",
        tri.to_str().unwrap(),
        "--formula",
        "(rho (y) (P y))",
    ]);
    assert!(out.status.success());
    let printed = json["payload"]["formula"].as_str().unwrap();
    assert!(!printed.contains("rho"), "still has a rho node: {printed}");
    // The output is parseable and evaluates like the input.
    let m = milog::fixtures::tri();
    let back = milog::syntax::parse_formula(printed, m.signature()).unwrap();
    let env = [("y".to_string(), m.point_id("b").unwrap())].into();
    let v = milog::eval::evaluate(&m, &back, &env, 64).unwrap();
    assert_eq!(v, milog::eval::EvalResult::Exact(milog::rational::rat(1, 2)));
}

#[test]
fn transform_other_passes() {
    let tri = fixture_file("tri5.json", &milog::fixtures::tri());
    let tri_path = tri.to_str().unwrap();
    for (pass, extra) in [
        ("neg", vec!["--formula", "(P x)"]),
        ("nneg", vec!["--formula", "(P x)"]),
        ("or", vec!["--formula", "(P x)", "--formula", "(d x y)"]),
        ("exists", vec!["--formula", "(P x)", "--params", "x"]),
    ] {
        let mut args = vec!["transform", "--pass", pass, "--structure", tri_path];
        args.extend(extra.iter());
        let (json, out) = run(&args);
        assert!(out.status.success(), "pass {pass}");
        assert!(json["payload"]["formula"].is_string(), "pass {pass}");
    }
    let (json, out) = run(&[
        "transform",
        "--pass",
        "borel",
        "--structure",
        tri_path,
        "--formula",
        "(P x)",
        "--desc",
        "(limit k (leaf (scale k (hole 0))))",
    ]);
    assert!(out.status.success());
    assert!(json["payload"]["formula"].as_str().unwrap().starts_with("(iinf"));
}

#[test]
fn classify_subcommand() {
    let tri = fixture_file("tri6.json", &milog::fixtures::tri());
    let (json, _) = run(&[
        "classify",
        "--structure",
        tri.to_str().unwrap(),
        "--formula",
        "(ind (P x))",
    ]);
    assert_eq!(json["payload"]["class"], "LFull");
    assert_eq!(json["payload"]["bounds"]["x"], "inf");
    let (json, _) = run(&[
        "classify",
        "--structure",
        tri.to_str().unwrap(),
        "--formula",
        "(d x y)",
    ]);
    assert_eq!(json["payload"]["class"], "FO");
    assert_eq!(json["payload"]["bounds"]["x"], "1/1");
}

#[test]
fn orbits_and_theta() {
    let sym = fixture_file("sym.json", &milog::fixtures::sym());
    let (json, _) = run(&[
        "orbits",
        "--structure",
        sym.to_str().unwrap(),
        "--params",
        "a",
    ]);
    let orbit = json["payload"]["orbit"].as_array().unwrap();
    assert_eq!(orbit.len(), 2);

    let (json, out) = run(&[
        "theta",
        "--structure",
        sym.to_str().unwrap(),
        "--params",
        "a",
    ]);
    assert!(out.status.success());
    assert!(json["payload"]["formula"].as_str().unwrap().starts_with("(isup"));
}

#[test]
fn scott_equiv_isomorphic() {
    let m1 = fixture_file("m1.json", &milog::fixtures::m1());
    let m2 = fixture_file("m2.json", &milog::fixtures::m2());
    let (json, _) = run(&[
        "equiv",
        "--structure",
        m1.to_str().unwrap(),
        "--structure2",
        m2.to_str().unwrap(),
    ]);
    assert_eq!(json["payload"]["equivalent"], false);

    let (json, _) = run(&[
        "isomorphic",
        "--structure",
        m1.to_str().unwrap(),
        "--structure2",
        m1.to_str().unwrap(),
    ]);
    assert_eq!(json["payload"]["isomorphic"], true);

    let (json, out) = run(&["scott", "--structure", m1.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(json["payload"]["formula"].is_string());
}

#[test]
fn define_subcommand() {
    let sym = fixture_file("sym2.json", &milog::fixtures::sym());
    let table = temp_file("table.json", r#"{"a": "3/10", "b": "3/10"}"#);
    let (json, out) = run(&[
        "define",
        "--structure",
        sym.to_str().unwrap(),
        "--predicate",
        table.to_str().unwrap(),
        "--grid",
        "10",
    ]);
    assert!(out.status.success());
    assert!(json["payload"]["formula"].is_string());

    // Degenerate grid: error, exit 1.
    let (json, out) = run(&[
        "define",
        "--structure",
        sym.to_str().unwrap(),
        "--predicate",
        table.to_str().unwrap(),
        "--grid",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json["status"], "error");

    // Non-invariant table: error with a diagnostic, exit 1.
    let skew = temp_file("skew.json", r#"{"a": "0/1", "b": "1/1"}"#);
    let (json, out) = run(&[
        "define",
        "--structure",
        sym.to_str().unwrap(),
        "--predicate",
        skew.to_str().unwrap(),
        "--grid",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json["status"], "error");
    assert!(json["diagnostics"][0]
        .as_str()
        .unwrap()
        .contains("not invariant"));

    // With the parameter pinned, it succeeds.
    let (json, out) = run(&[
        "define",
        "--structure",
        sym.to_str().unwrap(),
        "--predicate",
        skew.to_str().unwrap(),
        "--grid",
        "10",
        "--params",
        "a",
    ]);
    assert!(out.status.success());
    assert_eq!(json["payload"]["parameters"][0], "e0");
}

#[test]
fn validate_reports_violations_without_failing() {
    let bad = temp_file(
        "bad.json",
        r#"{
            "signature": {"predicates": [], "functions": [], "constants": []},
            "points": ["a", "b"],
            "metric": {"a,b": "3/2"}
        }"#,
    );
    let (json, out) = run(&["validate", "--structure", bad.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(json["payload"]["valid"], false);
    assert!(json["payload"]["violations"][0]
        .as_str()
        .unwrap()
        .contains("outside [0,1]"));

    let tri = fixture_file("tri7.json", &milog::fixtures::tri());
    let (json, _) = run(&["validate", "--structure", tri.to_str().unwrap()]);
    assert_eq!(json["payload"]["valid"], true);
}

#[test]
fn errors_are_json_with_documented_exit_codes() {
    // Unknown subcommand: usage error, exit 2, still JSON.
    let (json, out) = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json["status"], "error");
    assert!(!json["diagnostics"].as_array().unwrap().is_empty());

    // Unknown flag: exit 2.
    let (_, out) = run(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing file: evaluation error, exit 1, still JSON.
    let (json, out) = run(&[
        "eval",
        "--structure",
        "/nonexistent/structure.json",
        "--formula",
        "(const 0)",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json["status"], "error");

    // Parse error with position.
    let tri = fixture_file("tri8.json", &milog::fixtures::tri());
    let (json, out) = run(&[
        "eval",
        "--structure",
        tri.to_str().unwrap(),
        "--formula",
        "(P x y)",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(json["diagnostics"][0].as_str().unwrap().starts_with("1:1:"));
}
