use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn katlas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_katlas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = katlas(args);
    assert!(
        out.status.success(),
        "katlas {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    katlas(args).status.code().expect("exit code")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &TempDir, program: &str, extra: &[&str]) -> PathBuf {
    let out = p(dir, &format!("{}.kat", program.replace(['/', ':'], "_")));
    let mut args = vec!["simulate", program, "-o", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn pipeline2_end_to_end() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(&dir, "pipeline2", &["--seed", "1"]);
    let kernels = p(&dir, "kernels.json");
    ok(&["analyze", s(&trace), "--radius", "2", "--threshold", "0.9", "--hot", "16", "--json", s(&kernels)]);
    let report = json(&kernels);
    assert_eq!(report["kernels"].as_array().unwrap().len(), 2);
    assert_eq!(report["coverage"]["ratio"], 1.0);

    let (dot, graph) = (p(&dir, "pipe.dot"), p(&dir, "pipe.json"));
    ok(&["pipeline", s(&trace), s(&kernels), "--dot", s(&dot), "--json", s(&graph), "--temporal"]);
    let g = json(&graph);
    let edges = g["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 1);
    assert_eq!(edges[0]["producer"], serde_json::json!({"kernel": 1}));
    assert_eq!(edges[0]["consumer"], serde_json::json!({"kernel": 2}));
    assert_eq!(edges[0]["weight"], 20);
    let dot = std::fs::read_to_string(dot).unwrap();
    assert!(dot.contains("K1 -> K2 [label=\"20\"]"), "{dot}");
    assert!(dot.contains("fillcolor=\"#ff0000\""));
}

#[test]
fn for_loop_hot_gate() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(&dir, "for_loop", &[]);
    let count = |hot: &str| {
        let out = ok(&["analyze", s(&trace), "--hot", hot]);
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["kernels"].as_array().unwrap().len()
    };
    // The loop header runs 512 times (511 iterations plus the exit test).
    assert_eq!(count("512"), 1);
    assert_eq!(count("513"), 0);
    assert_eq!(count("256"), 1);
}

#[test]
fn nested_loop_has_hierarchy() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(&dir, "nested_loop", &[]);
    let out = ok(&["analyze", s(&trace), "--hot", "32"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ks = v["kernels"].as_array().unwrap();
    assert!(ks.len() >= 2);
    assert!(ks.iter().any(|k| !k["parents"].as_array().unwrap().is_empty()));
}

#[test]
fn outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "fsm", &["--seed", "7"]);
    let b = p(&dir, "again.kat");
    ok(&["simulate", "fsm", "--seed", "7", "-o", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let first = ok(&["analyze", s(&a), "--hot", "32"]).stdout;
    let second = ok(&["analyze", s(&b), "--hot", "32"]).stdout;
    assert_eq!(first, second);
    let k = p(&dir, "k.json");
    std::fs::write(&k, &first).unwrap();
    let d1 = ok(&["pipeline", s(&a), s(&k)]).stdout;
    let d2 = ok(&["pipeline", s(&a), s(&k)]).stdout;
    assert_eq!(d1, d2);
}

#[test]
fn codec_flags_round_trip() {
    let dir = TempDir::new().unwrap();
    let raw = simulate(&dir, "wide_kernel", &["--compression", "none", "--burst-bytes", "4096"]);
    let text = std::fs::read(&raw).unwrap();
    assert!(text.starts_with(b"KATLAS01Blocks:8\nFlags:addr\nCompression:none\n"));
    let packed = p(&dir, "packed.kat");
    ok(&["simulate", "wide_kernel", "--level", "9", "-o", s(&packed)]);
    assert!(std::fs::metadata(&packed).unwrap().len() * 10 < text.len() as u64);
    let a = ok(&["analyze", s(&raw)]).stdout;
    let b = ok(&["analyze", s(&packed)]).stdout;
    assert_eq!(a, b);
    assert_eq!(code(&["simulate", "wide_kernel", "--burst-bytes", "100", "-o", s(&packed)]), 2);
    assert_eq!(code(&["simulate", "wide_kernel", "--compression", "zstd", "-o", s(&packed)]), 2);
}

#[test]
fn affinity_csv_dump() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(&dir, "for_loop", &[]);
    let csv = p(&dir, "aff.csv");
    ok(&["analyze", s(&trace), "--radius", "1", "--csv", s(&csv)]);
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn program_json_files_are_accepted() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["programs", "pipeline2"]);
    let file = p(&dir, "prog.json");
    std::fs::write(&file, &out.stdout).unwrap();
    let a = simulate(&dir, s(&file), &[]);
    let b = simulate(&dir, "pipeline2", &[]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn memory_free_program_has_no_edges() {
    let dir = TempDir::new().unwrap();
    let file = p(&dir, "plain.json");
    std::fs::write(
        &file,
        r#"{"version":1,"name":"plain","entry":0,"blocks":[
            {"name":"head","edge":{"kind":"loop","bound":600,"body":1,"exit":null}},
            {"name":"body","edge":{"kind":"goto","target":0}}],"truth":[]}"#,
    )
    .unwrap();
    let trace = simulate(&dir, s(&file), &[]);
    let k = p(&dir, "k.json");
    ok(&["analyze", s(&trace), "--json", s(&k)]);
    assert_eq!(json(&k)["kernels"].as_array().unwrap().len(), 1);
    let g = p(&dir, "g.json");
    ok(&["pipeline", s(&trace), s(&k), "--json", s(&g)]);
    assert!(json(&g)["edges"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_writes_csv() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(&dir, "pipeline2", &[]);
    let out = ok(&["sweep", s(&trace), "--axis", "hot", "--grid", "1,16,64", "--radius", "2", "--threshold", "0.9"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,mean_kernels,mean_coverage");
    assert_eq!(lines[2], "hot,16,2.000000,1.000000");
    assert_eq!(lines[3], "hot,64,0.000000,0.000000");
    let csv = p(&dir, "sweep.csv");
    ok(&["sweep", "--canonical", "--axis", "radius", "--grid", "1,2", "--csv", s(&csv)]);
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 3);
}

#[test]
fn error_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = p(&dir, "bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = s(&p(&dir, "x.kat")).to_string();
    assert_eq!(code(&["simulate", s(&bad), "-o", &out]), 2);
    assert_eq!(code(&["simulate", "no_such_program", "-o", &out]), 2);

    let cap = katlas(&["simulate", "for_loop", "--max-events", "100", "-o", &out]);
    assert_eq!(cap.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&cap.stderr).contains("event cap"));

    let trace = simulate(&dir, "pipeline2", &[]);
    assert_eq!(code(&["pipeline", s(&trace), s(&p(&dir, "missing.json"))]), 2);
    assert_eq!(code(&["sweep", s(&trace), "--axis", "hot", "--grid", ""]), 2);
    assert_eq!(code(&["analyze", s(&p(&dir, "missing.kat"))]), 2);
    assert_eq!(code(&["analyze", s(&bad)]), 2);
    assert_eq!(code(&["analyze", s(&trace), "--threshold", "1.5"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);

    let plain = simulate(&dir, "fsm", &["--addresses", "false"]);
    let k = p(&dir, "k.json");
    ok(&["analyze", s(&plain), "--hot", "32", "--json", s(&k)]);
    let refused = katlas(&["pipeline", s(&plain), s(&k)]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("without addresses"));
}
