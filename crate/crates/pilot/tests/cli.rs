use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde_json::Value;

fn pilot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pilot"))
}

fn shipped() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn shipped_fixtures_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let status = pilot().args(["fixtures", "--out"]).arg(dir.path()).stdout(Stdio::null()).status().unwrap();
    assert!(status.success());
    for name in ["train.json", "eval_simple.json", "eval_multiple.json", "eval_multi_turn.json", "harness/cases.json", "harness/backend.toml"] {
        let fresh = fs::read(dir.path().join(name)).unwrap();
        let ours = fs::read(shipped().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(fresh == ours, "{name} differs from a fresh `pilot fixtures` run");
    }
}

#[test]
fn eval_writes_json_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("out/simple.json");
    let out = pilot()
        .args(["eval", "--category", "simple", "--no-fefo", "--cases"])
        .arg(shipped().join("harness/cases.json"))
        .arg("--backend")
        .arg(shipped().join("harness/backend.toml"))
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("acc_f=0.8 acc_p=0.7"));
    let json: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["per_sample"].as_array().unwrap().len(), 10);
    let table = fs::read_to_string(report.with_extension("txt")).unwrap();
    assert!(table.starts_with("Category"));
}

#[test]
fn eval_rejects_a_category_mismatch() {
    let out = pilot()
        .args(["eval", "--category", "multi_turn", "--cases"])
        .arg(shipped().join("harness/cases.json"))
        .arg("--backend")
        .arg(shipped().join("harness/backend.toml"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("turns over"));
}

#[test]
fn scale_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("scale.json");
    let out = pilot().args(["scale", "--counts", "1,5", "--len", "40", "--cap", "3", "--report"]).arg(&report).output().unwrap();
    assert!(out.status.success());
    let json: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let done: Vec<bool> = json["rows"].as_array().unwrap().iter().map(|r| r["completed"].as_bool().unwrap()).collect();
    assert_eq!(done, [true, true, true, false]);
    assert!(fs::read_to_string(report.with_extension("txt")).unwrap().contains("no_pmp (cap=3)"));
    let bad = pilot().args(["scale", "--counts", "5:1:1"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn chat_session_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let backend = dir.path().join("backend.toml");
    fs::write(
        &backend,
        r#"[backend]
kind = "scripted"

[[backend.steps]]
match = { contains = '"status":"ok"' }
response = "Final Answer: predictions stored."
repeat = true

[[backend.steps]]
match = "always"
response = '{"name": "drug_property", "arguments": {"drug_smiles": "(user_smiles)", "property": "bbbp"}}'
"#,
    )
    .unwrap();
    let smiles = dir.path().join("mols.smi");
    fs::write(&smiles, "CCO\nc1ccccc1\n").unwrap();
    let trace = dir.path().join("trace.jsonl");
    let mut child = pilot()
        .args(["chat", "--backend"])
        .arg(&backend)
        .arg("--trace")
        .arg(&trace)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let script = format!(":load user_smiles {}\nWhich of my molecules cross the blood-brain barrier?\n:keys\n:quit\n", smiles.display());
    child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success());
    assert!(stdout.contains("stored 2 molecules under user_smiles"), "{stdout}");
    assert!(stdout.contains("predictions stored."), "{stdout}");
    assert!(stdout.contains("result_drug_property"), "{stdout}");

    let lines: Vec<Value> = fs::read_to_string(&trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let kinds: Vec<&str> = lines.iter().map(|l| l["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["header", "step", "step", "final_answer"]);
    assert_eq!(lines[0]["pmp"], true);
    assert_eq!(lines[1]["step"]["resolved_args"]["drug_smiles"], serde_json::json!(["CCO", "c1ccccc1"]));
}

#[test]
fn missing_backend_config_is_reported() {
    let out = pilot().args(["chat", "--backend", "/nonexistent/backend.toml"]).stdin(Stdio::null()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read backend config"));
}

fn http(addr: &str, request: &str) -> Option<String> {
    use std::io::Read;
    let mut stream = std::net::TcpStream::connect(addr).ok()?;
    stream.write_all(request.as_bytes()).ok()?;
    let mut response = String::new();
    stream.read_to_string(&mut response).ok()?;
    Some(response)
}

#[test]
fn serve_answers_over_tcp() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = pilot()
        .args(["serve", "--addr", &addr, "--backend"])
        .arg(shipped().join("harness/backend.toml"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let create = "POST /sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
    let mut response = None;
    for _ in 0..100 {
        response = http(&addr, create);
        if response.is_some() {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    let _ = child.wait();
    let response = response.expect("server never came up");
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("\"pmp\":true"), "{response}");
}
