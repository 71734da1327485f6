use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde_json::Value;

use dsi_core::catalog::Catalog;
use dsi_core::construct::DomainInterface;
use dsi_core::fixtures;
use dsi_core::session::{AltTranslator, DomainRegistry, ServiceConfig, SessionService};

fn dsi() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dsi"));
    c.env("RUST_LOG", "warn");
    for k in ["DSI_DOMAIN", "DSI_CONFIG", "DSI_SEED", "DSI_OUT", "DSI_MODE", "DSI_CATALOG", "DSI_ADDR", "DSI_DATA_DIR"] {
        c.env_remove(k);
    }
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    dsi().args(args).current_dir(cwd).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

/// A directory holding `out/teapot.interface.json`, adapted once per test binary.
fn adapted_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        let o = run(&["adapt", "--domain", "teapot", "--mode", "stub", "--seed", "7"], d.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        d
    })
    .path()
}

fn interface() -> PathBuf {
    adapted_dir().join("out/teapot.interface.json")
}

#[test]
fn adapt_writes_artifacts_reproducibly() {
    let dir = adapted_dir();
    for f in ["teapot.interface.json", "teapot.report.json", "teapot.iterations.csv"] {
        assert!(dir.join("out").join(f).is_file(), "{f}");
    }
    let again = tempfile::tempdir().unwrap();
    let o = run(&["adapt", "--domain", "teapot", "--mode", "stub", "--seed", "7"], again.path());
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["converged"], true);
    for f in ["teapot.interface.json", "teapot.report.json", "teapot.iterations.csv"] {
        let a = std::fs::read(dir.join("out").join(f)).unwrap();
        let b = std::fs::read(again.path().join("out").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let csv = std::fs::read_to_string(dir.join("out/teapot.iterations.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn adapt_reports_failures_by_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["adapt", "--domain", "teapot", "--catalog", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    assert!(o.stdout.is_empty());

    // One short iteration cannot show a flat maintained count.
    std::fs::write(dir.path().join("cfg.json"), r#"{"max_iterations": 1}"#).unwrap();
    let o = run(&["adapt", "--domain", "teapot", "--config", "cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["converged"], false);

    let o = run(&["adapt", "--domain", "hovercraft"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn translate_flatten_emits_z_scale() {
    let dir = tempfile::tempdir().unwrap();
    let i = interface();
    let i = i.to_str().unwrap();
    let lines = fixtures::transcript("teapot").unwrap();
    let o = run(&["translate", "--interface", i, "--out", "s1", lines[0]], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["translate", "--interface", i, "--state", "s1/program.json", lines[1]], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let scale = v["modeling"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["cmd"] == "scale" && c["target"] == "body.sphere_0")
        .expect("a scale on the body sphere");
    assert!(scale["args"]["z"].as_f64().unwrap() < 1.0);
    assert!(!v["delta"].as_array().unwrap().is_empty());
}

#[test]
fn translate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let i = interface();
    let i = i.to_str().unwrap();
    let o = run(&["translate", "--interface", i, "sing a lullaby about rivers"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(o.stdout.is_empty());
    let o = run(&["translate", "--interface", i, "   "], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["translate", "--interface", "nope.json", "Make the lid taller."], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

fn service(data: &Path, alternatives: Vec<AltTranslator>) -> SessionService {
    let mut r = DomainRegistry::new();
    r.insert(DomainInterface::from_json(&std::fs::read_to_string(interface()).unwrap()).unwrap());
    let cfg = ServiceConfig { alternatives, ..Default::default() };
    SessionService::open(data, r, Arc::new(Catalog::from_json(fixtures::CSG_CATALOG).unwrap()), cfg).unwrap()
}

#[cfg(unix)]
#[test]
fn eval_scores_a_ranked_session() {
    use std::os::unix::fs::PermissionsExt;

    let dir = tempfile::tempdir().unwrap();
    // A baseline that always answers with an empty model.
    let script = dir.path().join("baseline.sh");
    std::fs::write(&script, "#!/bin/sh\ncat > /dev/null\necho '{\"program\": {\"commands\": []}}'\n").unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let alt = AltTranslator { id: "baseline".into(), program: script, args: vec![] };
    let svc = service(dir.path(), vec![alt]);
    let id = svc.create_session("teapot").unwrap();
    let lines = fixtures::transcript("teapot").unwrap();
    for (n, line) in lines[..4].iter().enumerate() {
        svc.step(&id, line).unwrap();
        let ours = if n == 3 { 2 } else { 1 };
        let ranks: IndexMap<String, u32> =
            [("ours".to_string(), ours), ("baseline".to_string(), 3 - ours)].into_iter().collect();
        svc.rank_step(&id, n as u32 + 1, ranks, false).unwrap();
    }
    let log = dir.path().join("sessions").join(format!("{id}.jsonl"));
    let o = run(&["eval", "--session", log.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    // Three first places and one second place with k = 2.
    assert_eq!(v["consistency"]["value"], 0.75);
    assert_eq!(v["consistency"]["n_steps"], 4);
    assert!(v["clarity"]["raw"].as_u64().unwrap() > 0);

    let o = run(&["eval", "--session", log.to_str().unwrap(), "--method", "baseline", "--csv"], dir.path());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("domain,session_id,consistency"));
    assert!(text.lines().nth(1).unwrap().contains(",0.25,4,"));
}

#[test]
fn eval_empty_session_and_bare_program() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), vec![]);
    let id = svc.create_session("teapot").unwrap();
    let log = dir.path().join("sessions").join(format!("{id}.jsonl"));
    let o = run(&["eval", "--session", log.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!(v.get("consistency").is_none());
    assert_eq!(v["clarity"]["raw"], 0);

    std::fs::write(dir.path().join("p.jsonl"), "{\"cmd\": \"sphere\", \"args\": {\"radius\": 1.0}, \"target\": \"a\"}\n").unwrap();
    let o = run(&["eval", "--program", "p.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout_json(&o).get("consistency").is_none());

    std::fs::write(dir.path().join("q.jsonl"), "{\"cmd\": \"warp\", \"args\": {}, \"target\": \"a\"}\n").unwrap();
    assert_eq!(run(&["eval", "--program", "q.jsonl"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["eval"], dir.path()).status.code(), Some(2));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http(port: u16, method: &str, path: &str, body: &str) -> std::io::Result<(u16, String)> {
    let mut s = TcpStream::connect(("127.0.0.1", port))?;
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    let mut text = String::new();
    s.read_to_string(&mut text)?;
    let status = text.split_whitespace().nth(1).and_then(|c| c.parse().ok()).unwrap_or(0);
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Ok((status, body))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(port: u16, data: &Path) -> Server {
    let child = dsi()
        .args(["serve", "--addr", &format!("127.0.0.1:{port}"), "--data-dir"])
        .arg(data)
        .arg("--interfaces")
        .arg(adapted_dir().join("out"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    while http(port, "GET", "/health", "").is_err() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    Server(child)
}

#[test]
fn serve_answers_health_and_refuses_busy_port() {
    let data = tempfile::tempdir().unwrap();
    let port = free_port();
    let _server = start_server(port, data.path());
    let (status, body) = http(port, "GET", "/health", "").unwrap();
    assert_eq!(status, 200);
    assert!(body.contains("ok"));
    let (status, body) = http(port, "GET", "/v1/domains", "").unwrap();
    assert_eq!((status, body.as_str()), (200, r#"["teapot"]"#));

    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap().to_string();
    let o = dsi()
        .args(["serve", "--addr", &addr, "--data-dir"])
        .arg(data.path().join("other"))
        .arg("--interfaces")
        .arg(adapted_dir().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[cfg(unix)]
#[test]
fn sigterm_during_step_leaves_it_complete_or_absent() {
    let data = tempfile::tempdir().unwrap();
    let port = free_port();
    let mut server = start_server(port, data.path());
    let (status, body) = http(port, "POST", "/v1/sessions", r#"{"domain": "teapot"}"#).unwrap();
    assert_eq!(status, 201);
    let id = serde_json::from_str::<Value>(&body).unwrap()["session_id"].as_str().unwrap().to_string();
    let line = fixtures::transcript("teapot").unwrap()[0];
    let step = std::thread::spawn(move || {
        http(port, "POST", &format!("/v1/sessions/{id}/steps"), &serde_json::json!({"instruction": line}).to_string())
    });
    std::thread::sleep(Duration::from_millis(20));
    let killed = Command::new("kill").args(["-TERM", &server.0.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let exit = server.0.wait().unwrap();
    assert_eq!(exit.code(), Some(0));
    let _ = step.join().unwrap();

    let svc = service(data.path(), vec![]);
    let sessions = svc.list().unwrap();
    assert_eq!(sessions.len(), 1);
    let history = svc.history(&sessions[0].session_id).unwrap();
    assert!(history.len() <= 1);
    if let Some(r) = history.first() {
        assert_eq!(r.index, 1);
        assert!(r.program.parts.contains_key("body"));
    }
}
