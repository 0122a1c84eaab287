#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use asbuilt_core::synthetic::FacadeSpec;
use asbuilt_pipeline::commands;
use asbuilt_pipeline::fixture::{write_fixture, FixtureTruth, CLICKS_FILE};
use asbuilt_pipeline::formats::read_json;
use asbuilt_pipeline::project::{Overrides, Project};
use asbuilt_pipeline::service::{self, AppState};
use serde_json::Value;

/// One row of two windows: quick to render, still has both walls.
pub fn small_spec() -> FacadeSpec {
    FacadeSpec { window_rows: 1, window_cols: 2, ..Default::default() }
}

pub fn fixture(spec: FacadeSpec) -> (tempfile::TempDir, FixtureTruth) {
    let dir = tempfile::tempdir().unwrap();
    let truth = write_fixture(dir.path(), spec).unwrap();
    (dir, truth)
}

/// Runs register, align and fit-planes through the library.
pub fn prepare(root: &Path) {
    let mut p = Project::load(root, &Overrides::default()).unwrap();
    let clicks = read_json(&root.join(CLICKS_FILE)).unwrap();
    commands::register(&mut p, &clicks).unwrap();
    commands::align(&mut p).unwrap();
    commands::fit_planes(&mut p).unwrap();
}

pub fn prepared(spec: FacadeSpec) -> (tempfile::TempDir, FixtureTruth) {
    let (dir, truth) = fixture(spec);
    prepare(dir.path());
    (dir, truth)
}

pub fn cli(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asbuilt"))
        .arg("--project")
        .arg(root)
        .args(args)
        .env_remove("ASBUILT_CONFIG")
        .output()
        .unwrap()
}

/// Parsed stdout of a successful CLI run.
pub fn cli_json(root: &Path, args: &[&str]) -> Value {
    let out = cli(root, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Parsed error body of a failed CLI run.
pub fn cli_error(root: &Path, args: &[&str]) -> Value {
    let out = cli(root, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    serde_json::from_slice(&out.stderr).unwrap()
}

/// Result or error body of a CLI run, whichever it produced.
pub fn cli_value(root: &Path, args: &[&str]) -> Value {
    let out = cli(root, args);
    let bytes = if out.status.success() { &out.stdout } else { &out.stderr };
    serde_json::from_slice(bytes).unwrap()
}

pub struct Server {
    pub base: String,
    pub agent: ureq::Agent,
}

/// Starts the service on an ephemeral port in a background thread.
pub fn serve(root: &Path) -> Server {
    let state = AppState::new(root, Overrides::default()).unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            service::serve(listener, state).await.unwrap();
        });
    });
    let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    Server { base, agent }
}

impl Server {
    pub fn get(&self, path: &str) -> (u16, Vec<u8>) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().with_config().limit(64 << 20).read_to_vec().unwrap())
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let mut r = self.agent.post(&format!("{}{path}", self.base)).send_json(body).unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(&format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }
}

/// True when every number in `a` and `b` agrees to `decimals` places and
/// everything else is identical.
pub fn json_close(a: &Value, b: &Value, decimals: i32) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() <= 0.5 * 10f64.powi(-decimals)
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_close(p, q, decimals)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_close(v, w, decimals)))
        }
        _ => a == b,
    }
}
