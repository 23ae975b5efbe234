#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use wasmless::workloads::GuestDir;

pub fn guests() -> &'static GuestDir {
    static GUESTS: OnceLock<GuestDir> = OnceLock::new();
    GUESTS.get_or_init(|| {
        let dir = GuestDir::default();
        dir.ensure_built().expect("building guests");
        dir
    })
}

pub fn wasm(name: &str) -> Vec<u8> {
    guests().read_wasm(name).expect("guest wasm")
}

/// A gateway binary running on an ephemeral port.
pub struct Server {
    child: Child,
    pub base: String,
    pub data_dir: PathBuf,
    client: Client,
}

impl Server {
    pub fn start(data_dir: &Path) -> Server {
        Self::start_with_env(data_dir, &[])
    }

    pub fn start_with_env(data_dir: &Path, env: &[(&str, &str)]) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_wasmless-gateway"))
            .env("WASMLESS_LISTEN_ADDR", "127.0.0.1:0")
            .env("WASMLESS_DATA_DIR", data_dir)
            .env("RUST_LOG", "warn")
            .envs(env.iter().copied())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("gateway binary starts");
        let mut stdout = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        stdout.read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected gateway output {line:?}"))
            .to_owned();
        std::thread::spawn(move || {
            let mut sink = Vec::new();
            let _ = stdout.read_to_end(&mut sink);
        });
        Server {
            child,
            base: format!("http://{addr}"),
            data_dir: data_dir.to_path_buf(),
            client: Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .unwrap(),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn get(&self, path: &str) -> Response {
        self.client.get(self.url(path)).send().unwrap()
    }

    pub fn delete(&self, path: &str) -> Response {
        self.client.delete(self.url(path)).send().unwrap()
    }

    pub fn post(&self, path: &str, body: Vec<u8>) -> Response {
        self.client.post(self.url(path)).body(body).send().unwrap()
    }

    pub fn deploy(&self, name: &str, guest: &str, query: &str) -> Response {
        self.post(&format!("/v1/functions?name={name}{query}"), wasm(guest))
    }

    pub fn invoke(&self, name: &str, query: &str, stdin: &[u8]) -> Response {
        self.post(
            &format!("/v1/functions/{name}/invoke?{query}"),
            stdin.to_vec(),
        )
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    /// Sends `signal` (e.g. "KILL", "TERM") and waits for exit.
    pub fn signal(mut self, signal: &str) -> ExitStatus {
        self.send(signal);
        self.child.wait().unwrap()
    }

    pub fn send(&self, signal: &str) {
        let status = Command::new("kill")
            .arg(format!("-{signal}"))
            .arg(self.child.id().to_string())
            .status()
            .unwrap();
        assert!(status.success());
    }

    pub fn wait(mut self) -> ExitStatus {
        self.child.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn header(r: &Response, name: &str) -> String {
    r.headers()
        .get(name)
        .unwrap_or_else(|| panic!("missing header {name}"))
        .to_str()
        .unwrap()
        .to_owned()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}
