mod common;

use std::fs;
use std::time::{Duration, Instant};

use common::{header, Server};
use serde_json::Value;
use wasmless_gateway::{Gateway, GatewayConfig, GatewayError};

fn json(r: reqwest::blocking::Response) -> Value {
    serde_json::from_slice(&r.bytes().unwrap()).unwrap()
}

#[test]
fn health_deploy_list_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let r = s.get("/v1/healthz");
    assert_eq!(r.status(), 200);
    assert_eq!(r.text().unwrap(), "ok");

    assert_eq!(json(s.get("/v1/functions")), Value::Array(vec![]));

    let r = s.deploy("echo", "echo", "&fuel_limit=5000000");
    assert_eq!(r.status(), 201);
    let manifest = json(r);
    assert_eq!(manifest["name"], "echo");
    assert_eq!(manifest["limits"]["fuel_limit"], 5_000_000);
    let listed = json(s.get("/v1/functions"));
    assert_eq!(listed.as_array().unwrap().len(), 1);
    assert_eq!(listed[0]["content_hash"], manifest["content_hash"]);

    assert_eq!(s.deploy("Bad_Name", "nop", "").status(), 400);
    assert_eq!(s.deploy("f", "nop", "&fuel_limit=0").status(), 400);
    assert_eq!(s.deploy("f", "nop", "&bogus=1").status(), 400);
    assert_eq!(
        s.deploy("f", "nop", "&preopen=/nonexistent-dir:/data")
            .status(),
        400
    );
    assert_eq!(
        s.post("/v1/functions?name=f", b"garbage".to_vec()).status(),
        422
    );
    assert_eq!(s.post("/v1/functions", b"garbage".to_vec()).status(), 400);
    assert_eq!(json(s.get("/v1/functions")).as_array().unwrap().len(), 1);
}

#[test]
fn invoke_reports_output_and_accounting_headers() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    assert_eq!(s.deploy("echo", "echo", "").status(), 201);
    let r = s.invoke("echo", "arg=hello&arg=big%20world", b"input");
    assert_eq!(r.status(), 200);
    assert_eq!(header(&r, "x-exit-class"), "ok");
    assert_eq!(header(&r, "x-start-mode"), "cold");
    assert_eq!(header(&r, "x-billed-amount"), "0.000000000");
    assert_eq!(header(&r, "x-invocation-id").len(), 32);
    assert!(header(&r, "x-fuel-consumed").parse::<u64>().unwrap() > 0);
    let wall: u64 = header(&r, "x-wall-time-us").parse().unwrap();
    let setup: u64 = header(&r, "x-setup-time-us").parse().unwrap();
    assert!(wall >= setup);
    assert_eq!(r.bytes().unwrap().as_ref(), b"hello big world\ninput");

    let r = s.invoke("echo", "mode=bogus", b"");
    assert_eq!(r.status(), 400);
}

#[test]
fn missing_functions_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    assert_eq!(s.invoke("ghost", "", b"").status(), 404);
    assert_eq!(s.delete("/v1/functions/ghost").status(), 404);
    assert_eq!(s.get("/v1/functions/ghost/usage").status(), 404);

    assert_eq!(s.deploy("nop", "nop", "").status(), 201);
    assert_eq!(s.invoke("nop", "", b"").status(), 200);
    assert_eq!(s.delete("/v1/functions/nop").status(), 204);
    assert_eq!(s.invoke("nop", "", b"").status(), 404);
    // history outlives the function
    assert_eq!(json(s.get("/v1/functions/nop/usage"))["record_count"], 1);
}

#[test]
fn guest_failures_are_200_with_exit_class() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    assert_eq!(
        s.deploy("bomb", "fuel-bomb", "&fuel_limit=1000").status(),
        201
    );
    let r = s.invoke("bomb", "", b"");
    assert_eq!(r.status(), 200);
    assert_eq!(header(&r, "x-exit-class"), "fuel_exhausted");
    assert_eq!(header(&r, "x-fuel-consumed"), "1000");

    assert_eq!(
        s.deploy("hog", "mem-hog", "&memory_limit_pages=64")
            .status(),
        201
    );
    assert_eq!(
        header(&s.invoke("hog", "", b""), "x-exit-class"),
        "memory_exceeded"
    );

    assert_eq!(s.deploy("cat", "cat-sync", "").status(), 201);
    let r = s.invoke("cat", "arg=/etc/passwd", b"");
    assert_eq!(header(&r, "x-exit-class"), "trap");
    assert!(r.bytes().unwrap().is_empty());
}

#[test]
fn every_invocation_is_billed_in_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start_with_env(
        dir.path(),
        &[
            ("WASMLESS_PRICING_FUEL_RATE", "1e-6"),
            ("WASMLESS_PRICING_TIME_RATE", "0"),
        ],
    );
    assert_eq!(s.deploy("nbody", "nbody", "").status(), 201);
    let mut seen = Vec::new();
    for n in ["10", "100", "1000"] {
        let r = s.invoke("nbody", &format!("arg={n}"), b"");
        assert_eq!(header(&r, "x-exit-class"), "ok");
        seen.push((
            header(&r, "x-invocation-id"),
            header(&r, "x-fuel-consumed"),
            header(&r, "x-wall-time-us"),
            header(&r, "x-billed-amount"),
        ));
    }
    let usage = json(s.get("/v1/functions/nbody/usage"));
    assert_eq!(usage["record_count"], 3);

    let log = fs::read_to_string(dir.path().join("ledger").join("usage.log")).unwrap();
    let lines: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    let mut total_fuel = 0u64;
    for (line, (id, fuel, wall, amount)) in lines.iter().zip(&seen) {
        assert_eq!(line["invocation_id"], id.as_str());
        assert_eq!(line["fuel_consumed"].to_string(), *fuel);
        assert_eq!(line["wall_time_us"].to_string(), *wall);
        // fuel-only rate of one millionth per instruction
        let fuel: u64 = fuel.parse().unwrap();
        assert_eq!(
            *amount,
            format!("{}.{:06}000", fuel / 1_000_000, fuel % 1_000_000)
        );
        total_fuel += fuel;
    }
    assert_eq!(usage["total_fuel"], total_fuel);
    assert_ne!(seen[0].3, seen[2].3);
}

#[test]
fn start_mode_header_is_honest() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    assert_eq!(s.deploy("nop", "nop", "").status(), 201);
    for i in 0..20 {
        let mode = if i % 2 == 0 { "cold" } else { "warm" };
        let r = s.invoke("nop", &format!("mode={mode}"), b"");
        assert_eq!(header(&r, "x-start-mode"), mode, "run {i}");
    }
}

#[test]
fn concurrent_invocations_see_fresh_state() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    assert_eq!(s.deploy("counter", "counter", "").status(), 201);
    let bodies: Vec<Vec<u8>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..32)
            .map(|_| {
                scope.spawn(|| {
                    let r = s.invoke("counter", "mode=warm", b"");
                    assert_eq!(r.status(), 200);
                    r.bytes().unwrap().to_vec()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(bodies.iter().all(|b| b == b"1 0\n"), "{bodies:?}");
    assert_eq!(
        json(s.get("/v1/functions/counter/usage"))["record_count"],
        32
    );
}

#[test]
fn occupied_port_is_a_bind_failure() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = GatewayConfig {
        listen_addr: taken.local_addr().unwrap().to_string(),
        data_dir: dir.path().to_path_buf(),
        ..GatewayConfig::default()
    };
    let rt = tokio::runtime::Runtime::new().unwrap();
    let err = rt.block_on(Gateway::bind(config)).err().unwrap();
    assert!(matches!(err, GatewayError::BindFailure { .. }), "{err}");
}

#[test]
fn sigterm_drains_in_flight_requests() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    assert_eq!(s.deploy("sleep", "sleep", "").status(), 201);
    s.invoke("sleep", "arg=1", b"");
    let started = Instant::now();
    let (body, status) = std::thread::scope(|scope| {
        let pending = scope.spawn(|| {
            let r = s.invoke("sleep", "arg=1500", b"");
            (r.status(), r.bytes().unwrap().to_vec())
        });
        std::thread::sleep(Duration::from_millis(400));
        s.send("TERM");
        let (status, body) = pending.join().unwrap();
        (body, status)
    });
    assert_eq!(status, 200);
    assert_eq!(body, b"slept\n");
    assert!(started.elapsed() >= Duration::from_millis(1500));
    assert!(s.wait().success());
    let log = fs::read_to_string(dir.path().join("ledger").join("usage.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
}
