mod common;

use std::process::Command;

use common::{artifact, guests};
use wasmless::executor::{Executor, ExitStatus, ResourceLimits, SandboxSpec, StartMode};
use wasmless::workloads::{reference, reference_output, Scale, WorkloadId};

struct Outcome {
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    code: i32,
}

fn native(name: &str, args: &[String]) -> Outcome {
    let out = Command::new(guests().native(name).unwrap())
        .args(args)
        .output()
        .unwrap();
    Outcome {
        stdout: out.stdout,
        stderr: out.stderr,
        code: out.status.code().unwrap(),
    }
}

fn wasm(ex: &Executor, name: &str, args: &[String]) -> (Outcome, u64) {
    let mut argv = vec![name.to_string()];
    argv.extend_from_slice(args);
    let r = ex
        .execute(
            &artifact(name),
            &SandboxSpec::new(argv),
            &ResourceLimits::default(),
            StartMode::Warm,
        )
        .unwrap();
    let code = match r.exit_status {
        ExitStatus::Exited(c) => c,
        other => panic!("{name} {args:?}: {other}"),
    };
    (
        Outcome {
            stdout: r.stdout,
            stderr: r.stderr,
            code,
        },
        r.fuel_consumed,
    )
}

#[test]
fn small_parameters_match_native_and_reference() {
    let ex = Executor::new(8).unwrap();
    let cases: &[(WorkloadId, &[u64])] = &[
        (WorkloadId::Nbody, &[1, 1000]),
        (WorkloadId::FannkuchRedux, &[1, 3, 7]),
        (WorkloadId::Mandelbrot, &[1, 16, 17, 200]),
        (WorkloadId::BinaryTrees, &[1, 6, 10]),
    ];
    for (w, params) in cases {
        for n in *params {
            let args = [n.to_string()];
            let nat = native(w.as_str(), &args);
            let (was, _) = wasm(&ex, w.as_str(), &args);
            assert_eq!(nat.code, 0, "{w} {n}");
            assert_eq!(was.code, nat.code, "{w} {n}");
            assert_eq!(was.stdout, nat.stdout, "{w} {n}: wasm vs native");
            assert_eq!(was.stderr, nat.stderr, "{w} {n}");
            assert_eq!(
                was.stdout,
                reference_output(*w, *n),
                "{w} {n}: vs reference"
            );
        }
    }
}

#[test]
fn fannkuch_matches_brute_force_enumeration() {
    let ex = Executor::new(2).unwrap();
    let (out, _) = wasm(&ex, "fannkuch-redux", &["7".into()]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        reference::fannkuch(7)
    );
    assert_eq!(reference::fannkuch(7), "228\nPfannkuchen(7) = 16\n");
}

#[test]
fn mandelbrot_16_header_and_size() {
    let ex = Executor::new(2).unwrap();
    let (out, _) = wasm(&ex, "mandelbrot", &["16".into()]);
    assert!(out.stdout.starts_with(b"P4\n16 16\n"));
    assert_eq!(out.stdout.len(), 9 + 32);
    assert_eq!(out.stdout, reference::mandelbrot(16));
}

#[test]
fn missing_parameter_is_a_usage_error() {
    let ex = Executor::new(8).unwrap();
    for w in WorkloadId::COMPUTE {
        assert_eq!(native(w.as_str(), &[]).code, 2, "{w}");
        assert_eq!(wasm(&ex, w.as_str(), &[]).0.code, 2, "{w}");
        assert_eq!(wasm(&ex, w.as_str(), &["0".into()]).0.code, 2, "{w}");
    }
}

#[test]
fn nop_and_cat_sync_match_native() {
    let ex = Executor::new(4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (w, param) in [(WorkloadId::Nop, 0), (WorkloadId::CatSync, 4096)] {
        let run = w
            .spec()
            .with_param(param)
            .prepare(Scale::Desk, dir.path())
            .unwrap();
        let nat = native(w.as_str(), &run.native_args);
        let r = ex
            .execute(
                &artifact(w.as_str()),
                &run.sandbox,
                &ResourceLimits::default(),
                StartMode::Cold,
            )
            .unwrap();
        assert_eq!(r.exit_status, ExitStatus::Exited(nat.code));
        assert_eq!(r.stdout, nat.stdout);
        assert_eq!(r.stdout, run.expected_stdout);
    }
}

#[test]
fn nbody_fuel_grows_with_steps() {
    let ex = Executor::new(2).unwrap();
    let fuel: Vec<u64> = [1_000u64, 10_000, 100_000]
        .iter()
        .map(|n| wasm(&ex, "nbody", &[n.to_string()]).1)
        .collect();
    assert!(fuel[0] < fuel[1] && fuel[1] < fuel[2], "{fuel:?}");
}

#[test]
fn compute_guests_are_deterministic() {
    let ex = Executor::new(8).unwrap();
    for (w, n) in [
        (WorkloadId::Nbody, 2_000u64),
        (WorkloadId::FannkuchRedux, 6),
        (WorkloadId::Mandelbrot, 64),
        (WorkloadId::BinaryTrees, 8),
    ] {
        let args = [n.to_string()];
        let (a, fa) = wasm(&ex, w.as_str(), &args);
        let (b, fb) = wasm(&ex, w.as_str(), &args);
        assert_eq!(a.stdout, b.stdout, "{w}");
        assert_eq!(fa, fb, "{w}");
    }
}
