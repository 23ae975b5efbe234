//! Shared helpers for the guest programs.
//!
//! Every guest is a plain `std` command: it reads its parameters from argv,
//! writes to stdout and exits. The same sources are compiled for
//! `wasm32-wasip1` and for the host triple so the two builds can be compared
//! byte for byte.

use std::io::Write;
use std::process;

/// Parses `argv[1]` as the workload parameter, exiting with status 2 and a
/// usage line on stderr if it is missing or not a positive integer.
pub fn param_or_exit(program: &str) -> u64 {
    let mut args = std::env::args().skip(1);
    match args.next().map(|a| a.parse::<u64>()) {
        Some(Ok(n)) if n >= 1 => n,
        _ => {
            eprintln!("usage: {program} <n>  (n >= 1)");
            process::exit(2);
        }
    }
}

/// Writes `bytes` to stdout and flushes, exiting with status 1 on failure.
pub fn emit(bytes: &[u8]) {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    if lock.write_all(bytes).and_then(|_| lock.flush()).is_err() {
        process::exit(1);
    }
}
