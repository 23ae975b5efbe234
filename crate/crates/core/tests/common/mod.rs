#![allow(dead_code)]

use std::sync::OnceLock;

use wasmless::wasm_tools::{self, FuelSchedule, ModuleArtifact};
use wasmless::workloads::GuestDir;

/// The guest builds, compiled on first use.
pub fn guests() -> &'static GuestDir {
    static GUESTS: OnceLock<GuestDir> = OnceLock::new();
    GUESTS.get_or_init(|| {
        let dir = GuestDir::default();
        dir.ensure_built().expect("building guests");
        dir
    })
}

pub fn artifact(name: &str) -> ModuleArtifact {
    let bytes = guests().read_wasm(name).expect("guest wasm");
    wasm_tools::prepare(&bytes, &FuelSchedule::default()).expect("guest prepares")
}

pub fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}
