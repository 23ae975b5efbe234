//! A small WebAssembly function platform: module validation and fuel
//! instrumentation, a sandboxed executor, a content-addressed registry,
//! usage metering and a benchmark harness.

pub mod bench;
pub mod executor;
pub mod metering;
pub mod registry;
pub mod wasm_tools;
pub mod workloads;
