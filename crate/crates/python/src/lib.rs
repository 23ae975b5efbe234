//! Python bindings: validation and instrumentation, the executor, the
//! registry, pricing and the benchmark statistics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use wasmless::bench::{self, Backend, BenchmarkSample};
use wasmless::executor::{
    self as exec, InvocationResult as CoreResult, Preopen, ResourceLimits, SandboxSpec, StartMode,
};
use wasmless::metering::{self, PricingPolicy, Rate, UsageRecord};
use wasmless::registry::Registry as CoreRegistry;
use wasmless::wasm_tools::{self, FuelSchedule, ModuleArtifact};
use wasmless::workloads::WorkloadId;

create_exception!(wasmless_py, WasmlessError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    WasmlessError::new_err(e.to_string())
}

fn to_py_json(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A validated, instrumented module.
#[pyclass(frozen)]
struct Artifact {
    inner: ModuleArtifact,
}

#[pymethods]
impl Artifact {
    #[getter]
    fn content_hash(&self) -> String {
        self.inner.content_hash.to_string()
    }

    #[getter]
    fn instruction_count_static(&self) -> u64 {
        self.inner.instruction_count_static
    }

    #[getter]
    fn raw_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.raw_bytes)
    }

    #[getter]
    fn instrumented_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.instrumented_bytes)
    }

    fn __repr__(&self) -> String {
        format!(
            "Artifact(content_hash='{}', instructions={})",
            self.inner.content_hash, self.inner.instruction_count_static
        )
    }
}

/// Validates and instruments `wasm` with the default schedule, or with
/// `default_cost` and per-mnemonic `overrides`.
#[pyfunction]
#[pyo3(signature = (wasm, default_cost=1, overrides=None))]
fn prepare(
    wasm: &[u8],
    default_cost: u64,
    overrides: Option<BTreeMap<String, u64>>,
) -> PyResult<Artifact> {
    let schedule = FuelSchedule::new(default_cost, overrides.unwrap_or_default()).map_err(err)?;
    let inner = wasm_tools::prepare(wasm, &schedule).map_err(err)?;
    Ok(Artifact { inner })
}

/// Outcome of one invocation.
#[pyclass(frozen, get_all)]
struct InvocationResult {
    exit_class: String,
    exit_code: Option<i32>,
    detail: String,
    stdout: Py<PyBytes>,
    stderr: Py<PyBytes>,
    fuel_consumed: u64,
    memory_peak_pages: u32,
    t_setup_us: u64,
    t_exec_us: u64,
    t_total_us: u64,
    start_mode: String,
}

impl InvocationResult {
    fn from_core(py: Python<'_>, r: CoreResult) -> Self {
        InvocationResult {
            exit_class: r.exit_status.class().to_string(),
            exit_code: r.exit_status.exit_code(),
            detail: r.exit_status.to_string(),
            stdout: PyBytes::new(py, &r.stdout).unbind(),
            stderr: PyBytes::new(py, &r.stderr).unbind(),
            fuel_consumed: r.fuel_consumed,
            memory_peak_pages: r.memory_peak_pages,
            t_setup_us: r.t_setup_us,
            t_exec_us: r.t_exec_us,
            t_total_us: r.t_total_us,
            start_mode: r.start_mode.to_string(),
        }
    }
}

#[pymethods]
impl InvocationResult {
    fn __repr__(&self) -> String {
        format!(
            "InvocationResult(exit_class='{}', fuel_consumed={}, t_total_us={})",
            self.exit_class, self.fuel_consumed, self.t_total_us
        )
    }
}

fn limits_from(
    fuel_limit: Option<u64>,
    memory_limit_pages: Option<u32>,
    wall_timeout_ms: Option<u64>,
) -> PyResult<ResourceLimits> {
    let d = ResourceLimits::default();
    ResourceLimits::new(
        fuel_limit.unwrap_or(d.fuel_limit),
        memory_limit_pages.unwrap_or(d.memory_limit_pages),
        wall_timeout_ms.unwrap_or(d.wall_timeout_ms),
    )
    .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn preopens_from(preopens: Vec<(PathBuf, String)>) -> Vec<Preopen> {
    preopens
        .into_iter()
        .map(|(host, guest)| Preopen::new(host, guest))
        .collect()
}

/// Runs artifacts in fresh sandboxes with a pool of compiled modules.
#[pyclass(frozen)]
struct Executor {
    inner: exec::Executor,
}

#[pymethods]
impl Executor {
    #[new]
    #[pyo3(signature = (pool_capacity=exec::DEFAULT_POOL_CAPACITY))]
    fn new(pool_capacity: usize) -> PyResult<Self> {
        Ok(Executor {
            inner: exec::Executor::new(pool_capacity).map_err(err)?,
        })
    }

    #[pyo3(signature = (
        artifact, argv, stdin=Vec::new(), mode="warm", fuel_limit=None,
        memory_limit_pages=None, wall_timeout_ms=None, preopens=Vec::new(), env=BTreeMap::new()
    ))]
    #[allow(clippy::too_many_arguments)]
    fn execute(
        &self,
        py: Python<'_>,
        artifact: &Artifact,
        argv: Vec<String>,
        stdin: Vec<u8>,
        mode: &str,
        fuel_limit: Option<u64>,
        memory_limit_pages: Option<u32>,
        wall_timeout_ms: Option<u64>,
        preopens: Vec<(PathBuf, String)>,
        env: BTreeMap<String, String>,
    ) -> PyResult<InvocationResult> {
        let mode: StartMode = mode.parse().map_err(PyValueError::new_err)?;
        let limits = limits_from(fuel_limit, memory_limit_pages, wall_timeout_ms)?;
        let preopens = preopens_from(preopens);
        Preopen::check_all(&preopens).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let spec = SandboxSpec {
            argv,
            env,
            stdin_bytes: stdin,
            preopens,
        };
        let result = py
            .detach(|| self.inner.execute(&artifact.inner, &spec, &limits, mode))
            .map_err(err)?;
        Ok(InvocationResult::from_core(py, result))
    }

    /// `{"size": .., "hits": .., "misses": ..}`
    fn pool_stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.inner.pool_stats())
    }
}

/// Disk-backed function registry. Manifests are returned as dicts.
#[pyclass(frozen)]
struct Registry {
    inner: CoreRegistry,
}

#[pymethods]
impl Registry {
    #[new]
    fn new(data_dir: PathBuf) -> PyResult<Self> {
        Ok(Registry {
            inner: CoreRegistry::open(data_dir).map_err(err)?,
        })
    }

    #[pyo3(signature = (name, wasm, fuel_limit=None, memory_limit_pages=None, wall_timeout_ms=None, preopens=Vec::new()))]
    fn deploy(
        &self,
        py: Python<'_>,
        name: &str,
        wasm: &[u8],
        fuel_limit: Option<u64>,
        memory_limit_pages: Option<u32>,
        wall_timeout_ms: Option<u64>,
        preopens: Vec<(PathBuf, String)>,
    ) -> PyResult<Py<PyAny>> {
        let limits = limits_from(fuel_limit, memory_limit_pages, wall_timeout_ms)?;
        let manifest = self
            .inner
            .deploy(name, wasm, limits, preopens_from(preopens))
            .map_err(err)?;
        to_py_json(py, &manifest)
    }

    fn lookup(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.inner.lookup(name).map_err(err)?)
    }

    fn list(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.inner.list().map_err(err)?)
    }

    fn remove(&self, name: &str) -> PyResult<()> {
        self.inner.remove(name).map_err(err)
    }

    fn footprint_report(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.inner.footprint_report().map_err(err)?)
    }

    /// The stored artifact of a deployed function.
    fn artifact(&self, name: &str) -> PyResult<Artifact> {
        let manifest = self.inner.lookup(name).map_err(err)?;
        let inner = self.inner.load_artifact(&manifest).map_err(err)?;
        Ok(Artifact { inner })
    }
}

fn rate(text: &str) -> PyResult<Rate> {
    text.parse()
        .map_err(|e: metering::MeteringError| PyValueError::new_err(e.to_string()))
}

/// Exact price of one invocation rendered with nine decimals. Rates accept
/// decimal, scientific or `n/d` text.
#[pyfunction]
#[pyo3(signature = (fuel_consumed, wall_time_us, memory_peak_pages, fuel_rate="0", time_rate="0", memory_rate="0"))]
fn price(
    fuel_consumed: u64,
    wall_time_us: u64,
    memory_peak_pages: u32,
    fuel_rate: &str,
    time_rate: &str,
    memory_rate: &str,
) -> PyResult<String> {
    let policy = PricingPolicy {
        version: 1,
        fuel_rate: rate(fuel_rate)?,
        time_rate: rate(time_rate)?,
        memory_rate: rate(memory_rate)?,
    };
    let record = UsageRecord {
        invocation_id: String::new(),
        function_name: String::new(),
        timestamp: Default::default(),
        fuel_consumed,
        wall_time_us,
        memory_peak_pages,
        exit_class: exec::ExitClass::Ok,
    };
    Ok(metering::format_amount(&metering::price(&record, &policy)))
}

/// Mean, sample stddev, min and max of `times` (seconds).
#[pyfunction]
fn summarize(py: Python<'_>, times: Vec<f64>) -> PyResult<Py<PyAny>> {
    let samples: Vec<BenchmarkSample> = times
        .into_iter()
        .enumerate()
        .map(|(i, t)| BenchmarkSample {
            workload: WorkloadId::Nop,
            backend: Backend::Native,
            run_index: i,
            wall_time_s: t,
            ok: true,
            reason: None,
        })
        .collect();
    to_py_json(py, &bench::summarize(&samples).map_err(err)?)
}

/// A `mean±stddev` table cell.
#[pyfunction]
fn format_cell(mean: f64, stddev: f64) -> String {
    bench::format_cell(mean, stddev)
}

#[pymodule]
fn wasmless_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WasmlessError", m.py().get_type::<WasmlessError>())?;
    m.add_class::<Artifact>()?;
    m.add_class::<InvocationResult>()?;
    m.add_class::<Executor>()?;
    m.add_class::<Registry>()?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(price, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(format_cell, m)?)?;
    Ok(())
}
