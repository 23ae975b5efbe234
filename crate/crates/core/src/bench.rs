//! Benchmark harness: timed runs per backend, summary statistics and reports.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::executor::{Executor, ExecutorError, ExitStatus, ResourceLimits, StartMode};
use crate::registry::{Registry, RegistryError};
use crate::wasm_tools::{self, FuelSchedule, ModuleArtifact, ModuleError};
use crate::workloads::{GuestDir, PreparedRun, Scale, WorkloadError, WorkloadId, WorkloadSpec};

pub const DEFAULT_RUNS: usize = 50;
/// Environment variable naming the image used by the container backend.
pub const CONTAINER_IMAGE_VAR: &str = "WASMLESS_CONTAINER_IMAGE";
pub const DEFAULT_CONTAINER_IMAGE: &str = "wasmless-guests:latest";
const CONTAINER_CLIS: [&str; 2] = ["docker", "podman"];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("backend {0} unavailable: {1}")]
    BackendUnavailable(Backend, String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("no successful samples to summarize")]
    NoSamples,
    #[error(transparent)]
    Module(#[from] ModuleError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Native,
    WasmCold,
    WasmWarm,
    Container,
}

impl Backend {
    pub const ALL: [Backend; 4] = [
        Backend::Native,
        Backend::WasmCold,
        Backend::WasmWarm,
        Backend::Container,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Native => "native",
            Backend::WasmCold => "wasm-cold",
            Backend::WasmWarm => "wasm-warm",
            Backend::Container => "container",
        }
    }

    /// What the timed window of one sample contains.
    pub fn timed_window(self) -> &'static str {
        match self {
            Backend::Native => "spawn of the native binary until process exit, stdout captured",
            Backend::WasmCold => {
                "executor invoke with mode=cold: validate, instrument, compile, instantiate and run, no HTTP"
            }
            Backend::WasmWarm => {
                "executor invoke with mode=warm after one untimed priming run: instantiate and run, no HTTP"
            }
            Backend::Container => {
                "`run --rm` of a prebuilt image, container setup and teardown included"
            }
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown backend `{s}`"))
    }
}

/// One timed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub workload: WorkloadId,
    pub backend: Backend,
    pub run_index: usize,
    pub wall_time_s: f64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub workload: WorkloadId,
    pub backend: Backend,
    pub n_runs: usize,
    pub n_failed: usize,
    pub mean_s: f64,
    /// Sample standard deviation, N − 1 denominator.
    pub stddev_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

/// Mean and sample standard deviation over the ok samples, using Welford's
/// single-pass update.
pub fn summarize(samples: &[BenchmarkSample]) -> Result<BenchmarkSummary, BenchError> {
    let first = samples.first().ok_or(BenchError::NoSamples)?;
    let mut n = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for s in samples.iter().filter(|s| s.ok) {
        n += 1;
        let delta = s.wall_time_s - mean;
        mean += delta / n as f64;
        m2 += delta * (s.wall_time_s - mean);
        min = min.min(s.wall_time_s);
        max = max.max(s.wall_time_s);
    }
    if n == 0 {
        return Err(BenchError::NoSamples);
    }
    let stddev = if n > 1 {
        (m2 / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(BenchmarkSummary {
        workload: first.workload,
        backend: first.backend,
        n_runs: n,
        n_failed: samples.len() - n,
        mean_s: mean,
        stddev_s: stddev,
        min_s: min,
        max_s: max,
    })
}

/// Groups samples by (workload, backend). Groups without any ok sample yield
/// a summary with `n_runs = 0`, which reports render as `Failed`.
pub fn summarize_all(samples: &[BenchmarkSample]) -> Vec<BenchmarkSummary> {
    let mut groups: BTreeMap<(Backend, WorkloadId), Vec<BenchmarkSample>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.backend, s.workload))
            .or_default()
            .push(s.clone());
    }
    groups
        .into_iter()
        .map(|((backend, workload), group)| {
            summarize(&group).unwrap_or(BenchmarkSummary {
                workload,
                backend,
                n_runs: 0,
                n_failed: group.len(),
                mean_s: 0.0,
                stddev_s: 0.0,
                min_s: 0.0,
                max_s: 0.0,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

fn trim_decimal(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Decimal places that give `x` three significant figures.
fn decimals_for(x: f64) -> usize {
    if x == 0.0 || !x.is_finite() {
        return 0;
    }
    (2 - x.abs().log10().floor() as i64).max(0) as usize
}

/// `mean±stddev` with three significant figures on the stddev and the mean
/// rounded to the same place, trailing zeros dropped.
pub fn format_cell(mean: f64, stddev: f64) -> String {
    let places = if stddev > 0.0 {
        decimals_for(stddev)
    } else {
        decimals_for(mean)
    };
    let mut sd = trim_decimal(format!("{stddev:.places$}"));
    // rounding can carry into a fourth significant figure, e.g. 9.996 -> 10.0
    if stddev > 0.0 && sd.parse::<f64>().map(decimals_for).ok() != Some(places) {
        let fewer = places.saturating_sub(1);
        sd = trim_decimal(format!("{stddev:.fewer$}"));
        return format!("{}±{sd}", trim_decimal(format!("{mean:.fewer$}")));
    }
    format!("{}±{sd}", trim_decimal(format!("{mean:.places$}")))
}

fn cell(summary: &BenchmarkSummary) -> String {
    if summary.n_runs == 0 {
        "Failed".to_owned()
    } else {
        format_cell(summary.mean_s, summary.stddev_s)
    }
}

fn log10_cell(summary: &BenchmarkSummary) -> String {
    if summary.n_runs == 0 {
        "Failed".to_owned()
    } else {
        format!("{:.3}", summary.mean_s.log10())
    }
}

/// Renders summaries as a backend × workload markdown grid or as CSV.
pub fn report(summaries: &[BenchmarkSummary], format: ReportFormat, log10: bool) -> String {
    match format {
        ReportFormat::Csv => report_csv(summaries, log10),
        ReportFormat::Markdown => report_markdown(summaries, log10),
    }
}

fn report_csv(summaries: &[BenchmarkSummary], log10: bool) -> String {
    let mut out = String::from("workload,backend,n_runs,n_failed,mean_s,stddev_s,min_s,max_s");
    if log10 {
        out.push_str(",log10_mean_s");
    }
    out.push('\n');
    for s in summaries {
        let _ = write!(
            out,
            "{},{},{},{}",
            s.workload, s.backend, s.n_runs, s.n_failed
        );
        if s.n_runs == 0 {
            out.push_str(",,,,");
            if log10 {
                out.push(',');
            }
        } else {
            let _ = write!(out, ",{},{},{},{}", s.mean_s, s.stddev_s, s.min_s, s.max_s);
            if log10 {
                let _ = write!(out, ",{}", s.mean_s.log10());
            }
        }
        out.push('\n');
    }
    out
}

fn grid(
    out: &mut String,
    summaries: &[BenchmarkSummary],
    workloads: &[WorkloadId],
    backends: &[Backend],
    render: fn(&BenchmarkSummary) -> String,
) {
    out.push_str("| backend |");
    for w in workloads {
        let _ = write!(out, " {w} |");
    }
    out.push_str("\n|---|");
    for _ in workloads {
        out.push_str("---|");
    }
    out.push('\n');
    for b in backends {
        let _ = write!(out, "| {b} |");
        for w in workloads {
            let text = summaries
                .iter()
                .find(|s| s.backend == *b && s.workload == *w)
                .map(render)
                .unwrap_or_default();
            let _ = write!(out, " {text} |");
        }
        out.push('\n');
    }
}

fn report_markdown(summaries: &[BenchmarkSummary], log10: bool) -> String {
    let mut workloads: Vec<WorkloadId> = summaries.iter().map(|s| s.workload).collect();
    workloads.sort();
    workloads.dedup();
    let mut backends: Vec<Backend> = summaries.iter().map(|s| s.backend).collect();
    backends.sort();
    backends.dedup();

    let mut out = String::new();
    grid(&mut out, summaries, &workloads, &backends, cell);
    if summaries.is_empty() {
        return out;
    }
    if log10 {
        out.push_str("\nlog10(mean seconds):\n\n");
        grid(&mut out, summaries, &workloads, &backends, log10_cell);
    }
    out.push_str(
        "\nCells are mean±stddev in seconds; stddev is the sample standard deviation (N-1).\n",
    );
    out.push_str("`Failed` means no run produced the expected output.\n\nTimed windows:\n");
    for b in &backends {
        let _ = writeln!(out, "- {b}: {}", b.timed_window());
    }
    out
}

/// Container CLI found on `PATH`, if any.
pub fn container_cli() -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    CONTAINER_CLIS.iter().find_map(|cli| {
        std::env::split_paths(&path)
            .map(|dir| dir.join(cli))
            .find(|p| p.is_file())
    })
}

/// Shared state for a benchmark session.
pub struct BenchContext {
    pub guests: GuestDir,
    pub executor: Executor,
    pub limits: ResourceLimits,
    pub schedule: FuelSchedule,
    fixture_dir: tempfile::TempDir,
}

impl BenchContext {
    pub fn new(guests: GuestDir) -> Result<Self, BenchError> {
        let schedule = FuelSchedule::default();
        Ok(BenchContext {
            guests,
            executor: Executor::with_schedule(
                crate::executor::DEFAULT_POOL_CAPACITY,
                schedule.clone(),
            )?,
            limits: ResourceLimits::default(),
            schedule,
            fixture_dir: tempfile::tempdir()?,
        })
    }

    pub fn fixture_dir(&self) -> &Path {
        self.fixture_dir.path()
    }

    pub fn artifact(&self, workload: WorkloadId) -> Result<ModuleArtifact, BenchError> {
        let bytes = self.guests.read_wasm(workload.as_str())?;
        Ok(wasm_tools::prepare(&bytes, &self.schedule)?)
    }
}

fn check_output(
    status_ok: bool,
    status: impl fmt::Display,
    stdout: &[u8],
    expected: &[u8],
) -> Option<String> {
    if !status_ok {
        Some(format!("exit status {status}"))
    } else if stdout != expected {
        Some(format!(
            "output mismatch: {} bytes, expected {}",
            stdout.len(),
            expected.len()
        ))
    } else {
        None
    }
}

fn sample(
    run: &PreparedRun,
    backend: Backend,
    run_index: usize,
    elapsed: f64,
    failure: Option<String>,
) -> BenchmarkSample {
    BenchmarkSample {
        workload: run.workload,
        backend,
        run_index,
        // a zero reading would break the positivity invariant on coarse clocks
        wall_time_s: elapsed.max(1e-9),
        ok: failure.is_none(),
        reason: failure,
    }
}

/// Runs `workload` `runs` times on `backend`, sequentially.
pub fn bench_run(
    ctx: &BenchContext,
    workload: &WorkloadSpec,
    backend: Backend,
    runs: usize,
    scale: Scale,
) -> Result<Vec<BenchmarkSample>, BenchError> {
    let run = workload.prepare(scale, ctx.fixture_dir())?;
    match backend {
        Backend::Native => {
            let binary = ctx.guests.native(workload.id.as_str())?;
            (0..runs)
                .map(|i| {
                    let started = Instant::now();
                    let output = Command::new(&binary)
                        .args(&run.native_args)
                        .stdin(Stdio::null())
                        .output()?;
                    let elapsed = started.elapsed().as_secs_f64();
                    let failure = check_output(
                        output.status.success(),
                        output.status,
                        &output.stdout,
                        &run.expected_stdout,
                    );
                    Ok(sample(&run, backend, i, elapsed, failure))
                })
                .collect()
        }
        Backend::WasmCold | Backend::WasmWarm => {
            let artifact = ctx.artifact(workload.id)?;
            let mode = if backend == Backend::WasmCold {
                StartMode::Cold
            } else {
                ctx.executor
                    .execute(&artifact, &run.sandbox, &ctx.limits, StartMode::Warm)?;
                StartMode::Warm
            };
            (0..runs)
                .map(|i| {
                    let started = Instant::now();
                    let result =
                        ctx.executor
                            .execute(&artifact, &run.sandbox, &ctx.limits, mode)?;
                    let elapsed = started.elapsed().as_secs_f64();
                    let mut failure = check_output(
                        result.exit_status == ExitStatus::Exited(0),
                        &result.exit_status,
                        &result.stdout,
                        &run.expected_stdout,
                    );
                    if failure.is_none() && result.start_mode != mode {
                        failure = Some(format!("ran {} instead of {mode}", result.start_mode));
                    }
                    Ok(sample(&run, backend, i, elapsed, failure))
                })
                .collect()
        }
        Backend::Container => {
            let cli = container_cli().ok_or_else(|| {
                BenchError::BackendUnavailable(
                    backend,
                    format!("none of {} found on PATH", CONTAINER_CLIS.join(", ")),
                )
            })?;
            let image = std::env::var(CONTAINER_IMAGE_VAR)
                .unwrap_or_else(|_| DEFAULT_CONTAINER_IMAGE.to_owned());
            (0..runs)
                .map(|i| {
                    let mut cmd = Command::new(&cli);
                    cmd.args(["run", "--rm", "--network=none"]);
                    let mut args = run.native_args.clone();
                    if workload.needs_preopen {
                        cmd.arg("-v")
                            .arg(format!("{}:/data:ro", ctx.fixture_dir().display()));
                        args = run.sandbox.argv[1..].to_vec();
                    }
                    cmd.arg(&image)
                        .arg(format!("/guests/{}", workload.id))
                        .args(&args)
                        .stdin(Stdio::null());
                    let started = Instant::now();
                    let output = cmd.output()?;
                    let elapsed = started.elapsed().as_secs_f64();
                    let failure = check_output(
                        output.status.success(),
                        output.status,
                        &output.stdout,
                        &run.expected_stdout,
                    );
                    Ok(sample(&run, backend, i, elapsed, failure))
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SizeRow {
    pub workload: WorkloadId,
    pub wasm_bytes: u64,
    pub instrumented_bytes: u64,
    pub native_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SizesReport {
    pub rows: Vec<SizeRow>,
}

impl SizesReport {
    pub fn total_wasm_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.wasm_bytes).sum()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<16} {:>12} {:>18} {:>12}\n",
            "workload", "wasm_bytes", "instrumented_bytes", "native_bytes"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>12} {:>18} {:>12}",
                r.workload.as_str(),
                r.wasm_bytes,
                r.instrumented_bytes,
                r.native_bytes
            );
        }
        let _ = writeln!(
            out,
            "{:<16} {:>12} {:>18} {:>12}",
            "total",
            self.total_wasm_bytes(),
            self.rows.iter().map(|r| r.instrumented_bytes).sum::<u64>(),
            self.rows.iter().map(|r| r.native_bytes).sum::<u64>()
        );
        out
    }
}

/// Deploys every guest into a registry at `data_dir` and reports the stored
/// artifact sizes next to the native binary sizes.
pub fn sizes(guests: &GuestDir, data_dir: &Path) -> Result<SizesReport, BenchError> {
    let registry = Registry::open(data_dir)?;
    for w in WorkloadId::ALL {
        let bytes = guests.read_wasm(w.as_str())?;
        registry.deploy(w.as_str(), &bytes, ResourceLimits::default(), vec![])?;
    }
    let footprint = registry.footprint_report()?;
    let mut rows = Vec::new();
    for w in WorkloadId::ALL {
        let entry = footprint
            .iter()
            .find(|e| e.name == w.as_str())
            .expect("every guest was just deployed");
        rows.push(SizeRow {
            workload: w,
            wasm_bytes: entry.raw_size_bytes,
            instrumented_bytes: entry.instrumented_size_bytes,
            native_bytes: std::fs::metadata(guests.native(w.as_str())?)?.len(),
        });
    }
    Ok(SizesReport { rows })
}
