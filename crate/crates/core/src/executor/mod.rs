//! Sandboxed execution of instrumented modules.
//!
//! Every invocation gets a fresh store, linear memory and WASI context. Warm
//! invocations reuse a compiled module from an LRU pool keyed by content hash;
//! cold invocations validate, instrument and compile the raw module inside the
//! timed window.

mod pool;
mod types;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use wasmtime::{
    Config, Engine, Global, GlobalType, Linker, Module, Mutability, ResourceLimiter, Store,
    UpdateDeadline, Val, ValType,
};
use wasmtime_wasi::p1::WasiP1Ctx;
use wasmtime_wasi::p2::pipe::{MemoryInputPipe, MemoryOutputPipe};
use wasmtime_wasi::{FsPerms, I32Exit, WasiCtxBuilder};

use crate::wasm_tools::{
    self, ContentHash, FuelSchedule, ModuleArtifact, FUEL_GLOBAL_MODULE, FUEL_GLOBAL_NAME,
};

pub use pool::{PoolStats, DEFAULT_POOL_CAPACITY};
pub use types::{
    ExitClass, ExitStatus, InvocationResult, LimitsError, Preopen, ResourceLimits, SandboxError,
    SandboxSpec, StartMode, WASM_PAGE_SIZE,
};

use pool::ModulePool;

/// Upper bound on captured bytes per output stream.
const OUTPUT_CAPACITY: usize = 256 << 20;
const EPOCH_TICK: Duration = Duration::from_millis(1);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecutorError {
    #[error("engine rejected module: {0}")]
    EngineReject(String),
    #[error("artifact {0} has not been instrumented")]
    NotInstrumented(ContentHash),
    #[error("engine setup failed: {0}")]
    Setup(String),
}

/// An engine-ready module keyed by the content hash of its raw bytes.
#[derive(Clone)]
pub struct CompiledModule {
    key: ContentHash,
    module: Module,
}

impl CompiledModule {
    pub fn key(&self) -> &ContentHash {
        &self.key
    }
}

impl std::fmt::Debug for CompiledModule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledModule")
            .field("key", &self.key)
            .finish_non_exhaustive()
    }
}

struct MemoryGuard {
    limit_bytes: usize,
    peak_bytes: usize,
    exceeded: bool,
}

impl ResourceLimiter for MemoryGuard {
    fn memory_growing(
        &mut self,
        _current: usize,
        desired: usize,
        _maximum: Option<usize>,
    ) -> wasmtime::Result<bool> {
        if desired > self.limit_bytes {
            self.exceeded = true;
            wasmtime::bail!("linear memory limit of {} bytes exceeded", self.limit_bytes);
        }
        self.peak_bytes = self.peak_bytes.max(desired);
        Ok(true)
    }

    fn table_growing(
        &mut self,
        _current: usize,
        desired: usize,
        _maximum: Option<usize>,
    ) -> wasmtime::Result<bool> {
        Ok(desired <= 1 << 20)
    }
}

struct HostState {
    wasi: WasiP1Ctx,
    memory: MemoryGuard,
    deadline: Instant,
    timed_out: bool,
}

/// Drives the engine epoch so running guests observe wall-clock deadlines.
struct EpochTicker {
    stop: Arc<AtomicBool>,
}

impl EpochTicker {
    fn start(engine: &Engine) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let weak = engine.weak();
        let flag = stop.clone();
        std::thread::Builder::new()
            .name("wasmless-epoch".into())
            .spawn(move || {
                while !flag.load(Ordering::Relaxed) {
                    std::thread::sleep(EPOCH_TICK);
                    match weak.upgrade() {
                        Some(engine) => engine.increment_epoch(),
                        None => break,
                    }
                }
            })
            .expect("spawn epoch thread");
        EpochTicker { stop }
    }
}

impl Drop for EpochTicker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

pub struct Executor {
    engine: Engine,
    linker: Linker<HostState>,
    pool: Mutex<ModulePool>,
    schedule: FuelSchedule,
    _ticker: EpochTicker,
}

impl Executor {
    pub fn new(pool_capacity: usize) -> Result<Self, ExecutorError> {
        Self::with_schedule(pool_capacity, FuelSchedule::default())
    }

    /// `schedule` is the one cold starts instrument with; it must match the
    /// schedule that produced the artifacts passed in.
    pub fn with_schedule(
        pool_capacity: usize,
        schedule: FuelSchedule,
    ) -> Result<Self, ExecutorError> {
        let mut config = Config::new();
        config.epoch_interruption(true);
        let engine = Engine::new(&config).map_err(|e| ExecutorError::Setup(e.to_string()))?;
        let mut linker: Linker<HostState> = Linker::new(&engine);
        wasmtime_wasi::p1::add_to_linker_sync(&mut linker, |s: &mut HostState| &mut s.wasi)
            .map_err(|e| ExecutorError::Setup(e.to_string()))?;
        let ticker = EpochTicker::start(&engine);
        Ok(Executor {
            engine,
            linker,
            pool: Mutex::new(ModulePool::new(pool_capacity)),
            schedule,
            _ticker: ticker,
        })
    }

    /// Compiles the instrumented form of `artifact`. Does not touch the pool.
    pub fn compile(&self, artifact: &ModuleArtifact) -> Result<CompiledModule, ExecutorError> {
        if !artifact.is_instrumented() {
            return Err(ExecutorError::NotInstrumented(
                artifact.content_hash.clone(),
            ));
        }
        let module = Module::new(&self.engine, &artifact.instrumented_bytes)
            .map_err(|e| ExecutorError::EngineReject(format!("{e:#}")))?;
        Ok(CompiledModule {
            key: artifact.content_hash.clone(),
            module,
        })
    }

    /// Compiles the raw, uninstrumented bytes. Runs of the result report zero
    /// fuel; meant for comparing guest behaviour with and without metering.
    pub fn compile_unmetered(
        &self,
        artifact: &ModuleArtifact,
    ) -> Result<CompiledModule, ExecutorError> {
        let module = Module::new(&self.engine, &artifact.raw_bytes)
            .map_err(|e| ExecutorError::EngineReject(format!("{e:#}")))?;
        Ok(CompiledModule {
            key: artifact.content_hash.clone(),
            module,
        })
    }

    /// Full cold path: validate and instrument the raw bytes, then compile.
    fn compile_from_raw(&self, artifact: &ModuleArtifact) -> Result<CompiledModule, ExecutorError> {
        let prepared = wasm_tools::prepare(&artifact.raw_bytes, &self.schedule)
            .map_err(|e| ExecutorError::EngineReject(e.to_string()))?;
        self.compile(&prepared)
    }

    pub fn pool_stats(&self) -> PoolStats {
        self.pool.lock().unwrap().stats()
    }

    /// Runs `artifact` once.
    ///
    /// `Cold` validates, instruments and compiles inside the timed window and
    /// refreshes the pool entry without counting a hit or miss. `Warm` goes through the pool; a miss
    /// compiles and the result reports `StartMode::Cold`.
    pub fn execute(
        &self,
        artifact: &ModuleArtifact,
        spec: &SandboxSpec,
        limits: &ResourceLimits,
        mode: StartMode,
    ) -> Result<InvocationResult, ExecutorError> {
        let started = Instant::now();
        let (compiled, actual_mode) = match mode {
            StartMode::Cold => {
                let compiled = self.compile_from_raw(artifact)?;
                self.pool.lock().unwrap().insert(compiled.clone());
                (compiled, StartMode::Cold)
            }
            StartMode::Warm => {
                let cached = self.pool.lock().unwrap().get(&artifact.content_hash);
                match cached {
                    Some(compiled) => (compiled, StartMode::Warm),
                    None => {
                        let compiled = self.compile_from_raw(artifact)?;
                        self.pool.lock().unwrap().insert(compiled.clone());
                        (compiled, StartMode::Cold)
                    }
                }
            }
        };
        let compile_time = started.elapsed();
        Ok(self.run(&compiled, spec, limits, actual_mode, started, compile_time))
    }

    /// Runs an already compiled module in a fresh instance.
    pub fn execute_compiled(
        &self,
        compiled: &CompiledModule,
        spec: &SandboxSpec,
        limits: &ResourceLimits,
    ) -> InvocationResult {
        self.run(
            compiled,
            spec,
            limits,
            StartMode::Warm,
            Instant::now(),
            Duration::ZERO,
        )
    }

    fn run(
        &self,
        compiled: &CompiledModule,
        spec: &SandboxSpec,
        limits: &ResourceLimits,
        start_mode: StartMode,
        started: Instant,
        compile_time: Duration,
    ) -> InvocationResult {
        let stdout = MemoryOutputPipe::new(OUTPUT_CAPACITY);
        let stderr = MemoryOutputPipe::new(OUTPUT_CAPACITY);
        let fuel_start = limits.fuel_limit.min(i64::MAX as u64) as i64;

        let mut outcome = Outcome {
            status: ExitStatus::Exited(0),
            fuel_consumed: 0,
            memory_peak_pages: 0,
            setup: Duration::ZERO,
            exec: Duration::ZERO,
        };

        let setup_started = Instant::now();
        match self.instantiate(compiled, spec, limits, &stdout, &stderr, fuel_start) {
            Err(reason) => {
                outcome.status = ExitStatus::Trapped(reason);
                outcome.setup = compile_time + setup_started.elapsed();
            }
            Ok((mut store, fuel, instantiated)) => {
                match instantiated {
                    Err(e) => {
                        outcome.setup = compile_time + setup_started.elapsed();
                        outcome.status = classify_error(&mut store, &fuel, e);
                    }
                    Ok(instance) => {
                        outcome.setup = compile_time + setup_started.elapsed();
                        let exec_started = Instant::now();
                        let status = match instance.get_typed_func::<(), ()>(&mut store, "_start") {
                            Err(_) => ExitStatus::Trapped("module has no `_start` export".into()),
                            Ok(start) => match start.call(&mut store, ()) {
                                Ok(()) => ExitStatus::Exited(0),
                                Err(e) => classify_error(&mut store, &fuel, e),
                            },
                        };
                        outcome.exec = exec_started.elapsed();
                        outcome.status = status;
                    }
                }
                let remaining = fuel.get(&mut store).unwrap_i64();
                outcome.fuel_consumed = if remaining < 0 {
                    limits.fuel_limit
                } else {
                    (fuel_start - remaining) as u64
                };
                if matches!(outcome.status, ExitStatus::FuelExhausted) {
                    outcome.fuel_consumed = limits.fuel_limit;
                }
                outcome.memory_peak_pages =
                    (store.data().memory.peak_bytes / WASM_PAGE_SIZE as usize) as u32;
            }
        }

        let total = started.elapsed();
        InvocationResult {
            exit_status: outcome.status,
            stdout: stdout.contents().to_vec(),
            stderr: stderr.contents().to_vec(),
            t_setup_us: outcome.setup.as_micros() as u64,
            t_exec_us: outcome.exec.as_micros() as u64,
            t_total_us: total.as_micros() as u64,
            fuel_consumed: outcome.fuel_consumed,
            memory_peak_pages: outcome.memory_peak_pages,
            start_mode,
        }
    }

    #[allow(clippy::type_complexity)]
    fn instantiate(
        &self,
        compiled: &CompiledModule,
        spec: &SandboxSpec,
        limits: &ResourceLimits,
        stdout: &MemoryOutputPipe,
        stderr: &MemoryOutputPipe,
        fuel_start: i64,
    ) -> Result<
        (
            Store<HostState>,
            Global,
            wasmtime::Result<wasmtime::Instance>,
        ),
        String,
    > {
        let mut builder = WasiCtxBuilder::new();
        builder
            .args(&spec.argv)
            .stdin(MemoryInputPipe::new(spec.stdin_bytes.clone()))
            .stdout(stdout.clone())
            .stderr(stderr.clone());
        for (k, v) in &spec.env {
            builder.env(k, v);
        }
        for preopen in &spec.preopens {
            builder
                .preopened_dir(&preopen.host_dir, &preopen.guest_path, FsPerms::ReadWrite)
                .map_err(|e| {
                    format!(
                        "cannot preopen {} at {}: {e}",
                        preopen.host_dir.display(),
                        preopen.guest_path
                    )
                })?;
        }

        let state = HostState {
            wasi: builder.build_p1(),
            memory: MemoryGuard {
                limit_bytes: limits.memory_limit_bytes(),
                peak_bytes: 0,
                exceeded: false,
            },
            deadline: Instant::now() + Duration::from_millis(limits.wall_timeout_ms),
            timed_out: false,
        };
        let mut store = Store::new(&self.engine, state);
        store.limiter(|s| &mut s.memory);
        store.set_epoch_deadline(1);
        store.epoch_deadline_callback(|mut ctx| {
            let state = ctx.data_mut();
            if Instant::now() >= state.deadline {
                state.timed_out = true;
                Ok(UpdateDeadline::Interrupt)
            } else {
                Ok(UpdateDeadline::Continue(1))
            }
        });

        let fuel = Global::new(
            &mut store,
            GlobalType::new(ValType::I64, Mutability::Var),
            Val::I64(fuel_start),
        )
        .map_err(|e| e.to_string())?;
        let mut linker = self.linker.clone();
        linker
            .define(&store, FUEL_GLOBAL_MODULE, FUEL_GLOBAL_NAME, fuel)
            .map_err(|e| e.to_string())?;
        let instance = linker.instantiate(&mut store, &compiled.module);
        Ok((store, fuel, instance))
    }
}

struct Outcome {
    status: ExitStatus,
    fuel_consumed: u64,
    memory_peak_pages: u32,
    setup: Duration,
    exec: Duration,
}

fn classify_error(store: &mut Store<HostState>, fuel: &Global, e: wasmtime::Error) -> ExitStatus {
    if let Some(exit) = e.downcast_ref::<I32Exit>() {
        return ExitStatus::Exited(exit.0);
    }
    if fuel.get(&mut *store).unwrap_i64() < 0 {
        return ExitStatus::FuelExhausted;
    }
    let state = store.data();
    if state.memory.exceeded {
        return ExitStatus::MemoryExceeded;
    }
    if state.timed_out {
        return ExitStatus::Timeout;
    }
    ExitStatus::Trapped(format!("{e:#}"))
}
