use std::collections::BTreeMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const WASM_PAGE_SIZE: u64 = 64 * 1024;
const MAX_WALL_TIMEOUT_MS: u64 = 3_600_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LimitsError {
    #[error("{0} must be strictly positive")]
    NotPositive(&'static str),
    #[error("wall_timeout_ms {0} exceeds {MAX_WALL_TIMEOUT_MS}")]
    TimeoutTooLong(u64),
}

/// Caps enforced on every invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceLimits {
    pub fuel_limit: u64,
    /// In 64 KiB pages.
    pub memory_limit_pages: u32,
    pub wall_timeout_ms: u64,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        ResourceLimits {
            fuel_limit: 10_000_000_000,
            memory_limit_pages: 16_384,
            wall_timeout_ms: 60_000,
        }
    }
}

impl ResourceLimits {
    pub fn new(
        fuel_limit: u64,
        memory_limit_pages: u32,
        wall_timeout_ms: u64,
    ) -> Result<Self, LimitsError> {
        let limits = ResourceLimits {
            fuel_limit,
            memory_limit_pages,
            wall_timeout_ms,
        };
        limits.check()?;
        Ok(limits)
    }

    pub fn check(&self) -> Result<(), LimitsError> {
        if self.fuel_limit == 0 {
            return Err(LimitsError::NotPositive("fuel_limit"));
        }
        if self.memory_limit_pages == 0 {
            return Err(LimitsError::NotPositive("memory_limit_pages"));
        }
        if self.wall_timeout_ms == 0 {
            return Err(LimitsError::NotPositive("wall_timeout_ms"));
        }
        if self.wall_timeout_ms > MAX_WALL_TIMEOUT_MS {
            return Err(LimitsError::TimeoutTooLong(self.wall_timeout_ms));
        }
        Ok(())
    }

    pub fn memory_limit_bytes(&self) -> usize {
        (u64::from(self.memory_limit_pages) * WASM_PAGE_SIZE) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SandboxError {
    #[error("guest path `{0}` must be absolute and normalized")]
    GuestPathNotAbsolute(String),
    #[error("guest paths `{0}` and `{1}` overlap")]
    NestedGuestPaths(String, String),
    #[error("host directory `{0}` does not exist")]
    HostDirMissing(PathBuf),
}

/// A host directory granted to the guest at a fixed path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preopen {
    pub host_dir: PathBuf,
    pub guest_path: String,
}

impl Preopen {
    pub fn new(host_dir: impl Into<PathBuf>, guest_path: impl Into<String>) -> Self {
        Preopen {
            host_dir: host_dir.into(),
            guest_path: guest_path.into(),
        }
    }

    /// Checks that every host directory exists, every guest path is
    /// absolute and that no two guest paths nest.
    pub fn check_all(preopens: &[Preopen]) -> Result<(), SandboxError> {
        let mut paths = Vec::with_capacity(preopens.len());
        for p in preopens {
            if !p.host_dir.is_dir() {
                return Err(SandboxError::HostDirMissing(p.host_dir.clone()));
            }
            let path = Path::new(&p.guest_path);
            let normal = path.is_absolute()
                && path
                    .components()
                    .all(|c| matches!(c, Component::RootDir | Component::Normal(_)));
            if !normal {
                return Err(SandboxError::GuestPathNotAbsolute(p.guest_path.clone()));
            }
            paths.push(path);
        }
        for (i, a) in paths.iter().enumerate() {
            for b in &paths[i + 1..] {
                if a.starts_with(b) || b.starts_with(a) {
                    return Err(SandboxError::NestedGuestPaths(
                        a.display().to_string(),
                        b.display().to_string(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Everything the guest can see: argv, environment, stdin and preopens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SandboxSpec {
    /// `argv[0]` is the function name.
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub stdin_bytes: Vec<u8>,
    pub preopens: Vec<Preopen>,
}

impl SandboxSpec {
    pub fn new<I, S>(argv: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SandboxSpec {
            argv: argv.into_iter().map(Into::into).collect(),
            ..SandboxSpec::default()
        }
    }

    pub fn with_stdin(mut self, bytes: impl Into<Vec<u8>>) -> Self {
        self.stdin_bytes = bytes.into();
        self
    }

    pub fn with_preopen(mut self, preopen: Preopen) -> Self {
        self.preopens.push(preopen);
        self
    }

    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.insert(key.into(), value.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartMode {
    Cold,
    Warm,
}

impl std::str::FromStr for StartMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cold" => Ok(StartMode::Cold),
            "warm" => Ok(StartMode::Warm),
            other => Err(format!("unknown start mode `{other}`")),
        }
    }
}

impl fmt::Display for StartMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StartMode::Cold => "cold",
            StartMode::Warm => "warm",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Exited(i32),
    Trapped(String),
    FuelExhausted,
    Timeout,
    MemoryExceeded,
}

/// Coarse outcome used for billing and the `X-Exit-Class` header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitClass {
    Ok,
    Trap,
    FuelExhausted,
    Timeout,
    MemoryExceeded,
}

impl ExitClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitClass::Ok => "ok",
            ExitClass::Trap => "trap",
            ExitClass::FuelExhausted => "fuel_exhausted",
            ExitClass::Timeout => "timeout",
            ExitClass::MemoryExceeded => "memory_exceeded",
        }
    }
}

impl fmt::Display for ExitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ExitStatus {
    /// A non-zero exit code counts as `trap`.
    pub fn class(&self) -> ExitClass {
        match self {
            ExitStatus::Exited(0) => ExitClass::Ok,
            ExitStatus::Exited(_) | ExitStatus::Trapped(_) => ExitClass::Trap,
            ExitStatus::FuelExhausted => ExitClass::FuelExhausted,
            ExitStatus::Timeout => ExitClass::Timeout,
            ExitStatus::MemoryExceeded => ExitClass::MemoryExceeded,
        }
    }

    pub fn exit_code(&self) -> Option<i32> {
        match self {
            ExitStatus::Exited(code) => Some(*code),
            _ => None,
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitStatus::Exited(code) => write!(f, "exited({code})"),
            ExitStatus::Trapped(reason) => write!(f, "trapped: {reason}"),
            ExitStatus::FuelExhausted => f.write_str("fuel exhausted"),
            ExitStatus::Timeout => f.write_str("timeout"),
            ExitStatus::MemoryExceeded => f.write_str("memory exceeded"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvocationResult {
    pub exit_status: ExitStatus,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    /// Compile (cold only) plus instantiation.
    pub t_setup_us: u64,
    /// Time spent inside `_start`.
    pub t_exec_us: u64,
    /// One monotonic bracket around the whole invocation.
    pub t_total_us: u64,
    pub fuel_consumed: u64,
    pub memory_peak_pages: u32,
    pub start_mode: StartMode,
}
