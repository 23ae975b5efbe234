//! Gateway configuration: a TOML file whose keys are the field names of
//! [`GatewayConfig`], overridable per field through `WASMLESS_*` variables.
//! Nested fields join their path with `_`, e.g.
//! `WASMLESS_DEFAULT_LIMITS_FUEL_LIMIT` or `WASMLESS_PRICING_FUEL_RATE`.

use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wasmless::executor::{ResourceLimits, DEFAULT_POOL_CAPACITY};
use wasmless::metering::PricingPolicy;

pub const ENV_PREFIX: &str = "WASMLESS_";

#[derive(Debug, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigInvalid(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen_addr: String,
    pub data_dir: PathBuf,
    pub default_limits: ResourceLimits,
    pub pool_capacity: usize,
    pub pricing: PricingPolicy,
    pub fsync_ledger: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen_addr: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("wasmless-data"),
            default_limits: ResourceLimits::default(),
            pool_capacity: DEFAULT_POOL_CAPACITY,
            pricing: PricingPolicy::default(),
            fsync_ledger: true,
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Text,
    Integer,
    Bool,
}

/// Every overridable field: its TOML path and how to read the env value.
const FIELDS: &[(&[&str], Kind)] = &[
    (&["listen_addr"], Kind::Text),
    (&["data_dir"], Kind::Text),
    (&["default_limits", "fuel_limit"], Kind::Integer),
    (&["default_limits", "memory_limit_pages"], Kind::Integer),
    (&["default_limits", "wall_timeout_ms"], Kind::Integer),
    (&["pool_capacity"], Kind::Integer),
    (&["pricing", "version"], Kind::Integer),
    (&["pricing", "fuel_rate"], Kind::Text),
    (&["pricing", "time_rate"], Kind::Text),
    (&["pricing", "memory_rate"], Kind::Text),
    (&["fsync_ledger"], Kind::Bool),
];

pub fn env_var_name(path: &[&str]) -> String {
    format!("{ENV_PREFIX}{}", path.join("_").to_uppercase())
}

impl GatewayConfig {
    /// Reads `file` (if given), applies overrides from `env` and validates.
    pub fn load<I>(file: Option<&Path>, env: I) -> Result<Self, ConfigInvalid>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| ConfigInvalid(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigInvalid(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        let env: Vec<(String, String)> = env.into_iter().collect();
        for (path, kind) in FIELDS {
            let name = env_var_name(path);
            let Some((_, raw)) = env.iter().rev().find(|(k, _)| *k == name) else {
                continue;
            };
            let value = match kind {
                Kind::Text => toml::Value::String(raw.clone()),
                Kind::Integer => toml::Value::Integer(
                    raw.trim()
                        .parse()
                        .map_err(|_| ConfigInvalid(format!("{name}: `{raw}` is not an integer")))?,
                ),
                Kind::Bool => {
                    toml::Value::Boolean(match raw.trim().to_ascii_lowercase().as_str() {
                        "1" | "true" | "yes" | "on" => true,
                        "0" | "false" | "no" | "off" => false,
                        _ => {
                            return Err(ConfigInvalid(format!("{name}: `{raw}` is not a boolean")))
                        }
                    })
                }
            };
            set_path(&mut table, path, value)?;
        }
        let config: GatewayConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigInvalid(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Reads `file` and the process environment.
    pub fn from_env(file: Option<&Path>) -> Result<Self, ConfigInvalid> {
        Self::load(file, std::env::vars())
    }

    pub fn check(&self) -> Result<(), ConfigInvalid> {
        self.socket_addr()?;
        if self.pool_capacity == 0 {
            return Err(ConfigInvalid("pool_capacity must be positive".into()));
        }
        self.default_limits
            .check()
            .map_err(|e| ConfigInvalid(format!("default_limits: {e}")))?;
        Ok(())
    }

    pub fn socket_addr(&self) -> Result<SocketAddr, ConfigInvalid> {
        self.listen_addr
            .to_socket_addrs()
            .ok()
            .and_then(|mut addrs| addrs.next())
            .ok_or_else(|| {
                ConfigInvalid(format!(
                    "listen_addr `{}` is not host:port",
                    self.listen_addr
                ))
            })
    }

    /// Creates `data_dir` if needed and checks that it is writable.
    pub fn prepare_data_dir(&self) -> Result<(), ConfigInvalid> {
        let fail =
            |e: std::io::Error| ConfigInvalid(format!("data_dir {}: {e}", self.data_dir.display()));
        fs::create_dir_all(&self.data_dir).map_err(fail)?;
        let probe = self.data_dir.join(".write-probe");
        fs::write(&probe, b"").map_err(fail)?;
        fs::remove_file(&probe).map_err(fail)?;
        Ok(())
    }
}

fn set_path(
    table: &mut toml::Table,
    path: &[&str],
    value: toml::Value,
) -> Result<(), ConfigInvalid> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut current = table;
    for key in parents {
        let entry = current
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| ConfigInvalid(format!("`{key}` must be a table")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}
