//! Content-addressed, disk-backed store of deployed functions.
//!
//! Layout under the data directory:
//!
//! ```text
//! artifacts/<hash>.wasm        raw module as uploaded
//! artifacts/<hash>.instr.wasm  fuel-instrumented module
//! manifests/<name>.json        one FunctionManifest per function
//! ```
//!
//! Every file is written to a temporary sibling, synced and renamed into
//! place, so readers only ever observe complete documents.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::executor::{LimitsError, Preopen, ResourceLimits, SandboxError};
use crate::wasm_tools::{self, ContentHash, FuelSchedule, ModuleArtifact, ModuleError};

const MAX_NAME_LEN: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid function name `{0}`: expected [a-z0-9-]{{1,64}}")]
    NameInvalid(String),
    #[error(transparent)]
    Module(#[from] ModuleError),
    #[error(transparent)]
    Limits(#[from] LimitsError),
    #[error(transparent)]
    Preopen(#[from] SandboxError),
    #[error("function `{0}` not found")]
    NotFound(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl From<io::Error> for RegistryError {
    fn from(e: io::Error) -> Self {
        RegistryError::StorageFailure(e.to_string())
    }
}

/// The deployment unit: everything needed to run a function.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionManifest {
    pub name: String,
    pub content_hash: ContentHash,
    pub limits: ResourceLimits,
    pub preopens: Vec<Preopen>,
    pub created_at: DateTime<Utc>,
    pub raw_size_bytes: u64,
    pub instrumented_size_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FootprintEntry {
    pub name: String,
    pub raw_size_bytes: u64,
    pub instrumented_size_bytes: u64,
}

pub fn is_valid_name(name: &str) -> bool {
    (1..=MAX_NAME_LEN).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

pub struct Registry {
    root: PathBuf,
    schedule: FuelSchedule,
    writes: Mutex<()>,
}

impl Registry {
    /// Opens (creating if needed) a registry rooted at `data_dir`.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        Self::with_schedule(data_dir, FuelSchedule::default())
    }

    pub fn with_schedule(
        data_dir: impl Into<PathBuf>,
        schedule: FuelSchedule,
    ) -> Result<Self, RegistryError> {
        let root = data_dir.into();
        fs::create_dir_all(root.join("artifacts"))?;
        fs::create_dir_all(root.join("manifests"))?;
        Ok(Registry {
            root,
            schedule,
            writes: Mutex::new(()),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.root
    }

    pub fn schedule(&self) -> &FuelSchedule {
        &self.schedule
    }

    fn raw_path(&self, hash: &ContentHash) -> PathBuf {
        self.root.join("artifacts").join(format!("{hash}.wasm"))
    }

    fn instrumented_path(&self, hash: &ContentHash) -> PathBuf {
        self.root
            .join("artifacts")
            .join(format!("{hash}.instr.wasm"))
    }

    fn manifest_path(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.json"))
    }

    /// Validates, instruments and durably stores a function. Redeploying an
    /// existing name replaces it.
    pub fn deploy(
        &self,
        name: &str,
        wasm_bytes: &[u8],
        limits: ResourceLimits,
        preopens: Vec<Preopen>,
    ) -> Result<FunctionManifest, RegistryError> {
        if !is_valid_name(name) {
            return Err(RegistryError::NameInvalid(name.to_owned()));
        }
        if wasm_bytes.is_empty() {
            return Err(ModuleError::NotWasm("empty upload".into()).into());
        }
        limits.check()?;
        Preopen::check_all(&preopens)?;
        let artifact = wasm_tools::prepare(wasm_bytes, &self.schedule)?;
        let hash = artifact.content_hash.clone();

        let _guard = self.writes.lock().unwrap();
        let raw_path = self.raw_path(&hash);
        let instr_path = self.instrumented_path(&hash);
        write_atomic(&raw_path, &artifact.raw_bytes)?;
        write_atomic(&instr_path, &artifact.instrumented_bytes)?;

        let manifest = FunctionManifest {
            name: name.to_owned(),
            content_hash: hash,
            limits,
            preopens,
            created_at: Utc::now(),
            raw_size_bytes: fs::metadata(&raw_path)?.len(),
            instrumented_size_bytes: fs::metadata(&instr_path)?.len(),
        };
        let previous = self.read_manifest(name).ok();
        let json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| RegistryError::StorageFailure(e.to_string()))?;
        write_atomic(&self.manifest_path(name), &json)?;

        if let Some(old) = previous {
            if old.content_hash != manifest.content_hash {
                self.collect_unreferenced(&old.content_hash)?;
            }
        }
        Ok(manifest)
    }

    fn read_manifest(&self, name: &str) -> Result<FunctionManifest, RegistryError> {
        let bytes = match fs::read(self.manifest_path(name)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(RegistryError::NotFound(name.to_owned()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map_err(|e| {
            RegistryError::StorageFailure(format!("corrupt manifest for `{name}`: {e}"))
        })
    }

    pub fn lookup(&self, name: &str) -> Result<FunctionManifest, RegistryError> {
        if !is_valid_name(name) {
            return Err(RegistryError::NotFound(name.to_owned()));
        }
        self.read_manifest(name)
    }

    /// All manifests, sorted by name.
    pub fn list(&self) -> Result<Vec<FunctionManifest>, RegistryError> {
        let mut names = Vec::new();
        for entry in fs::read_dir(self.root.join("manifests"))? {
            let file_name = entry?.file_name();
            let Some(file_name) = file_name.to_str() else {
                continue;
            };
            if let Some(name) = file_name.strip_suffix(".json") {
                if is_valid_name(name) {
                    names.push(name.to_owned());
                }
            }
        }
        names.sort();
        let mut manifests = Vec::with_capacity(names.len());
        for name in names {
            match self.read_manifest(&name) {
                Ok(m) => manifests.push(m),
                // removed concurrently
                Err(RegistryError::NotFound(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(manifests)
    }

    /// Deletes the manifest and, once no other function uses them, the
    /// artifacts.
    pub fn remove(&self, name: &str) -> Result<(), RegistryError> {
        let _guard = self.writes.lock().unwrap();
        let manifest = self.lookup(name)?;
        fs::remove_file(self.manifest_path(name))?;
        sync_dir(&self.root.join("manifests"))?;
        self.collect_unreferenced(&manifest.content_hash)
    }

    fn collect_unreferenced(&self, hash: &ContentHash) -> Result<(), RegistryError> {
        if self.list()?.iter().any(|m| &m.content_hash == hash) {
            return Ok(());
        }
        for path in [self.raw_path(hash), self.instrumented_path(hash)] {
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        sync_dir(&self.root.join("artifacts"))?;
        Ok(())
    }

    /// Reads the stored raw and instrumented bytes for `manifest`.
    pub fn load_artifact(
        &self,
        manifest: &FunctionManifest,
    ) -> Result<ModuleArtifact, RegistryError> {
        let raw_bytes = fs::read(self.raw_path(&manifest.content_hash))?;
        let instrumented_bytes = fs::read(self.instrumented_path(&manifest.content_hash))?;
        let instruction_count_static = wasm_tools::count_instructions(&raw_bytes)?;
        Ok(ModuleArtifact {
            raw_bytes,
            instrumented_bytes,
            content_hash: manifest.content_hash.clone(),
            instruction_count_static,
        })
    }

    /// Per-function artifact sizes as found on disk, sorted by name.
    pub fn footprint_report(&self) -> Result<Vec<FootprintEntry>, RegistryError> {
        self.list()?
            .into_iter()
            .map(|m| {
                Ok(FootprintEntry {
                    raw_size_bytes: fs::metadata(self.raw_path(&m.content_hash))?.len(),
                    instrumented_size_bytes: fs::metadata(self.instrumented_path(&m.content_hash))?
                        .len(),
                    name: m.name,
                })
            })
            .collect()
    }

    /// Paths of the stored artifact pair for `hash`.
    pub fn artifact_paths(&self, hash: &ContentHash) -> (PathBuf, PathBuf) {
        (self.raw_path(hash), self.instrumented_path(hash))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("registry paths have a parent");
    let tmp = dir.join(format!(
        ".{}.{:016x}.tmp",
        path.file_name().unwrap().to_string_lossy(),
        rand::random::<u64>()
    ));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        sync_dir(dir)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}
