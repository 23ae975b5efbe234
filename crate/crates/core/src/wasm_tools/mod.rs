//! Validation and fuel instrumentation of WebAssembly binaries.
//!
//! [`validate`] checks that a byte sequence is a core WebAssembly module using
//! only the supported instruction set, and produces a [`ModuleArtifact`]
//! carrying its content hash and static instruction count. [`instrument`]
//! rewrites the module so that every straight-line segment of code charges its
//! schedule-weighted cost against a 64-bit fuel global before it runs.

mod instrument;
mod opcodes;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wasmparser::{Parser, Payload, Validator, WasmFeatures};

pub use instrument::{instrument, FUEL_GLOBAL_MODULE, FUEL_GLOBAL_NAME};
pub use opcodes::{classify, is_segment_delimiter, Proposal};

const WASM_MAGIC: &[u8; 4] = b"\0asm";
const WASM_VERSION: [u8; 4] = [1, 0, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModuleError {
    #[error("not a WebAssembly module: {0}")]
    NotWasm(String),
    #[error("malformed module: {0}")]
    MalformedModule(String),
    #[error("unsupported instruction `{mnemonic}` (opcode {opcode}, {proposal} proposal) at offset {offset:#x}")]
    UnsupportedFeature {
        mnemonic: String,
        opcode: String,
        proposal: String,
        offset: usize,
    },
    #[error("segment cost {cost} in function {function} exceeds 2^32")]
    TransformOverflow { function: u32, cost: u64 },
    #[error("invalid fuel schedule: {0}")]
    InvalidSchedule(String),
}

/// Hex-encoded SHA-256 digest of a raw module.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentHash(String);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(hex::encode(Sha256::digest(bytes)))
    }

    /// Accepts a 64-character lowercase hex string.
    pub fn parse(s: &str) -> Option<Self> {
        let ok = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        ok.then(|| ContentHash(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A validated module, optionally carrying its instrumented form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleArtifact {
    pub raw_bytes: Vec<u8>,
    /// Empty until [`instrument`] has run.
    pub instrumented_bytes: Vec<u8>,
    pub content_hash: ContentHash,
    /// Total instructions across all function bodies, `end` included.
    pub instruction_count_static: u64,
}

impl ModuleArtifact {
    pub fn is_instrumented(&self) -> bool {
        !self.instrumented_bytes.is_empty()
    }
}

/// Per-instruction fuel costs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuelSchedule {
    default_cost: u64,
    #[serde(default)]
    overrides: BTreeMap<String, u64>,
}

impl Default for FuelSchedule {
    fn default() -> Self {
        FuelSchedule {
            default_cost: 1,
            overrides: BTreeMap::new(),
        }
    }
}

impl FuelSchedule {
    /// Builds a schedule. Override keys are text-format mnemonics such as
    /// `i64.mul` or `memory.grow`; unknown or unsupported names are rejected.
    pub fn new(default_cost: u64, overrides: BTreeMap<String, u64>) -> Result<Self, ModuleError> {
        if default_cost == 0 {
            return Err(ModuleError::InvalidSchedule(
                "default_cost must be positive".into(),
            ));
        }
        if let Some(bad) = overrides
            .keys()
            .find(|k| !opcodes::is_supported_mnemonic(k))
        {
            return Err(ModuleError::InvalidSchedule(format!(
                "unknown instruction class `{bad}`"
            )));
        }
        Ok(FuelSchedule {
            default_cost,
            overrides,
        })
    }

    pub fn default_cost(&self) -> u64 {
        self.default_cost
    }

    pub fn overrides(&self) -> &BTreeMap<String, u64> {
        &self.overrides
    }

    pub fn cost_of(&self, mnemonic: &str) -> u64 {
        self.overrides
            .get(mnemonic)
            .copied()
            .unwrap_or(self.default_cost)
    }
}

fn features() -> WasmFeatures {
    // Reference types stays on so that the overlong `call_indirect` table
    // immediate emitted by current toolchains validates; the instructions of
    // that proposal are still rejected by the opcode scan.
    WasmFeatures::MUTABLE_GLOBAL
        | WasmFeatures::SATURATING_FLOAT_TO_INT
        | WasmFeatures::SIGN_EXTENSION
        | WasmFeatures::MULTI_VALUE
        | WasmFeatures::BULK_MEMORY
        | WasmFeatures::REFERENCE_TYPES
        | WasmFeatures::FLOATS
}

fn check_header(bytes: &[u8]) -> Result<(), ModuleError> {
    if bytes.len() < 8 || &bytes[..4] != WASM_MAGIC {
        return Err(ModuleError::NotWasm("missing `\\0asm` magic".into()));
    }
    if bytes[4..8] != WASM_VERSION {
        return Err(ModuleError::NotWasm(format!(
            "unsupported binary version {:02x?}",
            &bytes[4..8]
        )));
    }
    Ok(())
}

fn malformed(e: impl fmt::Display) -> ModuleError {
    ModuleError::MalformedModule(e.to_string())
}

/// Counts instructions across all function bodies, rejecting any outside the
/// supported set. Does not type-check.
pub fn count_instructions(bytes: &[u8]) -> Result<u64, ModuleError> {
    check_header(bytes)?;
    let mut instruction_count = 0u64;
    for payload in Parser::new(0).parse_all(bytes) {
        let payload = payload.map_err(malformed)?;
        if let Payload::CodeSectionEntry(body) = payload {
            let mut reader = body.get_operators_reader().map_err(malformed)?;
            while !reader.eof() {
                let (op, offset) = reader.read_with_offset().map_err(malformed)?;
                let offset = offset as usize;
                let (mnemonic, proposal) = classify(&op);
                if let Proposal::Other(name) = proposal {
                    return Err(ModuleError::UnsupportedFeature {
                        mnemonic: mnemonic.to_owned(),
                        opcode: opcodes::opcode_at(bytes, offset),
                        proposal: name.replace('_', "-"),
                        offset,
                    });
                }
                instruction_count += 1;
            }
        }
    }
    Ok(instruction_count)
}

/// Validates `bytes` and returns an uninstrumented artifact.
pub fn validate(bytes: &[u8]) -> Result<ModuleArtifact, ModuleError> {
    let instruction_count_static = count_instructions(bytes)?;
    Validator::new_with_features(features())
        .validate_all(bytes)
        .map_err(malformed)?;

    Ok(ModuleArtifact {
        raw_bytes: bytes.to_vec(),
        instrumented_bytes: Vec::new(),
        content_hash: ContentHash::of(bytes),
        instruction_count_static,
    })
}

/// Validates and instruments in one step.
pub fn prepare(bytes: &[u8], schedule: &FuelSchedule) -> Result<ModuleArtifact, ModuleError> {
    instrument(&validate(bytes)?, schedule)
}

/// Checks that `bytes` is a valid module for the instrumented feature set.
pub(crate) fn validate_instrumented(bytes: &[u8]) -> Result<(), ModuleError> {
    Validator::new_with_features(features())
        .validate_all(bytes)
        .map(|_| ())
        .map_err(malformed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wasm_encoder::{
        CodeSection, ExportKind, ExportSection, Function, FunctionSection, Instruction, Module,
        TypeSection,
    };

    const EMPTY: &[u8] = b"\0asm\x01\0\0\0";

    fn single_body(body: &[Instruction<'_>]) -> Vec<u8> {
        let mut module = Module::new();
        let mut types = TypeSection::new();
        types.ty().function([], []);
        module.section(&types);
        let mut funcs = FunctionSection::new();
        funcs.function(0);
        module.section(&funcs);
        let mut exports = ExportSection::new();
        exports.export("run", ExportKind::Func, 0);
        module.section(&exports);
        let mut code = CodeSection::new();
        let mut f = Function::new([]);
        for i in body {
            f.instruction(i);
        }
        code.function(&f);
        module.section(&code);
        module.finish()
    }

    #[test]
    fn empty_module_is_valid() {
        let a = validate(EMPTY).unwrap();
        assert_eq!(a.instruction_count_static, 0);
        assert!(a.instrumented_bytes.is_empty());
        assert_eq!(a.content_hash, ContentHash::of(EMPTY));
    }

    #[test]
    fn rejects_non_wasm() {
        assert!(matches!(validate(b"hello"), Err(ModuleError::NotWasm(_))));
        assert!(matches!(
            validate(b"\0asm\x02\0\0\0"),
            Err(ModuleError::NotWasm(_))
        ));
        assert!(matches!(validate(b""), Err(ModuleError::NotWasm(_))));
    }

    #[test]
    fn rejects_truncated_section() {
        let mut bytes = EMPTY.to_vec();
        bytes.extend_from_slice(&[0x01, 0x05, 0x01]);
        assert!(matches!(
            validate(&bytes),
            Err(ModuleError::MalformedModule(_))
        ));
    }

    #[test]
    fn rejects_type_errors() {
        let bytes = single_body(&[Instruction::I32Add, Instruction::End]);
        assert!(matches!(
            validate(&bytes),
            Err(ModuleError::MalformedModule(_))
        ));
    }

    #[test]
    fn counts_straight_line_body() {
        let bytes = single_body(&[
            Instruction::I32Const(1),
            Instruction::I32Const(2),
            Instruction::I32Add,
            Instruction::Drop,
            Instruction::End,
        ]);
        assert_eq!(validate(&bytes).unwrap().instruction_count_static, 5);
    }

    #[test]
    fn reports_simd_opcode() {
        let bytes = single_body(&[
            Instruction::V128Const(0),
            Instruction::Drop,
            Instruction::End,
        ]);
        match validate(&bytes) {
            Err(ModuleError::UnsupportedFeature {
                mnemonic, opcode, ..
            }) => {
                assert_eq!(mnemonic, "v128.const");
                assert_eq!(opcode, "0xfd 12");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_reference_type_instruction() {
        let bytes = single_body(&[
            Instruction::RefNull(wasm_encoder::HeapType::FUNC),
            Instruction::RefIsNull,
            Instruction::Drop,
            Instruction::End,
        ]);
        assert!(matches!(
            validate(&bytes),
            Err(ModuleError::UnsupportedFeature { .. })
        ));
    }

    #[test]
    fn validation_is_idempotent() {
        let bytes = single_body(&[Instruction::Nop, Instruction::End]);
        assert_eq!(validate(&bytes).unwrap(), validate(&bytes).unwrap());
    }

    #[test]
    fn schedule_rules() {
        let s = FuelSchedule::new(2, [("i64.mul".to_string(), 7)].into()).unwrap();
        assert_eq!(s.cost_of("i64.mul"), 7);
        assert_eq!(s.cost_of("i32.add"), 2);
        assert!(FuelSchedule::new(0, BTreeMap::new()).is_err());
        assert!(FuelSchedule::new(1, [("nope".to_string(), 1)].into()).is_err());
        assert!(FuelSchedule::new(1, [("v128.const".to_string(), 1)].into()).is_err());
    }

    #[test]
    fn content_hash_parse() {
        let h = ContentHash::of(b"x");
        assert_eq!(ContentHash::parse(h.as_str()), Some(h));
        assert_eq!(ContentHash::parse("abc"), None);
    }
}
