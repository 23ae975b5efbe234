//! Segment-level fuel injection.
//!
//! The rewritten module imports a mutable `i64` global,
//! `metering.__fuel_remaining`, appended after any existing imports. Defined
//! globals shift up by one index. Each function body is cut into segments:
//! a segment runs up to and including the next control instruction (`block`,
//! `loop`, `if`, `else`, `end`, `br`, `br_if`, `br_table`, `return`, `call`,
//! `call_indirect`, `unreachable`). Every entry into a segment, whether by
//! falling through or by branching, lands on its first instruction, so
//! prefixing each segment with
//!
//! ```text
//! global.get $fuel  i64.const cost  i64.sub  global.set $fuel
//! global.get $fuel  i64.const 0  i64.lt_s  if  unreachable  end
//! ```
//!
//! charges exactly the schedule-weighted count of retired instructions on any
//! complete execution. A negative fuel value after a trap identifies
//! exhaustion.

use wasm_encoder::reencode::{self, Reencode};
use wasm_encoder::{BlockType, CodeSection, Function, Instruction, SectionId};
use wasmparser::{Operator, Parser, Payload, TypeRef};

use super::opcodes::{classify, is_segment_delimiter};
use super::{malformed, FuelSchedule, ModuleArtifact, ModuleError};

pub const FUEL_GLOBAL_MODULE: &str = "metering";
pub const FUEL_GLOBAL_NAME: &str = "__fuel_remaining";

const MAX_SEGMENT_COST: u64 = 1 << 32;

fn fuel_global_type() -> wasm_encoder::GlobalType {
    wasm_encoder::GlobalType {
        val_type: wasm_encoder::ValType::I64,
        mutable: true,
        shared: false,
    }
}

struct FuelInjector<'s> {
    schedule: &'s FuelSchedule,
    imported_globals: u32,
    import_emitted: bool,
    function_index: u32,
}

impl FuelInjector<'_> {
    fn fuel_global(&self) -> u32 {
        self.imported_globals
    }

    fn emit_charge(&self, f: &mut Function, cost: u64) {
        let g = self.fuel_global();
        f.instruction(&Instruction::GlobalGet(g))
            .instruction(&Instruction::I64Const(cost as i64))
            .instruction(&Instruction::I64Sub)
            .instruction(&Instruction::GlobalSet(g))
            .instruction(&Instruction::GlobalGet(g))
            .instruction(&Instruction::I64Const(0))
            .instruction(&Instruction::I64LtS)
            .instruction(&Instruction::If(BlockType::Empty))
            .instruction(&Instruction::Unreachable)
            .instruction(&Instruction::End);
    }
}

type ReencodeError = reencode::Error<ModuleError>;

impl Reencode for FuelInjector<'_> {
    type Error = ModuleError;

    fn global_index(&mut self, global: u32) -> Result<u32, ReencodeError> {
        Ok(if global >= self.imported_globals {
            global + 1
        } else {
            global
        })
    }

    fn parse_import_section(
        &mut self,
        imports: &mut wasm_encoder::ImportSection,
        section: wasmparser::ImportSectionReader<'_>,
    ) -> Result<(), ReencodeError> {
        reencode::utils::parse_import_section(self, imports, section)?;
        imports.import(FUEL_GLOBAL_MODULE, FUEL_GLOBAL_NAME, fuel_global_type());
        self.import_emitted = true;
        Ok(())
    }

    fn intersperse_section_hook(
        &mut self,
        module: &mut wasm_encoder::Module,
        _after: Option<SectionId>,
        before: Option<SectionId>,
    ) -> Result<(), ReencodeError> {
        if self.import_emitted || matches!(before, Some(SectionId::Type | SectionId::Import)) {
            return Ok(());
        }
        let mut imports = wasm_encoder::ImportSection::new();
        imports.import(FUEL_GLOBAL_MODULE, FUEL_GLOBAL_NAME, fuel_global_type());
        module.section(&imports);
        self.import_emitted = true;
        Ok(())
    }

    fn parse_function_body(
        &mut self,
        code: &mut CodeSection,
        func: wasmparser::FunctionBody<'_>,
    ) -> Result<(), ReencodeError> {
        let mut f = self.new_function_with_parsed_locals(&func)?;
        let mut reader = func.get_operators_reader()?;
        let mut ops: Vec<Operator<'_>> = Vec::new();
        while !reader.eof() {
            ops.push(reader.read()?);
        }

        let mut start = 0;
        while start < ops.len() {
            let end = ops[start..]
                .iter()
                .position(is_segment_delimiter)
                .map_or(ops.len(), |p| start + p + 1);
            let cost: u64 = ops[start..end]
                .iter()
                .map(|op| self.schedule.cost_of(classify(op).0))
                .fold(0u64, u64::saturating_add);
            if cost > MAX_SEGMENT_COST {
                return Err(reencode::Error::UserError(ModuleError::TransformOverflow {
                    function: self.function_index,
                    cost,
                }));
            }
            if cost > 0 {
                self.emit_charge(&mut f, cost);
            }
            for op in &ops[start..end] {
                f.instruction(&self.instruction(op.clone())?);
            }
            start = end;
        }

        code.function(&f);
        self.function_index += 1;
        Ok(())
    }
}

fn count_imports(bytes: &[u8]) -> Result<(u32, u32), ModuleError> {
    let mut globals = 0;
    let mut funcs = 0;
    for payload in Parser::new(0).parse_all(bytes) {
        if let Payload::ImportSection(section) = payload.map_err(malformed)? {
            for import in section.into_imports() {
                match import.map_err(malformed)?.ty {
                    TypeRef::Global(_) => globals += 1,
                    TypeRef::Func(_) | TypeRef::FuncExact(_) => funcs += 1,
                    _ => {}
                }
            }
        }
    }
    Ok((globals, funcs))
}

/// Returns a copy of `artifact` whose `instrumented_bytes` charge fuel per
/// straight-line segment according to `schedule`.
pub fn instrument(
    artifact: &ModuleArtifact,
    schedule: &FuelSchedule,
) -> Result<ModuleArtifact, ModuleError> {
    let raw = &artifact.raw_bytes;
    super::check_header(raw)?;
    let (imported_globals, imported_funcs) = count_imports(raw)?;

    let mut injector = FuelInjector {
        schedule,
        imported_globals,
        import_emitted: false,
        function_index: imported_funcs,
    };
    let mut module = wasm_encoder::Module::new();
    injector
        .parse_core_module(&mut module, Parser::new(0), raw)
        .map_err(|e| match e {
            reencode::Error::UserError(inner) => inner,
            other => malformed(other),
        })?;
    let bytes = module.finish();
    super::validate_instrumented(&bytes)?;

    Ok(ModuleArtifact {
        instrumented_bytes: bytes,
        ..artifact.clone()
    })
}

/// Re-encodes `bytes` without changes; used to check that the rewriting
/// machinery round-trips modules it does not touch.
#[cfg(test)]
pub(crate) fn roundtrip(bytes: &[u8]) -> Vec<u8> {
    let mut module = wasm_encoder::Module::new();
    reencode::RoundtripReencoder
        .parse_core_module(&mut module, Parser::new(0), bytes)
        .unwrap();
    module.finish()
}
