//! Instruction classification derived from wasmparser's operator table.

use std::collections::HashMap;
use std::sync::LazyLock;

use wasmparser::Operator;

/// The feature proposal an instruction belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proposal {
    Mvp,
    SignExtension,
    SaturatingFloatToInt,
    BulkMemory,
    Other(&'static str),
}

impl Proposal {
    /// Core instruction set accepted by the platform.
    pub fn is_supported(self) -> bool {
        !matches!(self, Proposal::Other(_))
    }
}

macro_rules! define_tables {
    (@prop mvp) => { Proposal::Mvp };
    (@prop sign_extension) => { Proposal::SignExtension };
    (@prop saturating_float_to_int) => { Proposal::SaturatingFloatToInt };
    (@prop bulk_memory) => { Proposal::BulkMemory };
    (@prop $other:ident) => { Proposal::Other(stringify!($other)) };
    ($( @$proposal:ident $op:ident $({ $($arg:ident: $argty:ty),* })? => $visit:ident ($($ann:tt)*))*) => {
        /// Returns the visitor name (`visit_i32_add`) and proposal of `op`.
        fn classify_raw(op: &Operator<'_>) -> (&'static str, Proposal) {
            #[allow(unreachable_patterns)]
            match op {
                $( Operator::$op { .. } => (stringify!($visit), define_tables!(@prop $proposal)), )*
                _ => ("visit_unknown", Proposal::Other("unknown")),
            }
        }

        const ALL_VISITORS: &[(&str, Proposal)] = &[
            $( (stringify!($visit), define_tables!(@prop $proposal)), )*
        ];
    };
}

wasmparser::for_each_operator!(define_tables);

/// Prefixes whose first underscore becomes a dot in the text-format mnemonic.
const DOTTED_PREFIXES: &[&str] = &[
    "i32", "i64", "f32", "f64", "v128", "i8x16", "i16x8", "i32x4", "i64x2", "f32x4", "f64x2",
    "local", "global", "memory", "table", "data", "elem", "ref", "struct", "array", "any",
    "extern", "i31", "atomic",
];

fn mnemonic_from_visitor(visit: &str) -> String {
    let name = visit.strip_prefix("visit_").unwrap_or(visit);
    match name.split_once('_') {
        Some((head, tail)) if DOTTED_PREFIXES.contains(&head) => format!("{head}.{tail}"),
        _ => name.to_owned(),
    }
}

static MNEMONICS: LazyLock<HashMap<&'static str, (String, Proposal)>> = LazyLock::new(|| {
    ALL_VISITORS
        .iter()
        .map(|&(visit, proposal)| (visit, (mnemonic_from_visitor(visit), proposal)))
        .collect()
});

/// Text-format mnemonic (`i32.add`, `br_if`, `memory.grow`) and proposal of `op`.
pub fn classify(op: &Operator<'_>) -> (&'static str, Proposal) {
    let (visit, proposal) = classify_raw(op);
    match MNEMONICS.get(visit) {
        Some((mnemonic, _)) => (mnemonic.as_str(), proposal),
        None => ("unknown", proposal),
    }
}

/// Whether `mnemonic` names a supported instruction.
pub fn is_supported_mnemonic(mnemonic: &str) -> bool {
    MNEMONICS
        .values()
        .any(|(m, proposal)| m == mnemonic && proposal.is_supported())
}

/// Instructions that delimit straight-line segments for fuel charging.
pub fn is_segment_delimiter(op: &Operator<'_>) -> bool {
    matches!(
        op,
        Operator::Block { .. }
            | Operator::Loop { .. }
            | Operator::If { .. }
            | Operator::Else
            | Operator::End
            | Operator::Br { .. }
            | Operator::BrIf { .. }
            | Operator::BrTable { .. }
            | Operator::Return
            | Operator::Call { .. }
            | Operator::CallIndirect { .. }
            | Operator::Unreachable
    )
}

/// Renders the opcode bytes found at `offset` (prefix plus LEB sub-opcode).
pub fn opcode_at(bytes: &[u8], offset: usize) -> String {
    let Some(&first) = bytes.get(offset) else {
        return "??".to_owned();
    };
    if matches!(first, 0xfb..=0xfe) {
        let mut value = 0u32;
        let mut shift = 0;
        for &b in bytes.iter().skip(offset + 1).take(5) {
            value |= u32::from(b & 0x7f) << shift;
            shift += 7;
            if b & 0x80 == 0 {
                break;
            }
        }
        format!("0x{first:02x} {value}")
    } else {
        format!("0x{first:02x}")
    }
}
