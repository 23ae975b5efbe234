//! Hand-assembled modules whose retired-instruction counts are traced by
//! hand. A branch out of a block skips that block's `end`; an `else` reached
//! from the then-arm jumps past the `end` of its `if`.

use wasm_encoder::{
    BlockType, CodeSection, ExportKind, ExportSection, Function, FunctionSection, Instruction,
    Module, TypeSection, ValType,
};
use wasmless::executor::{Executor, ExitStatus, ResourceLimits, SandboxSpec, StartMode};
use wasmless::wasm_tools::{self, FuelSchedule, ModuleArtifact};

use Instruction::*;

/// `_start` is function 0; every function has type `[] -> []` and
/// `locals` i32 locals.
fn module(funcs: &[(u32, &[Instruction<'_>])]) -> Vec<u8> {
    let mut m = Module::new();
    let mut types = TypeSection::new();
    types.ty().function([], []);
    m.section(&types);
    let mut fs = FunctionSection::new();
    for _ in funcs {
        fs.function(0);
    }
    m.section(&fs);
    let mut exports = ExportSection::new();
    exports.export("_start", ExportKind::Func, 0);
    m.section(&exports);
    let mut code = CodeSection::new();
    for (locals, body) in funcs {
        let mut f = Function::new([(*locals, ValType::I32)]);
        for i in *body {
            f.instruction(i);
        }
        code.function(&f);
    }
    m.section(&code);
    m.finish()
}

fn counted_loop(k: i32) -> Vec<Instruction<'static>> {
    vec![
        I32Const(k),
        LocalSet(0),
        Loop(BlockType::Empty),
        LocalGet(0),
        I32Const(1),
        I32Sub,
        LocalTee(0),
        BrIf(0),
        End,
        End,
    ]
}

fn run(artifact: &ModuleArtifact, fuel_limit: u64) -> (ExitStatus, u64) {
    let executor = Executor::new(4).unwrap();
    let limits = ResourceLimits::new(fuel_limit, 16, 10_000).unwrap();
    let r = executor
        .execute(
            artifact,
            &SandboxSpec::new(["oracle"]),
            &limits,
            StartMode::Cold,
        )
        .unwrap();
    (r.exit_status, r.fuel_consumed)
}

fn fuel_of(bytes: &[u8]) -> u64 {
    let artifact = wasm_tools::prepare(bytes, &FuelSchedule::default()).unwrap();
    let (status, fuel) = run(&artifact, 1_000_000);
    assert_eq!(status, ExitStatus::Exited(0));
    fuel
}

#[test]
fn empty_body() {
    // end
    assert_eq!(fuel_of(&module(&[(0, &[End])])), 1);
}

#[test]
fn straight_line_body() {
    // const, const, add, drop, end
    let body = [I32Const(1), I32Const(2), I32Add, Drop, End];
    assert_eq!(fuel_of(&module(&[(0, &body)])), 5);
}

#[test]
fn counted_loop_k4() {
    // 3 before the body, 5 per iteration, loop end, function end
    assert_eq!(fuel_of(&module(&[(1, &counted_loop(4))])), 3 + 4 * 5 + 2);
}

#[test]
fn counted_loop_m10() {
    assert_eq!(fuel_of(&module(&[(1, &counted_loop(10))])), 3 + 10 * 5 + 2);
}

#[test]
fn nested_counted_loops() {
    let body = [
        I32Const(3),
        LocalSet(0),
        Loop(BlockType::Empty),
        I32Const(4),
        LocalSet(1),
        Loop(BlockType::Empty),
        LocalGet(1),
        I32Const(1),
        I32Sub,
        LocalTee(1),
        BrIf(0),
        End,
        LocalGet(0),
        I32Const(1),
        I32Sub,
        LocalTee(0),
        BrIf(0),
        End,
        End,
    ];
    // 3 + 3 * (3 + 4 * 5 + 1 + 5) + 2
    assert_eq!(fuel_of(&module(&[(2, &body)])), 92);
}

#[test]
fn if_else_both_arms() {
    let body = |cond| {
        vec![
            I32Const(cond),
            If(BlockType::Empty),
            Nop,
            Nop,
            Else,
            Nop,
            End,
            End,
        ]
    };
    // false: const, if, nop, end, end
    assert_eq!(fuel_of(&module(&[(0, &body(0))])), 5);
    // true: const, if, nop, nop, else, end
    assert_eq!(fuel_of(&module(&[(0, &body(1))])), 6);
}

#[test]
fn branch_out_of_block_skips_rest() {
    // block, const, br_if, function end
    let body = [
        Block(BlockType::Empty),
        I32Const(1),
        BrIf(0),
        Unreachable,
        End,
        End,
    ];
    assert_eq!(fuel_of(&module(&[(0, &body)])), 4);
}

#[test]
fn call_into_second_function() {
    // call, callee (const, drop, end), end
    let start = [Call(1), End];
    let callee = [I32Const(7), Drop, End];
    assert_eq!(fuel_of(&module(&[(0, &start), (0, &callee)])), 5);
}

#[test]
fn schedule_weights_apply() {
    let body = [I32Const(1), I32Const(2), I32Add, Drop, End];
    let schedule = FuelSchedule::new(2, [("i32.add".to_string(), 10)].into()).unwrap();
    let artifact = wasm_tools::prepare(&module(&[(0, &body)]), &schedule).unwrap();
    let executor = Executor::with_schedule(4, schedule).unwrap();
    let r = executor
        .execute(
            &artifact,
            &SandboxSpec::new(["w"]),
            &ResourceLimits::default(),
            StartMode::Cold,
        )
        .unwrap();
    assert_eq!(r.fuel_consumed, 4 * 2 + 10);
}

#[test]
fn exhaustion_boundary() {
    let body = [I32Const(1), I32Const(2), I32Add, Drop, End];
    let artifact = wasm_tools::prepare(&module(&[(0, &body)]), &FuelSchedule::default()).unwrap();
    assert_eq!(run(&artifact, 5), (ExitStatus::Exited(0), 5));
    assert_eq!(run(&artifact, 4), (ExitStatus::FuelExhausted, 4));
    assert_eq!(run(&artifact, 1), (ExitStatus::FuelExhausted, 1));
}

#[test]
fn loop_exhaustion_clamps_to_limit() {
    let artifact = wasm_tools::prepare(
        &module(&[(1, &counted_loop(1000))]),
        &FuelSchedule::default(),
    )
    .unwrap();
    assert_eq!(run(&artifact, 100), (ExitStatus::FuelExhausted, 100));
    assert_eq!(
        run(&artifact, 3 + 1000 * 5 + 2),
        (ExitStatus::Exited(0), 5005)
    );
}
