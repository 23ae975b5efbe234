// Fixture: mutates a global and a static buffer, then reports what it saw.
// A fresh instance always prints "1 0".
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

static INVOCATIONS: AtomicU32 = AtomicU32::new(0);
static SCRATCH: Mutex<[u8; 4096]> = Mutex::new([0; 4096]);

fn main() {
    let seen = INVOCATIONS.fetch_add(1, Ordering::SeqCst) + 1;
    let mut scratch = SCRATCH.lock().unwrap();
    let previous = scratch[4095];
    scratch.fill(0xAB);
    wasmless_guests::emit(format!("{seen} {previous}\n").as_bytes());
}
