// Fixture: spins forever in pure computation.
use std::hint::black_box;

fn main() {
    let mut x = 0u64;
    loop {
        x = black_box(x.wrapping_mul(6364136223846793005).wrapping_add(1));
    }
}
