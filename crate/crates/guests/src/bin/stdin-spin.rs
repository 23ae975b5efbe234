// Fixture: reads stdin in an endless loop; past EOF every read returns 0.
use std::io::Read;

fn main() {
    let mut stdin = std::io::stdin();
    let mut buf = [0u8; 64];
    let mut total = 0usize;
    loop {
        total = total.wrapping_add(stdin.read(&mut buf).unwrap_or(0));
        std::hint::black_box(total);
    }
}
