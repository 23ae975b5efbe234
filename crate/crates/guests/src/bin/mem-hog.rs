// Fixture: keeps allocating and touching 1 MiB chunks until the host refuses.
use std::hint::black_box;

fn main() {
    let mut chunks: Vec<Vec<u8>> = Vec::new();
    loop {
        let mut chunk = vec![0u8; 1 << 20];
        chunk[0] = chunks.len() as u8;
        chunks.push(black_box(chunk));
    }
}
