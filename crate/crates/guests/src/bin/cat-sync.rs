use std::io::Read;
use std::process;

fn main() {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: cat-sync <path>");
        process::exit(2);
    };
    let mut buf = Vec::new();
    let read = std::fs::File::open(&path).and_then(|mut f| f.read_to_end(&mut buf));
    match read {
        Ok(n) => wasmless_guests::emit(format!("{n}\n").as_bytes()),
        Err(e) => {
            eprintln!("cat-sync: {path}: {e}");
            process::exit(1);
        }
    }
}
