// Fixture: prints its arguments on one line, then copies stdin to stdout.
use std::io::Read;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut out = args.join(" ").into_bytes();
    out.push(b'\n');
    let mut input = Vec::new();
    if std::io::stdin().read_to_end(&mut input).is_err() {
        std::process::exit(1);
    }
    out.extend_from_slice(&input);
    wasmless_guests::emit(&out);
    if std::env::var("ECHO_STDERR").is_ok() {
        eprint!("stderr line\n");
    }
}
