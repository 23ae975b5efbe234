// Fixture: sleeps argv[1] milliseconds, then prints "slept".
fn main() {
    let ms = wasmless_guests::param_or_exit("sleep");
    std::thread::sleep(std::time::Duration::from_millis(ms));
    wasmless_guests::emit(b"slept\n");
}
