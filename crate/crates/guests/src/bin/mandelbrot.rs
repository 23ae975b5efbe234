// Mandelbrot set as a binary P4 portable bitmap, 50 iterations, escape radius 2.

const ITERATIONS: usize = 50;
const LIMIT_SQ: f64 = 4.0;

fn main() {
    let n = wasmless_guests::param_or_exit("mandelbrot") as usize;
    let (w, h) = (n, n);
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    out.reserve(h * w.div_ceil(8));

    for y in 0..h {
        let mut byte_acc = 0u8;
        let mut bit_num = 0u32;
        for x in 0..w {
            let cr = 2.0 * x as f64 / w as f64 - 1.5;
            let ci = 2.0 * y as f64 / h as f64 - 1.0;
            let (mut zr, mut zi, mut tr, mut ti) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let mut i = 0;
            while i < ITERATIONS && tr + ti <= LIMIT_SQ {
                zi = 2.0 * zr * zi + ci;
                zr = tr - ti + cr;
                tr = zr * zr;
                ti = zi * zi;
                i += 1;
            }
            byte_acc <<= 1;
            if tr + ti <= LIMIT_SQ {
                byte_acc |= 1;
            }
            bit_num += 1;
            if bit_num == 8 {
                out.push(byte_acc);
                byte_acc = 0;
                bit_num = 0;
            } else if x == w - 1 {
                byte_acc <<= 8 - w % 8;
                out.push(byte_acc);
                byte_acc = 0;
                bit_num = 0;
            }
        }
    }
    wasmless_guests::emit(&out);
}
