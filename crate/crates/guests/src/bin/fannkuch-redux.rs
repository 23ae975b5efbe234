// Sequential fannkuch-redux: permutations are visited in the rotation order of
// the reference program, and the checksum alternates sign with that order.

fn fannkuch(n: usize) -> (i64, u32) {
    let mut perm1: Vec<usize> = (0..n).collect();
    let mut perm = vec![0usize; n];
    let mut count = vec![0usize; n];
    let mut max_flips = 0u32;
    let mut checksum = 0i64;
    let mut perm_count = 0u64;
    let mut r = n;

    loop {
        while r != 1 {
            count[r - 1] = r;
            r -= 1;
        }

        perm.copy_from_slice(&perm1);
        let mut flips = 0u32;
        let mut k = perm[0];
        while k != 0 {
            perm[..=k].reverse();
            flips += 1;
            k = perm[0];
        }
        max_flips = max_flips.max(flips);
        checksum += if perm_count % 2 == 0 {
            flips as i64
        } else {
            -(flips as i64)
        };

        loop {
            if r == n {
                return (checksum, max_flips);
            }
            let first = perm1[0];
            perm1.copy_within(1..=r, 0);
            perm1[r] = first;
            count[r] -= 1;
            if count[r] > 0 {
                break;
            }
            r += 1;
        }
        perm_count += 1;
    }
}

fn main() {
    let n = wasmless_guests::param_or_exit("fannkuch-redux");
    if n > 16 {
        eprintln!("fannkuch-redux: n must be <= 16");
        std::process::exit(2);
    }
    let (checksum, max_flips) = fannkuch(n as usize);
    wasmless_guests::emit(format!("{checksum}\nPfannkuchen({n}) = {max_flips}\n").as_bytes());
}
