// Allocate and walk perfect binary trees of increasing depth.

struct Tree {
    children: Option<(Box<Tree>, Box<Tree>)>,
}

fn bottom_up(depth: u32) -> Box<Tree> {
    if depth == 0 {
        Box::new(Tree { children: None })
    } else {
        Box::new(Tree {
            children: Some((bottom_up(depth - 1), bottom_up(depth - 1))),
        })
    }
}

fn check(tree: &Tree) -> u64 {
    match &tree.children {
        None => 1,
        Some((l, r)) => 1 + check(l) + check(r),
    }
}

const MIN_DEPTH: u32 = 4;

fn main() {
    let n = wasmless_guests::param_or_exit("binary-trees");
    let max_depth = (MIN_DEPTH + 2).max(n.min(40) as u32);
    let stretch = max_depth + 1;
    let mut out = String::new();

    out.push_str(&format!(
        "stretch tree of depth {stretch}\t check: {}\n",
        check(&bottom_up(stretch))
    ));

    let long_lived = bottom_up(max_depth);

    let mut depth = MIN_DEPTH;
    while depth <= max_depth {
        let iterations = 1u64 << (max_depth - depth + MIN_DEPTH);
        let mut total = 0u64;
        for _ in 0..iterations {
            total += check(&bottom_up(depth));
        }
        out.push_str(&format!(
            "{iterations}\t trees of depth {depth}\t check: {total}\n"
        ));
        depth += 2;
    }

    out.push_str(&format!(
        "long lived tree of depth {max_depth}\t check: {}\n",
        check(&long_lived)
    ));
    wasmless_guests::emit(out.as_bytes());
}
