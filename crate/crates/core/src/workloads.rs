//! The six benchmark workloads: parameters, guest binaries and independent
//! reference outputs.
//!
//! Guests live in the `wasmless-guests` crate and are built twice into
//! `target/guests`: once for `wasm32-wasip1` and once for the host.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::executor::{Preopen, SandboxSpec};

pub const WASM_TARGET: &str = "wasm32-wasip1";
pub const GUEST_PACKAGE: &str = "wasmless-guests";
/// Guest path at which cat-sync sees its input directory.
pub const CAT_SYNC_GUEST_DIR: &str = "/data";
pub const CAT_SYNC_FILE: &str = "input.bin";

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("unknown workload `{0}`")]
    UnknownWorkload(String),
    #[error("guest `{name}` not found at {path}; build the guests with `bench build-guests`")]
    GuestMissing { name: String, path: PathBuf },
    #[error("guest build failed: {0}")]
    BuildFailed(String),
    #[error("fixture i/o failed: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadId {
    Nop,
    CatSync,
    Nbody,
    FannkuchRedux,
    Mandelbrot,
    BinaryTrees,
}

impl WorkloadId {
    pub const ALL: [WorkloadId; 6] = [
        WorkloadId::Nop,
        WorkloadId::CatSync,
        WorkloadId::Nbody,
        WorkloadId::FannkuchRedux,
        WorkloadId::Mandelbrot,
        WorkloadId::BinaryTrees,
    ];

    pub const COMPUTE: [WorkloadId; 4] = [
        WorkloadId::Nbody,
        WorkloadId::FannkuchRedux,
        WorkloadId::Mandelbrot,
        WorkloadId::BinaryTrees,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadId::Nop => "nop",
            WorkloadId::CatSync => "cat-sync",
            WorkloadId::Nbody => "nbody",
            WorkloadId::FannkuchRedux => "fannkuch-redux",
            WorkloadId::Mandelbrot => "mandelbrot",
            WorkloadId::BinaryTrees => "binary-trees",
        }
    }

    pub fn spec(self) -> WorkloadSpec {
        // cat-sync's parameter is the size in bytes of the file it reads
        let (full_param, desk_param) = match self {
            WorkloadId::Nop => (0, 0),
            WorkloadId::CatSync => (1 << 20, 1 << 20),
            WorkloadId::Nbody => (50_000_000, 1_000_000),
            WorkloadId::FannkuchRedux => (12, 9),
            WorkloadId::Mandelbrot => (15_000, 1_000),
            WorkloadId::BinaryTrees => (21, 14),
        };
        WorkloadSpec {
            id: self,
            param: None,
            full_param,
            desk_param,
            needs_preopen: self == WorkloadId::CatSync,
        }
    }
}

impl fmt::Display for WorkloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadId {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadId::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| WorkloadError::UnknownWorkload(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Desk,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(format!("unknown scale `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub id: WorkloadId,
    /// Explicit parameter overriding the scale defaults.
    pub param: Option<u64>,
    pub full_param: u64,
    pub desk_param: u64,
    pub needs_preopen: bool,
}

impl WorkloadSpec {
    pub fn with_param(mut self, n: u64) -> Self {
        self.param = Some(n);
        self
    }

    pub fn effective_param(&self, scale: Scale) -> u64 {
        self.param.unwrap_or(match scale {
            Scale::Full => self.full_param,
            Scale::Desk => self.desk_param,
        })
    }
}

/// Where guest binaries are found and built.
#[derive(Clone, Debug)]
pub struct GuestDir {
    target_dir: PathBuf,
}

impl Default for GuestDir {
    /// `WASMLESS_GUEST_DIR` if set, else `target/guests` in this workspace.
    fn default() -> Self {
        let target_dir = std::env::var_os("WASMLESS_GUEST_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| workspace_root().join("target").join("guests"));
        GuestDir { target_dir }
    }
}

/// Root of the workspace this crate was built in.
pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("crate lives two levels below the workspace root")
        .to_path_buf()
}

impl GuestDir {
    pub fn new(target_dir: impl Into<PathBuf>) -> Self {
        GuestDir {
            target_dir: target_dir.into(),
        }
    }

    pub fn target_dir(&self) -> &Path {
        &self.target_dir
    }

    pub fn wasm_path(&self, name: &str) -> PathBuf {
        self.target_dir
            .join(WASM_TARGET)
            .join("release")
            .join(format!("{name}.wasm"))
    }

    pub fn native_path(&self, name: &str) -> PathBuf {
        self.target_dir
            .join("release")
            .join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
    }

    pub fn wasm(&self, name: &str) -> Result<PathBuf, WorkloadError> {
        existing(self.wasm_path(name), name)
    }

    pub fn native(&self, name: &str) -> Result<PathBuf, WorkloadError> {
        existing(self.native_path(name), name)
    }

    pub fn read_wasm(&self, name: &str) -> Result<Vec<u8>, WorkloadError> {
        Ok(fs::read(self.wasm(name)?)?)
    }

    /// True when every workload has both builds.
    pub fn is_built(&self) -> bool {
        WorkloadId::ALL
            .iter()
            .all(|w| self.wasm_path(w.as_str()).is_file() && self.native_path(w.as_str()).is_file())
    }

    /// Builds all guests for wasm and for the host with cargo.
    pub fn build(&self) -> Result<(), WorkloadError> {
        let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
        for target in [Some(WASM_TARGET), None] {
            let mut cmd = Command::new(&cargo);
            cmd.current_dir(workspace_root())
                .args([
                    "build",
                    "--release",
                    "--quiet",
                    "-p",
                    GUEST_PACKAGE,
                    "--target-dir",
                ])
                .arg(&self.target_dir);
            if let Some(t) = target {
                cmd.args(["--target", t]);
            }
            let output = cmd
                .output()
                .map_err(|e| WorkloadError::BuildFailed(format!("cannot run cargo: {e}")))?;
            if !output.status.success() {
                return Err(WorkloadError::BuildFailed(
                    String::from_utf8_lossy(&output.stderr).into_owned(),
                ));
            }
        }
        Ok(())
    }

    /// Builds the guests unless they are all present already.
    pub fn ensure_built(&self) -> Result<(), WorkloadError> {
        if self.is_built() {
            Ok(())
        } else {
            self.build()
        }
    }
}

fn existing(path: PathBuf, name: &str) -> Result<PathBuf, WorkloadError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(WorkloadError::GuestMissing {
            name: name.to_owned(),
            path,
        })
    }
}

/// A concrete run of one workload: the sandbox for wasm, the argv for a
/// native process and the expected stdout.
#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub workload: WorkloadId,
    pub param: u64,
    pub sandbox: SandboxSpec,
    /// Arguments after the program name for the native binary.
    pub native_args: Vec<String>,
    pub expected_stdout: Vec<u8>,
}

/// Deterministic contents for the cat-sync input file.
pub fn cat_sync_fixture(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i * 31 % 251) as u8).collect()
}

impl WorkloadSpec {
    /// Builds the invocation for `scale`. cat-sync writes its input file into
    /// `fixture_dir`, which is preopened read-write at `/data`.
    pub fn prepare(&self, scale: Scale, fixture_dir: &Path) -> Result<PreparedRun, WorkloadError> {
        let param = self.effective_param(scale);
        let name = self.id.as_str();
        let (sandbox, native_args) = match self.id {
            WorkloadId::Nop => (SandboxSpec::new([name]), vec![]),
            WorkloadId::CatSync => {
                let host_file = fixture_dir.join(CAT_SYNC_FILE);
                fs::write(&host_file, cat_sync_fixture(param as usize))?;
                let guest_file = format!("{CAT_SYNC_GUEST_DIR}/{CAT_SYNC_FILE}");
                (
                    SandboxSpec::new([name.to_owned(), guest_file])
                        .with_preopen(Preopen::new(fixture_dir, CAT_SYNC_GUEST_DIR)),
                    vec![host_file.to_string_lossy().into_owned()],
                )
            }
            _ => (
                SandboxSpec::new([name.to_owned(), param.to_string()]),
                vec![param.to_string()],
            ),
        };
        Ok(PreparedRun {
            workload: self.id,
            param,
            sandbox,
            native_args,
            expected_stdout: reference_output(self.id, param),
        })
    }
}

/// Expected stdout of `workload` with parameter `n`, computed without the
/// guest code.
pub fn reference_output(workload: WorkloadId, n: u64) -> Vec<u8> {
    match workload {
        WorkloadId::Nop => Vec::new(),
        WorkloadId::CatSync => format!("{n}\n").into_bytes(),
        WorkloadId::Nbody => reference::nbody(n).into_bytes(),
        WorkloadId::FannkuchRedux => reference::fannkuch(n as usize).into_bytes(),
        WorkloadId::Mandelbrot => reference::mandelbrot(n as usize),
        WorkloadId::BinaryTrees => reference::binary_trees(n).into_bytes(),
    }
}

pub mod reference {
    //! Reference implementations used as output oracles.

    /// Closed form: a perfect tree of depth `d` has `2^(d+1) - 1` nodes.
    pub fn binary_trees(n: u64) -> String {
        const MIN_DEPTH: u64 = 4;
        let nodes = |d: u64| (1u64 << (d + 1)) - 1;
        let max_depth = (MIN_DEPTH + 2).max(n.min(40));
        let stretch = max_depth + 1;
        let mut out = format!(
            "stretch tree of depth {stretch}\t check: {}\n",
            nodes(stretch)
        );
        for depth in (MIN_DEPTH..=max_depth).step_by(2) {
            let iterations = 1u64 << (max_depth - depth + MIN_DEPTH);
            out += &format!(
                "{iterations}\t trees of depth {depth}\t check: {}\n",
                iterations * nodes(depth)
            );
        }
        out += &format!(
            "long lived tree of depth {max_depth}\t check: {}\n",
            nodes(max_depth)
        );
        out
    }

    /// The permutation visited at position `index` by the reference
    /// generator: digit `d_r = index / r! mod (r + 1)` rotates the prefix of
    /// length `r + 1` left `d_r` times, applied from the longest prefix down.
    pub fn fannkuch_permutation(n: usize, index: u64) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut factorial = vec![1u64; n.max(1)];
        for r in 1..n {
            factorial[r] = factorial[r - 1] * r as u64;
        }
        for r in (1..n).rev() {
            let digit = (index / factorial[r]) % (r as u64 + 1);
            perm[..=r].rotate_left(digit as usize);
        }
        perm
    }

    pub fn count_flips(mut perm: Vec<usize>) -> u32 {
        let mut flips = 0;
        while perm[0] != 0 {
            let k = perm[0];
            perm[..=k].reverse();
            flips += 1;
        }
        flips
    }

    /// Brute force over all `n!` permutations.
    pub fn fannkuch(n: usize) -> String {
        let total: u64 = (1..=n as u64).product();
        let mut checksum = 0i64;
        let mut max_flips = 0;
        for index in 0..total {
            let flips = count_flips(fannkuch_permutation(n, index));
            max_flips = max_flips.max(flips);
            checksum += if index % 2 == 0 {
                flips as i64
            } else {
                -(flips as i64)
            };
        }
        format!("{checksum}\nPfannkuchen({n}) = {max_flips}\n")
    }

    /// Per-pixel escape iteration, 50 iterations, |z|² ≤ 4.
    pub fn mandelbrot(n: usize) -> Vec<u8> {
        let mut out = format!("P4\n{n} {n}\n").into_bytes();
        let row_bytes = n.div_ceil(8);
        for y in 0..n {
            let mut row = vec![0u8; row_bytes];
            for x in 0..n {
                if in_set(x, y, n) {
                    row[x / 8] |= 0x80 >> (x % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    fn in_set(x: usize, y: usize, n: usize) -> bool {
        let c = (
            2.0 * x as f64 / n as f64 - 1.5,
            2.0 * y as f64 / n as f64 - 1.0,
        );
        let mut z = (0.0f64, 0.0f64);
        let mut sq = (0.0f64, 0.0f64);
        for _ in 0..50 {
            if sq.0 + sq.1 > 4.0 {
                return false;
            }
            z = (sq.0 - sq.1 + c.0, 2.0 * z.0 * z.1 + c.1);
            sq = (z.0 * z.0, z.1 * z.1);
        }
        sq.0 + sq.1 <= 4.0
    }

    /// Five-body Jovian system, printing energy before and after `n` steps.
    pub fn nbody(n: u64) -> String {
        let pi = std::f64::consts::PI;
        let solar_mass = 4.0 * pi * pi;
        let year = 365.24;
        #[allow(clippy::excessive_precision)]
        let raw: [([f64; 3], [f64; 3], f64); 4] = [
            (
                [
                    4.84143144246472090e+00,
                    -1.16032004402742839e+00,
                    -1.03622044471123109e-01,
                ],
                [
                    1.66007664274403694e-03,
                    7.69901118419740425e-03,
                    -6.90460016972063023e-05,
                ],
                9.54791938424326609e-04,
            ),
            (
                [
                    8.34336671824457987e+00,
                    4.12479856412430479e+00,
                    -4.03523417114321381e-01,
                ],
                [
                    -2.76742510726862411e-03,
                    4.99852801234917238e-03,
                    2.30417297573763929e-05,
                ],
                2.85885980666130812e-04,
            ),
            (
                [
                    1.28943695621391310e+01,
                    -1.51111514016986312e+01,
                    -2.23307578892655734e-01,
                ],
                [
                    2.96460137564761618e-03,
                    2.37847173959480950e-03,
                    -2.96589568540237556e-05,
                ],
                4.36624404335156298e-05,
            ),
            (
                [
                    1.53796971148509165e+01,
                    -2.59193146099879641e+01,
                    1.79258772950371181e-01,
                ],
                [
                    2.68067772490389322e-03,
                    1.62824170038242295e-03,
                    -9.51592254519715870e-05,
                ],
                5.15138902046611451e-05,
            ),
        ];
        let mut pos = vec![[0.0f64; 3]];
        let mut vel = vec![[0.0f64; 3]];
        let mut mass = vec![solar_mass];
        for (p, v, m) in raw {
            pos.push(p);
            vel.push(v.map(|c| c * year));
            mass.push(m * solar_mass);
        }
        let bodies = mass.len();

        let mut momentum = [0.0f64; 3];
        for i in 0..bodies {
            for k in 0..3 {
                momentum[k] += vel[i][k] * mass[i];
            }
        }
        for k in 0..3 {
            vel[0][k] = -momentum[k] / solar_mass;
        }

        let energy = |pos: &[[f64; 3]], vel: &[[f64; 3]]| {
            let mut e = 0.0;
            for i in 0..bodies {
                let v = vel[i];
                e += 0.5 * mass[i] * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                for j in i + 1..bodies {
                    let d = [
                        pos[i][0] - pos[j][0],
                        pos[i][1] - pos[j][1],
                        pos[i][2] - pos[j][2],
                    ];
                    e -= mass[i] * mass[j] / (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                }
            }
            e
        };

        let mut out = format!("{:.9}\n", energy(&pos, &vel));
        let dt = 0.01;
        for _ in 0..n {
            for i in 0..bodies {
                for j in i + 1..bodies {
                    let d = [
                        pos[i][0] - pos[j][0],
                        pos[i][1] - pos[j][1],
                        pos[i][2] - pos[j][2],
                    ];
                    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                    let mag = dt / (d2 * d2.sqrt());
                    let (mi, mj) = (mass[i] * mag, mass[j] * mag);
                    for k in 0..3 {
                        vel[i][k] -= d[k] * mj;
                        vel[j][k] += d[k] * mi;
                    }
                }
            }
            for i in 0..bodies {
                for k in 0..3 {
                    pos[i][k] += dt * vel[i][k];
                }
            }
        }
        out += &format!("{:.9}\n", energy(&pos, &vel));
        out
    }
}
