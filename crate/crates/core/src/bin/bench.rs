use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use wasmless::bench::{
    self, Backend, BenchContext, BenchError, BenchmarkSample, ReportFormat, DEFAULT_RUNS,
};
use wasmless::workloads::{GuestDir, Scale, WorkloadId};

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Cold/warm start and compute benchmarks for wasmless"
)]
struct Cli {
    /// Directory holding the guest builds (default: target/guests).
    #[arg(long, global = true)]
    guest_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Time workloads on one or all backends and write samples as JSON lines.
    Run {
        #[arg(long, default_value = "all")]
        workload: String,
        #[arg(long, default_value = "all")]
        backend: String,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value = "desk")]
        scale: Scale,
        /// Parameter overriding the scale default for every workload.
        #[arg(long)]
        param: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a samples file as a markdown grid or CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        log10: bool,
    },
    /// Print guest artifact sizes as stored by the registry, plus native sizes.
    Sizes {
        /// Registry directory to deploy into (default: a temporary one).
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Build the guests for wasm32-wasip1 and for the host.
    BuildGuests,
}

fn parse_all<T: std::str::FromStr>(arg: &str, all: &[T]) -> Result<Vec<T>>
where
    T: Copy,
    T::Err: std::fmt::Display,
{
    if arg == "all" {
        return Ok(all.to_vec());
    }
    arg.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("{e}")))
        .collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let guests = cli.guest_dir.map(GuestDir::new).unwrap_or_default();

    match cli.command {
        Cmd::BuildGuests => {
            guests.build()?;
            println!("guests built in {}", guests.target_dir().display());
        }
        Cmd::Sizes { data_dir } => {
            let temp;
            let dir = match data_dir {
                Some(d) => d,
                None => {
                    temp = tempfile::tempdir()?;
                    temp.path().to_path_buf()
                }
            };
            print!("{}", bench::sizes(&guests, &dir)?.render());
        }
        Cmd::Report {
            input,
            format,
            log10,
        } => {
            let file =
                File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let mut samples = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let sample: BenchmarkSample = serde_json::from_str(&line)
                    .with_context(|| format!("{}:{}", input.display(), i + 1))?;
                samples.push(sample);
            }
            print!(
                "{}",
                bench::report(&bench::summarize_all(&samples), format, log10)
            );
        }
        Cmd::Run {
            workload,
            backend,
            runs,
            scale,
            param,
            out,
        } => {
            let workloads = parse_all(&workload, &WorkloadId::ALL)?;
            let backends = parse_all(&backend, &Backend::ALL)?;
            let explicit_backend = backend != "all";
            let ctx = BenchContext::new(guests)?;
            let mut writer = BufWriter::new(
                File::create(&out).with_context(|| format!("creating {}", out.display()))?,
            );
            let mut failures = 0usize;
            for b in &backends {
                for w in &workloads {
                    let mut spec = w.spec();
                    if let Some(n) = param {
                        spec = spec.with_param(n);
                    }
                    log::info!(
                        "{w} on {b}: {runs} runs, param {}",
                        spec.effective_param(scale)
                    );
                    let samples = match bench::bench_run(&ctx, &spec, *b, runs, scale) {
                        Ok(samples) => samples,
                        Err(e @ BenchError::BackendUnavailable(..)) if !explicit_backend => {
                            log::warn!("skipping: {e}");
                            break;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    for s in &samples {
                        if let Some(reason) = &s.reason {
                            failures += 1;
                            log::warn!("{w} on {b} run {}: {reason}", s.run_index);
                        }
                        serde_json::to_writer(&mut writer, s)?;
                        writer.write_all(b"\n")?;
                    }
                    writer.flush()?;
                }
            }
            if failures > 0 {
                bail!(
                    "{failures} samples failed verification; see {}",
                    out.display()
                );
            }
        }
    }
    Ok(())
}
