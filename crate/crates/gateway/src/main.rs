use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use wasmless_gateway::{shutdown_signal, Gateway, GatewayConfig};

/// Serve the wasmless HTTP API.
///
/// Every config field can be overridden with a `WASMLESS_` variable, e.g.
/// `WASMLESS_LISTEN_ADDR` or `WASMLESS_DEFAULT_LIMITS_FUEL_LIMIT`.
#[derive(Parser)]
#[command(name = "wasmless-gateway", version)]
struct Cli {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[tokio::main]
async fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = GatewayConfig::from_env(cli.config.as_deref())?;
    if cli.print_config {
        print!("{}", toml::to_string(&config)?);
        return Ok(());
    }
    let gateway = Gateway::bind(config).await.context("starting gateway")?;
    // the bound address goes to stdout so wrappers can use port 0
    println!("listening on {}", gateway.local_addr());
    std::io::stdout().flush()?;
    gateway.run(shutdown_signal()).await?;
    log::info!("stopped");
    Ok(())
}
