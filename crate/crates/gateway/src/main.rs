use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use contextguard::config::resolve_config;
use contextguard::pipeline::Guard;
use tracing_subscriber::EnvFilter;

/// Privacy guard gateway for LLM prompts.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Configuration file (TOML). Defaults to the built-in configuration.
    #[arg(long, env = "CONTEXTGUARD_CONFIG")]
    config: Option<PathBuf>,
    /// Listen address, overriding `server.listen`.
    #[arg(long)]
    listen: Option<String>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    let args = Args::parse();
    let config = resolve_config(args.config.as_deref()).context("loading configuration")?;
    for w in &config.warnings {
        tracing::warn!("{w}");
    }
    let listen = args.listen.unwrap_or_else(|| config.server.listen.clone());
    let guard = Arc::new(Guard::new(config).context("starting pipeline")?);
    let listener = tokio::net::TcpListener::bind(&listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, contextguard_gateway::app(guard))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
