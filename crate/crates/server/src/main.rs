use clap::Parser;
use promptcrafter_server::config::{self, Args, FileConfig};
use promptcrafter_server::{build_app, build_service};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();

    let args = Args::parse();
    let file = match &args.config {
        Some(path) => FileConfig::parse(&std::fs::read_to_string(path)?)?,
        None => FileConfig::default(),
    };
    let settings = config::resolve(&args, file, |k| std::env::var(k).ok())?;
    let service = build_service(&settings)?;

    let listener = tokio::net::TcpListener::bind(("0.0.0.0", settings.port)).await?;
    tracing::info!(
        addr = %listener.local_addr()?,
        data_dir = %settings.data_dir.display(),
        mock = args.mock,
        "listening"
    );
    axum::serve(listener, build_app(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
