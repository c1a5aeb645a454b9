use clap::Parser;
use malleable_service::{app, Config};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::from_default_env()).init();
    let config = Config::parse();
    let (router, state) = match app(&config) {
        Ok(built) => built,
        Err(e) => {
            tracing::error!("{e}");
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    let listener = match tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind port {}: {e}", config.port);
            std::process::exit(2);
        }
    };
    tracing::info!(
        addr = %listener.local_addr().expect("bound"),
        corpora = state.catalog.iter().count(),
        "listening"
    );
    if let Err(e) = axum::serve(listener, router).await {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
