use std::net::SocketAddr;

use clap::Parser;
use rsm_service::{router, App};

/// Serve the repair API under /api/v1.
#[derive(Parser)]
#[command(name = "rsm-serve", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Concurrent repair / heatmap workers; one per core by default.
    #[arg(long)]
    workers: Option<usize>,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let app = args.workers.map_or_else(App::default, App::new);
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    eprintln!("rsm-serve listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
