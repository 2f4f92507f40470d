//! HTTP service and command-line front end for the financial assistant:
//! streamed chat with expert routing, tool and retrieval endpoints, session
//! persistence, dataset construction and benchmark runs.

pub mod cli;
pub mod config;
pub mod http;
pub mod sessions;
pub mod state;

pub use config::ServiceConfig;
pub use state::AppState;

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    state: std::sync::Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, http::router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
