//! HTTP API and command line front end for a surgq project.
//!
//! [`api::router`] exposes frame browsing, polygon retrieval, search, quiz
//! CRUD, grading and inpainting over JSON. [`cli`] binds the same library
//! calls to the `surgq` binary.

pub mod api;
pub mod cli;
mod error;
mod remote;
mod state;

use std::future::Future;
use std::net::SocketAddr;

pub use api::router;
pub use error::{ApiError, ErrorBody};
pub use remote::RemoteInpainter;
pub use state::{AppState, SharedState};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    state: SharedState,
    addr: SocketAddr,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::BindFailure { addr, source })?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
