//! HTTP service for decision documents.
//!
//! Writes to one document are serialized and guarded by the document
//! version: every mutation names the `base_version` it was computed
//! against and is refused with 409 when that version is stale. Reads are
//! served from immutable snapshots.

mod api;
mod error;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use valtree_core::ProviderConfig;

pub use api::{router, AppState, CreateRequest, EditRequest};
pub use error::{ApiError, StartupError};
pub use store::{IndexEntry, Store};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    pub storage_dir: PathBuf,
    pub provider: ProviderConfig,
}

impl ServiceConfig {
    pub fn new(bind: impl Into<String>, storage_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: bind.into(),
            storage_dir: storage_dir.into(),
            provider: ProviderConfig::default(),
        }
    }
}

pub struct RunningService {
    addr: SocketAddr,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningService {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections, drains in-flight requests and releases
    /// the storage locks.
    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.shutdown.send(());
        self.task.await.expect("server task panicked")
    }

    /// Serves until the process is stopped.
    pub async fn wait(self) -> std::io::Result<()> {
        let _keep = self.shutdown;
        self.task.await.expect("server task panicked")
    }
}

/// Opens storage, binds the listener and starts serving in the background.
pub async fn serve(config: ServiceConfig) -> Result<RunningService, StartupError> {
    let provider: Arc<dyn valtree_core::SuggestionProvider> = Arc::from(config.provider.build()?);
    let store = Arc::new(Store::open(&config.storage_dir)?);
    let listener = TcpListener::bind(&config.bind)
        .await
        .map_err(|source| StartupError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| StartupError::Bind {
        addr: config.bind.clone(),
        source,
    })?;
    let app = router(AppState { store, provider });
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(RunningService {
        addr,
        shutdown: tx,
        task,
    })
}
