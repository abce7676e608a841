//! An in-process server on an ephemeral port, for simulations and tests that
//! want the real HTTP pipeline without a separate process.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use anyhow::{Context, Result};
use feedlab_core::feed::HttpRankerTransport;
use feedlab_core::journal::{Journal, MemoryJournal};
use feedlab_core::{Platform, PlatformConfig};
use feedlab_server::AppState;
use tokio::sync::oneshot;

use crate::client::ApiClient;

pub struct LocalServer {
    addr: SocketAddr,
    platform: Arc<Platform>,
    api_key: Option<String>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl LocalServer {
    /// A fresh server backed by an in-memory journal.
    pub fn start() -> Result<Self> {
        let platform = Platform::open(
            Box::new(MemoryJournal::new()),
            Arc::new(HttpRankerTransport::default()),
            PlatformConfig::new(b"local-secret".to_vec()),
        )?;
        Self::with_platform(Arc::new(platform), None)
    }

    pub fn with_journal(journal: Box<dyn Journal>, config: PlatformConfig) -> Result<Self> {
        let platform = Platform::open(journal, Arc::new(HttpRankerTransport::default()), config)?;
        Self::with_platform(Arc::new(platform), None)
    }

    pub fn with_platform(platform: Arc<Platform>, api_key: Option<String>) -> Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .context("building tokio runtime")?;
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .context("binding local server")?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel();
        let state = AppState {
            platform: platform.clone(),
            api_key: api_key.clone(),
        };
        let thread = std::thread::spawn(move || {
            let result = runtime.block_on(feedlab_server::serve_until(listener, state, async {
                let _ = rx.await;
            }));
            if let Err(e) = result {
                tracing::error!(error = %e, "local server stopped");
            }
        });
        Ok(Self {
            addr,
            platform,
            api_key,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn client(&self) -> ApiClient {
        ApiClient::new(self.url(), self.api_key.clone())
    }

    pub fn platform(&self) -> &Arc<Platform> {
        &self.platform
    }
}

impl Drop for LocalServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
