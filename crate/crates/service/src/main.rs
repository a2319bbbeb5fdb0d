use std::time::Duration;

use anyhow::{Context, Result};
use preclin_service::store::SessionStore;
use preclin_service::{router, AppState, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Configuration comes from the environment:
/// `PRECLIN_BIND` (default `127.0.0.1:8080`), `PRECLIN_DATA_DIR` (default
/// `./sessions`) and `PRECLIN_FIT_TIMEOUT_SECS` (default 120).
#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into())).init();

    let bind = std::env::var("PRECLIN_BIND").unwrap_or_else(|_| "127.0.0.1:8080".into());
    let dir = std::env::var("PRECLIN_DATA_DIR").unwrap_or_else(|_| "sessions".into());
    let fit_timeout = match std::env::var("PRECLIN_FIT_TIMEOUT_SECS") {
        Ok(s) => Duration::from_secs(s.parse().context("PRECLIN_FIT_TIMEOUT_SECS")?),
        Err(_) => ServiceConfig::default().fit_timeout,
    };

    let store = SessionStore::open(&dir).with_context(|| format!("opening session store {dir}"))?;
    let app = router(AppState::new(store, ServiceConfig { fit_timeout }));
    let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
