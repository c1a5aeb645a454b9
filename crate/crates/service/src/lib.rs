//! HTTP service over the overview-detail engine: corpus loading, sessions
//! with NDJSON logs, presets, prompt synthesis, and a push channel carrying
//! JSON-patch diffs of each session's view graph.

pub mod api;
pub mod config;
pub mod error;
pub mod presets;
pub mod state;

use std::sync::Arc;

pub use api::router;
pub use config::Config;
pub use error::ServiceError;
pub use state::AppState;

/// Builds the router for a configuration. Fails when no corpus loads.
pub fn app(config: &Config) -> Result<(axum::Router, Arc<AppState>), ServiceError> {
    let state = Arc::new(AppState::from_config(config)?);
    Ok((router(state.clone()), state))
}
