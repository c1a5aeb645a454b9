use std::path::PathBuf;

use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "malleable-service", about = "Serve customizable overview-detail sessions over HTTP")]
pub struct Config {
    #[arg(long, env = "MALLEABLE_PORT", default_value_t = 8080)]
    pub port: u16,

    /// Corpus JSON files to load. At least one is required.
    #[arg(long = "corpus", env = "MALLEABLE_CORPUS", value_delimiter = ',')]
    pub corpora: Vec<PathBuf>,

    /// Preset applied to new sessions when the request names none.
    #[arg(long, env = "MALLEABLE_PRESET")]
    pub preset: Option<String>,

    #[arg(long, env = "MALLEABLE_PROVIDER", value_enum, default_value_t = ProviderKind::Mock)]
    pub provider: ProviderKind,

    #[arg(long = "http-base-url", env = "MALLEABLE_HTTP_BASE_URL")]
    pub http_base_url: Option<String>,

    /// Environment variable that holds the provider API key.
    #[arg(long = "http-api-key-env", env = "MALLEABLE_HTTP_API_KEY_ENV", default_value = "MALLEABLE_API_KEY")]
    pub http_api_key_env: String,

    #[arg(long = "http-model", env = "MALLEABLE_HTTP_MODEL", default_value = "default")]
    pub http_model: String,

    /// Directory for per-session NDJSON logs; logs stay in memory without it.
    #[arg(long = "log-dir", env = "MALLEABLE_LOG_DIR")]
    pub log_dir: Option<PathBuf>,

    /// fsync after every appended event.
    #[arg(long, env = "MALLEABLE_FSYNC")]
    pub fsync: bool,
}

impl Config {
    pub fn with_corpora(corpora: Vec<PathBuf>) -> Self {
        Self {
            port: 0,
            corpora,
            preset: None,
            provider: ProviderKind::Mock,
            http_base_url: None,
            http_api_key_env: "MALLEABLE_API_KEY".into(),
            http_model: "default".into(),
            log_dir: None,
            fsync: false,
        }
    }
}
