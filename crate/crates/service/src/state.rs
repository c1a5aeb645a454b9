//! Loaded corpora, the provider, and live sessions.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::http::StatusCode;
use malleable_core::model::{ingest_corpus, CollectionId};
use malleable_core::session_log::{CustomizationEvent, SessionLog};
use malleable_core::synthesis::{
    HttpProvider, HttpSettings, MockProvider, MockRule, SynthesisProvider, TemplateKind,
};
use malleable_core::view::{Catalog, Mutation, ViewGraph};
use serde::Serialize;
use serde_json::Value;
use tokio::sync::{broadcast, Mutex};

use crate::config::{Config, ProviderKind};
use crate::error::ServiceError;
use crate::presets;

/// Frames buffered per push subscriber before it must resync.
pub const PUSH_BUFFER: usize = 64;

pub fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

/// One graph change pushed to subscribers.
#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    pub seq: u64,
    pub diff: json_patch::Patch,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub seq: u64,
    pub graph: Arc<ViewGraph>,
}

/// Reply remembered for a client sequence number.
#[derive(Debug, Clone)]
pub struct CachedReply {
    pub status: StatusCode,
    pub body: Value,
}

#[derive(Debug)]
pub struct Writer {
    pub graph: ViewGraph,
    pub log: SessionLog,
    pub replies: BTreeMap<u64, CachedReply>,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub corpus: CollectionId,
    pub preset: String,
    pub created_at: i64,
    pub initial: ViewGraph,
    pub writer: Mutex<Writer>,
    snapshot: RwLock<Snapshot>,
    tx: broadcast::Sender<Frame>,
}

impl Session {
    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Frame> {
        self.tx.subscribe()
    }

    /// Logs mutations already applied to `next`, then publishes it. The
    /// writer's graph only changes once the log accepted every event.
    pub fn commit(
        &self,
        writer: &mut Writer,
        next: ViewGraph,
        mutations: Vec<Mutation>,
    ) -> Result<Vec<CustomizationEvent>, ServiceError> {
        if mutations.is_empty() {
            return Ok(Vec::new());
        }
        let events = writer.log.record(now_ms(), mutations)?.to_vec();
        let before = serde_json::to_value(&writer.graph).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let after = serde_json::to_value(&next).map_err(|e| ServiceError::Internal(e.to_string()))?;
        writer.graph = next;
        let seq = writer.log.last_seq();
        *self.snapshot.write().expect("snapshot lock") = Snapshot { seq, graph: Arc::new(writer.graph.clone()) };
        // no subscribers is fine
        let _ = self.tx.send(Frame { seq, diff: json_patch::diff(&before, &after) });
        Ok(events)
    }
}

pub struct AppState {
    pub catalog: Catalog,
    pub provider: Arc<dyn SynthesisProvider>,
    pub default_preset: Option<String>,
    pub log_dir: Option<PathBuf>,
    pub fsync: bool,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    counter: AtomicU64,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("catalog", &self.catalog).finish_non_exhaustive()
    }
}

/// Extra mock rules for the bundled shopping and booking corpora.
pub fn corpus_mock_rules() -> Vec<MockRule> {
    use TemplateKind::*;
    vec![
        MockRule::fixed(Resolve, "how popular", "[Number of Watchers, Items Sold]"),
        MockRule::fixed(Resolve, "breakfast", "[Breakfast Available]"),
        MockRule::fixed(Resolve, "shipping", "[Shipping Fee]"),
        MockRule::template(Transform, "brand name and its condition", "[${Brand}, ${Product Condition}]"),
        MockRule::computed(Transform, "keep it the same", |call| format!("[{}]", call.original_value.unwrap_or_default())),
        MockRule::template(Generate, "material", "[${Material}]"),
    ]
}

impl AppState {
    pub fn from_config(config: &Config) -> Result<Self, ServiceError> {
        if config.corpora.is_empty() {
            return Err(ServiceError::NoCorpus);
        }
        let mut catalog = Catalog::new();
        for path in &config.corpora {
            let load_err = |reason: String| ServiceError::CorpusLoad { path: path.display().to_string(), reason };
            let bytes = std::fs::read(path).map_err(|e| load_err(e.to_string()))?;
            let collection = ingest_corpus(&bytes).map_err(|e| load_err(e.to_string()))?;
            catalog.insert(collection);
        }
        let provider: Arc<dyn SynthesisProvider> = match config.provider {
            ProviderKind::Mock => Arc::new(MockProvider::new().with_rules(corpus_mock_rules())),
            ProviderKind::Http => {
                let base_url = config.http_base_url.clone().ok_or(ServiceError::MissingProviderUrl)?;
                Arc::new(HttpProvider::new(HttpSettings {
                    base_url,
                    api_key_env: config.http_api_key_env.clone(),
                    model: config.http_model.clone(),
                }))
            }
        };
        let state = Self {
            catalog,
            provider,
            default_preset: config.preset.clone(),
            log_dir: config.log_dir.clone(),
            fsync: config.fsync,
            sessions: RwLock::new(HashMap::new()),
            counter: AtomicU64::new(0),
        };
        // every preset whose corpus is loaded must validate against it
        for preset in presets::PRESETS.iter().filter(|p| state.catalog.get(p.collection_id).is_some()) {
            preset.build(&state.catalog).map_err(|e| ServiceError::PresetMismatch {
                preset: preset.name.into(),
                corpus: preset.collection_id.into(),
                reason: e.to_string(),
            })?;
        }
        if let Some(name) = &state.default_preset {
            let preset = presets::find(name).ok_or_else(|| ServiceError::UnknownPreset(name.clone()))?;
            if state.catalog.get(preset.collection_id).is_none() {
                return Err(ServiceError::UnknownCorpus(preset.collection_id.into()));
            }
        }
        Ok(state)
    }

    pub fn with_provider(mut self, provider: Arc<dyn SynthesisProvider>) -> Self {
        self.provider = provider;
        self
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.into()))
    }

    pub fn sessions(&self) -> Vec<Arc<Session>> {
        let mut all: Vec<Arc<Session>> = self.sessions.read().expect("sessions lock").values().cloned().collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        all
    }

    /// Starts a session. Without an explicit corpus or preset the configured
    /// default preset is used, then the first loaded corpus.
    pub fn create_session(&self, corpus: Option<&str>, preset: Option<&str>) -> Result<Arc<Session>, ServiceError> {
        let preset = preset.map(str::to_string).or_else(|| match corpus {
            Some(c) => presets::PRESETS.iter().find(|p| p.collection_id == c).map(|p| p.name.to_string()),
            None => self.default_preset.clone(),
        });
        let (corpus, preset_name, graph) = match preset.as_deref() {
            Some(name) => {
                let p = presets::find(name).ok_or_else(|| ServiceError::UnknownPreset(name.into()))?;
                if corpus.is_some_and(|c| c != p.collection_id) {
                    return Err(ServiceError::Invalid(format!("preset `{name}` is for corpus `{}`", p.collection_id)));
                }
                if self.catalog.get(p.collection_id).is_none() {
                    return Err(ServiceError::UnknownCorpus(p.collection_id.into()));
                }
                (p.collection_id.to_string(), p.name.to_string(), p.build(&self.catalog)?)
            }
            None => {
                let cid = match corpus {
                    Some(c) => c.to_string(),
                    None => self.catalog.iter().next().expect("at least one corpus").collection_id().to_string(),
                };
                if self.catalog.get(&cid).is_none() {
                    return Err(ServiceError::UnknownCorpus(cid));
                }
                let graph = presets::generic(&self.catalog, &cid)?;
                (cid, "generic".to_string(), graph)
            }
        };

        let created_at = now_ms();
        let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("s{created_at}-{n}");
        let log = match &self.log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| ServiceError::Internal(e.to_string()))?;
                SessionLog::open(&dir.join(format!("{id}.ndjson")), &id, self.fsync)?
            }
            None => SessionLog::in_memory(&id),
        };
        let (tx, _) = broadcast::channel(PUSH_BUFFER);
        let session = Arc::new(Session {
            id: id.clone(),
            corpus,
            preset: preset_name,
            created_at,
            initial: graph.clone(),
            snapshot: RwLock::new(Snapshot { seq: 0, graph: Arc::new(graph.clone()) }),
            writer: Mutex::new(Writer { graph, log, replies: BTreeMap::new() }),
            tx,
        });
        self.sessions.write().expect("sessions lock").insert(id, session.clone());
        Ok(session)
    }
}
