//! HTTP routes.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use malleable_core::model::{AttributeId, AttributeValue, Collection, ItemId};
use malleable_core::query::{self, truncate_for_overview};
use malleable_core::session_log::{analyze, export_matrix, LogError, Window};
use malleable_core::synthesis::{self, Resolved, SynthesisOutcome};
use malleable_core::view::{
    Catalog, DetailMultiplicity, FilterSpec, Mutation, OverviewDetailLayout, OverviewLayout, SortSpec, ViewGraph,
    ViewId, ViewNode,
};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::presets;
use crate::state::{now_ms, AppState, CachedReply, Session, Writer};

/// Characters of text shown per overview cell before truncation.
pub const CELL_BUDGET: usize = 80;
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

type Shared = Arc<AppState>;
type ApiResult = Result<Response, ServiceError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/corpora", get(list_corpora))
        .route("/sessions", post(create_session))
        .route("/sessions/{s}/graph", get(get_graph))
        .route("/sessions/{s}/views/{v}", get(get_view).patch(patch_view))
        .route("/sessions/{s}/overviews", post(add_overview))
        .route("/sessions/{s}/views/{v}/prompt", post(prompt))
        .route("/sessions/{s}/views/{v}/rows", get(rows))
        .route("/sessions/{s}/log", get(get_log))
        .route("/sessions/{s}/analytics", get(get_analytics))
        .route("/sessions/{s}/events", get(events))
        .route("/analytics/matrix", get(get_matrix))
        .with_state(state)
}

/// Optimistic-concurrency and idempotence fields accepted by every mutation.
#[derive(Debug, Default, Deserialize)]
pub struct Envelope {
    /// Replays with a seen value return the first reply without reapplying.
    #[serde(default)]
    pub client_seq: Option<u64>,
    /// Rejected with 409 unless the session log is at this seq.
    #[serde(default)]
    pub expected_seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ViewOp {
    Surface {
        attrs: Vec<AttributeId>,
        #[serde(default)]
        position: Option<usize>,
    },
    Hide {
        attrs: Vec<AttributeId>,
    },
    Sort {
        sort: Option<SortSpec>,
    },
    Filter {
        filter: FilterSpec,
    },
    RemoveFilter {
        index: usize,
    },
    Layout {
        layout: OverviewLayout,
    },
    OdLayout {
        detail: ViewId,
        layout: OverviewDetailLayout,
    },
    Multiplicity {
        multiplicity: DetailMultiplicity,
    },
    Rename {
        title: String,
    },
    MoveItem {
        to: ViewId,
        item: ItemId,
    },
    Remove,
}

#[derive(Debug, Deserialize)]
pub struct PatchRequest {
    #[serde(flatten)]
    pub op: ViewOp,
    #[serde(flatten)]
    pub envelope: Envelope,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub corpus: Option<String>,
    #[serde(default)]
    pub preset: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct AddOverview {
    #[serde(default)]
    pub collection: Option<String>,
    pub title: String,
    #[serde(default)]
    pub empty: bool,
    #[serde(flatten)]
    pub envelope: Envelope,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Resolve the prompt to attributes, generating new ones, and surface them.
    #[default]
    Query,
    /// Reformat an attribute into a new derived one.
    Transform,
    /// Fill the missing values of an attribute.
    Autofill,
}

#[derive(Debug, Deserialize)]
pub struct PromptRequest {
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub mode: PromptMode,
    #[serde(default)]
    pub attr: Option<AttributeId>,
    #[serde(flatten)]
    pub envelope: Envelope,
}

#[derive(Debug, Default, Deserialize)]
pub struct RowsQuery {
    #[serde(default)]
    pub cursor: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
    /// Item to show when the view is a detail view.
    #[serde(default)]
    pub item: Option<ItemId>,
}

#[derive(Debug, Default, Deserialize)]
pub struct WindowQuery {
    #[serde(default)]
    pub start_ms: Option<i64>,
    #[serde(default)]
    pub end_ms: Option<i64>,
}

fn json_reply(status: StatusCode, body: Value) -> Response {
    (status, Json(body)).into_response()
}

async fn list_corpora(State(state): State<Shared>) -> Json<Value> {
    let corpora: Vec<Value> = state
        .catalog
        .iter()
        .map(|c| {
            let presets: Vec<&str> =
                presets::PRESETS.iter().filter(|p| p.collection_id == c.collection_id()).map(|p| p.name).collect();
            json!({
                "collection_id": c.collection_id(),
                "title": c.title(),
                "item_count": c.items().len(),
                "schema": c.schema(),
                "presets": presets,
            })
        })
        .collect();
    Json(Value::Array(corpora))
}

async fn create_session(State(state): State<Shared>, body: Option<Json<CreateSession>>) -> ApiResult {
    let req = body.map(|Json(b)| b).unwrap_or(CreateSession { corpus: None, preset: None });
    let session = state.create_session(req.corpus.as_deref(), req.preset.as_deref())?;
    let snap = session.snapshot();
    Ok(json_reply(
        StatusCode::CREATED,
        json!({
            "session_id": session.id,
            "corpus": session.corpus,
            "preset": session.preset,
            "seq": snap.seq,
            "graph": &*snap.graph,
        }),
    ))
}

async fn get_graph(State(state): State<Shared>, Path(s): Path<String>) -> ApiResult {
    let session = state.session(&s)?;
    let snap = session.snapshot();
    Ok(json_reply(
        StatusCode::OK,
        json!({ "seq": snap.seq, "fingerprint": snap.graph.fingerprint(), "graph": &*snap.graph }),
    ))
}

async fn get_view(State(state): State<Shared>, Path((s, v)): Path<(String, String)>) -> ApiResult {
    let session = state.session(&s)?;
    let snap = session.snapshot();
    let node = snap.graph.node(&v)?;
    let links: Vec<_> = snap.graph.links().iter().filter(|l| l.overview == v || l.detail == v).collect();
    Ok(json_reply(StatusCode::OK, json!({ "seq": snap.seq, "view": node, "links": links })))
}

/// Returns the remembered reply for a replayed client seq, or checks the
/// expected seq for a fresh request.
fn precheck(writer: &Writer, envelope: &Envelope) -> Result<Option<Response>, ServiceError> {
    if let Some(reply) = envelope.client_seq.and_then(|cs| writer.replies.get(&cs)) {
        return Ok(Some(json_reply(reply.status, reply.body.clone())));
    }
    if let Some(expected) = envelope.expected_seq {
        let actual = writer.log.last_seq();
        if expected != actual {
            return Err(ServiceError::SeqConflict { expected, actual });
        }
    }
    Ok(None)
}

/// Logs and publishes a change computed on a copy of the graph, then
/// remembers the reply under the client seq.
fn finish(
    session: &Session,
    writer: &mut Writer,
    envelope: &Envelope,
    status: StatusCode,
    next: ViewGraph,
    mutations: Vec<Mutation>,
    mut body: Value,
) -> ApiResult {
    let events = session.commit(writer, next, mutations)?;
    body["seq"] = json!(writer.log.last_seq());
    body["events"] = json!(events);
    if let Some(cs) = envelope.client_seq {
        writer.replies.insert(cs, CachedReply { status, body: body.clone() });
    }
    Ok(json_reply(status, body))
}

fn first_page(graph: &ViewGraph, catalog: &Catalog, view: &str) -> Result<Value, ServiceError> {
    match graph.node(view) {
        Ok(node) if node.is_overview() => rows_payload(graph, catalog, view, &RowsQuery::default()),
        _ => Ok(Value::Null),
    }
}

async fn patch_view(
    State(state): State<Shared>,
    Path((s, v)): Path<(String, String)>,
    Json(req): Json<PatchRequest>,
) -> ApiResult {
    let session = state.session(&s)?;
    let mut writer = session.writer.lock().await;
    if let Some(reply) = precheck(&writer, &req.envelope)? {
        return Ok(reply);
    }
    let catalog = &state.catalog;
    let mut next = writer.graph.clone();
    let mutations = match req.op {
        ViewOp::Surface { attrs, position } => next.surface(catalog, &v, &attrs, position)?,
        ViewOp::Hide { attrs } => next.hide(catalog, &v, &attrs)?,
        ViewOp::Sort { sort } => next.set_sort(catalog, &v, sort)?,
        ViewOp::Filter { filter } => next.add_filter(catalog, &v, filter)?,
        ViewOp::RemoveFilter { index } => next.remove_filter(catalog, &v, index)?,
        ViewOp::Layout { layout } => next.set_overview_layout(catalog, &v, layout)?,
        ViewOp::OdLayout { detail, layout } => next.set_od_layout(catalog, &v, &detail, layout)?,
        ViewOp::Multiplicity { multiplicity } => next.set_detail_multiplicity(catalog, &v, multiplicity)?,
        ViewOp::Rename { title } => next.rename_overview(catalog, &v, &title)?,
        ViewOp::MoveItem { to, item } => next.move_item(catalog, &v, &to, &item)?,
        ViewOp::Remove => next.remove_overview(catalog, &v)?,
    };
    let body = json!({
        "view": next.node(&v).ok(),
        "rows": first_page(&next, catalog, &v)?,
    });
    finish(&session, &mut writer, &req.envelope, StatusCode::OK, next, mutations, body)
}

async fn add_overview(
    State(state): State<Shared>,
    Path(s): Path<String>,
    Json(req): Json<AddOverview>,
) -> ApiResult {
    let session = state.session(&s)?;
    let mut writer = session.writer.lock().await;
    if let Some(reply) = precheck(&writer, &req.envelope)? {
        return Ok(reply);
    }
    let collection = req.collection.clone().unwrap_or_else(|| session.corpus.clone());
    let mut next = writer.graph.clone();
    let (view_id, mutations) = next.add_overview(&state.catalog, &collection, &req.title, req.empty)?;
    let body = json!({ "view_id": view_id, "view": next.node(&view_id)? });
    finish(&session, &mut writer, &req.envelope, StatusCode::CREATED, next, mutations, body)
}

/// Result of the provider work for one prompt, computed off the async
/// runtime.
struct PromptWork {
    resolved: Vec<Resolved>,
    outcomes: Vec<(SynthesisOutcome, bool)>,
    surface: Vec<AttributeId>,
}

fn run_prompt(
    state: &AppState,
    collection: &Collection,
    view: &ViewNode,
    req: &PromptRequest,
) -> Result<PromptWork, ServiceError> {
    let provider = state.provider.as_ref();
    let required_attr = || {
        req.attr.clone().ok_or_else(|| ServiceError::Invalid("this prompt mode needs `attr`".into()))
    };
    match req.mode {
        PromptMode::Query => {
            let resolved = synthesis::resolve_attributes(provider, collection, &req.prompt)?;
            let all: Vec<ItemId> = collection.item_ids().cloned().collect();
            let mut outcomes = Vec::new();
            for r in &resolved {
                if let Resolved::New(d) = r {
                    outcomes.push((synthesis::generate_values(provider, collection, d, &all)?, false));
                }
            }
            let surface = resolved.iter().map(|r| r.descriptor().id.clone()).collect();
            Ok(PromptWork { resolved, outcomes, surface })
        }
        PromptMode::Transform => {
            let attr = required_attr()?;
            let items: Vec<ItemId> = if view.is_overview() {
                query::base_items(view, collection).iter().map(|i| i.item_id.clone()).collect()
            } else {
                collection.item_ids().cloned().collect()
            };
            let outcome = synthesis::transform_values(provider, collection, &attr, &req.prompt, &items)?;
            let surface = vec![outcome.descriptor.id.clone()];
            Ok(PromptWork { resolved: Vec::new(), outcomes: vec![(outcome, false)], surface })
        }
        PromptMode::Autofill => {
            let attr = required_attr()?;
            let outcome = synthesis::autofill_missing(provider, collection, &attr)?;
            let outcomes = if outcome.values.is_empty() { Vec::new() } else { vec![(outcome, true)] };
            Ok(PromptWork { resolved: Vec::new(), outcomes, surface: Vec::new() })
        }
    }
}

async fn prompt(
    State(state): State<Shared>,
    Path((s, v)): Path<(String, String)>,
    Json(req): Json<PromptRequest>,
) -> ApiResult {
    let session = state.session(&s)?;
    let mut writer = session.writer.lock().await;
    if let Some(reply) = precheck(&writer, &req.envelope)? {
        return Ok(reply);
    }
    let node = writer.graph.node(&v)?.clone();
    let collection = writer.graph.collection(&state.catalog, &node.collection_id)?.into_owned();

    // provider calls block; keep them off the async workers
    let worker_state = state.clone();
    let (req, work) = tokio::task::spawn_blocking(move || {
        let work = run_prompt(&worker_state, &collection, &node, &req);
        (req, work)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let work = work?;

    let catalog = &state.catalog;
    let cid = writer.graph.node(&v)?.collection_id.clone();
    let mut next = writer.graph.clone();
    let mut mutations = Vec::new();
    let mut failures = serde_json::Map::new();
    for (outcome, fill_missing_only) in work.outcomes {
        if !outcome.failures.is_empty() {
            failures.insert(outcome.descriptor.id.to_string(), json!(outcome.failures));
        }
        mutations.extend(next.add_column(catalog, outcome.into_column(&cid, fill_missing_only))?);
    }
    mutations.extend(next.surface(catalog, &v, &work.surface, None)?);
    let body = json!({
        "resolved": work.resolved,
        "surfaced": work.surface,
        "failures": failures,
        "view": next.node(&v)?,
        "rows": first_page(&next, catalog, &v)?,
    });
    finish(&session, &mut writer, &req.envelope, StatusCode::OK, next, mutations, body)
}

fn coordinate(value: &AttributeValue) -> Value {
    match value {
        AttributeValue::Money { amount, .. } => json!(amount.to_string()),
        AttributeValue::NotSpecified => Value::Null,
        other => other.to_corpus_json(),
    }
}

fn coords(layout: &OverviewLayout, collection: &Collection, item_id: &str) -> Value {
    let Some(item) = collection.item(item_id) else { return Value::Null };
    let get = |a: &AttributeId| coordinate(item.values.get(a).unwrap_or(&AttributeValue::NotSpecified));
    match layout {
        OverviewLayout::Scatter { x, y } => json!({ "x": get(x), "y": get(y) }),
        OverviewLayout::Timeline { date } => json!({ "t": get(date) }),
        OverviewLayout::ColorSpace { color } => match item.values.get(color) {
            Some(AttributeValue::Color(c)) => json!({ "hex": c.to_hex(), "r": c.0[0], "g": c.0[1], "b": c.0[2] }),
            _ => Value::Null,
        },
        OverviewLayout::SpatialMap { lat, lon } => json!({ "lat": get(lat), "lon": get(lon) }),
        OverviewLayout::List | OverviewLayout::Grid | OverviewLayout::Table | OverviewLayout::Hierarchy => Value::Null,
    }
}

fn row_json(row: &query::MaterializedRow, truncate: bool) -> Vec<Value> {
    row.cells
        .iter()
        .map(|c| {
            let (display, truncated) = if truncate {
                truncate_for_overview(&c.value, CELL_BUDGET)
            } else {
                (query::render(&c.value), false)
            };
            json!({ "attr": c.attr, "value": c.value, "display": display, "truncated": truncated })
        })
        .collect()
}

/// Materialized rows of a view, paginated by an offset cursor.
pub fn rows_payload(graph: &ViewGraph, catalog: &Catalog, view: &str, q: &RowsQuery) -> Result<Value, ServiceError> {
    let node = graph.node(view)?;
    let collection = graph.collection(catalog, &node.collection_id)?;
    let Some(layout) = node.overview_layout() else {
        let item = q.item.as_deref().ok_or_else(|| ServiceError::Invalid("detail rows need `item`".into()))?;
        let row = query::materialize_detail(node, &collection, item)
            .ok_or_else(|| malleable_core::view::ViewError::UnknownItem { view: view.into(), item: item.into() })?;
        return Ok(json!({
            "view_id": view,
            "role": "detail",
            "rows": [{ "item_id": row.item_id, "cells": row_json(&row, false) }],
            "next_cursor": null,
        }));
    };
    let all = query::materialize(node, &collection);
    let start: usize = match &q.cursor {
        Some(c) => c.parse().map_err(|_| ServiceError::Invalid(format!("bad cursor `{c}`")))?,
        None => 0,
    };
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let end = (start + limit).min(all.len());
    let page: Vec<Value> = all
        .get(start.min(all.len())..end)
        .unwrap_or_default()
        .iter()
        .map(|r| {
            json!({
                "item_id": r.item_id,
                "cells": row_json(r, true),
                "coords": coords(layout, &collection, &r.item_id),
            })
        })
        .collect();
    let od_layouts: Vec<_> = graph.details_of(view).collect();
    Ok(json!({
        "view_id": view,
        "role": "overview",
        "layout": layout,
        "od_layouts": od_layouts,
        "total": all.len(),
        "rows": page,
        "next_cursor": (end < all.len()).then(|| end.to_string()),
    }))
}

async fn rows(
    State(state): State<Shared>,
    Path((s, v)): Path<(String, String)>,
    Query(q): Query<RowsQuery>,
) -> ApiResult {
    let session = state.session(&s)?;
    let snap = session.snapshot();
    let mut body = rows_payload(&snap.graph, &state.catalog, &v, &q)?;
    body["seq"] = json!(snap.seq);
    Ok(json_reply(StatusCode::OK, body))
}

async fn get_log(State(state): State<Shared>, Path(s): Path<String>) -> ApiResult {
    let session = state.session(&s)?;
    let text = session.writer.lock().await.log.to_ndjson();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn get_analytics(
    State(state): State<Shared>,
    Path(s): Path<String>,
    Query(q): Query<WindowQuery>,
) -> ApiResult {
    let session = state.session(&s)?;
    let writer = session.writer.lock().await;
    let window = Window { start_ms: q.start_ms.unwrap_or(session.created_at), end_ms: q.end_ms };
    let analytics = match analyze(writer.log.events(), window) {
        // a session without events so far runs until now
        Err(LogError::EmptyWindow) if q.end_ms.is_none() => {
            analyze(writer.log.events(), Window { end_ms: Some(now_ms().max(window.start_ms + 1)), ..window })?
        }
        other => other?,
    };
    Ok(json_reply(StatusCode::OK, json!(analytics)))
}

async fn get_matrix(State(state): State<Shared>) -> ApiResult {
    let mut logs = Vec::new();
    for session in state.sessions() {
        let events = session.writer.lock().await.log.events().to_vec();
        logs.push((session.id.clone(), events));
    }
    let csv = export_matrix(&logs).to_csv();
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

fn snapshot_event(session: &Session) -> Event {
    let snap = session.snapshot();
    Event::default()
        .event("snapshot")
        .json_data(json!({ "seq": snap.seq, "graph": &*snap.graph }))
        .expect("snapshot serializes")
}

/// Push channel: a `snapshot` event first, then one `diff` event per
/// change. Diffs with a seq at or below the snapshot's are already included
/// in it. A subscriber that falls behind gets a fresh `snapshot`.
async fn events(
    State(state): State<Shared>,
    Path(s): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let session = state.session(&s)?;
    let rx = session.subscribe();
    let first = snapshot_event(&session);
    let rest = stream::unfold((rx, session), |(mut rx, session)| async move {
        let event = match rx.recv().await {
            Ok(frame) => Event::default().event("diff").json_data(&frame).expect("frame serializes"),
            Err(RecvError::Lagged(_)) => snapshot_event(&session),
            Err(RecvError::Closed) => return None,
        };
        Some((Ok(event), (rx, session)))
    });
    Ok(Sse::new(stream::once(async move { Ok(first) }).chain(rest)).keep_alive(KeepAlive::default()))
}
