//! Append-only customization log (NDJSON, one event per line), replay, and
//! the per-session analytics computed over it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::model::{AttributeId, Origin};
use crate::view::{Catalog, Mutation, ViewError, ViewGraph};

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("sequence gap: expected seq {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("event kind/dimension does not match its payload")]
    Inconsistent,
    #[error("analysis window is empty")]
    EmptyWindow,
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Content,
    Composition,
    Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Surface,
    Hide,
    Sort,
    Filter,
    AddOverview,
    RemoveOverview,
    Rename,
    MoveItem,
    OverviewLayout,
    OdLayout,
    DetailMultiplicity,
    PromptSynthesis,
}

impl EventKind {
    pub fn of(mutation: &Mutation) -> Self {
        match mutation {
            Mutation::Surface { .. } => EventKind::Surface,
            Mutation::Hide { .. } => EventKind::Hide,
            Mutation::SetSort { .. } => EventKind::Sort,
            Mutation::AddFilter { .. } | Mutation::RemoveFilter { .. } => EventKind::Filter,
            Mutation::AddOverview { .. } => EventKind::AddOverview,
            Mutation::RemoveOverview { .. } => EventKind::RemoveOverview,
            Mutation::RenameOverview { .. } => EventKind::Rename,
            Mutation::MoveItem { .. } => EventKind::MoveItem,
            Mutation::SetOverviewLayout { .. } => EventKind::OverviewLayout,
            Mutation::SetOdLayout { .. } => EventKind::OdLayout,
            Mutation::SetDetailMultiplicity { .. } => EventKind::DetailMultiplicity,
            Mutation::Synthesize { .. } => EventKind::PromptSynthesis,
        }
    }

    pub fn dimension(self) -> Dimension {
        match self {
            EventKind::Surface | EventKind::Hide | EventKind::Sort | EventKind::Filter | EventKind::PromptSynthesis => {
                Dimension::Content
            }
            EventKind::AddOverview | EventKind::RemoveOverview | EventKind::Rename | EventKind::MoveItem => {
                Dimension::Composition
            }
            EventKind::OverviewLayout | EventKind::OdLayout | EventKind::DetailMultiplicity => Dimension::Layout,
        }
    }
}

/// One logged customization. Serialized field names are part of the log
/// file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomizationEvent {
    pub seq: u64,
    /// UTC milliseconds.
    pub ts: i64,
    pub session: String,
    pub dimension: Dimension,
    pub kind: EventKind,
    pub payload: Mutation,
    pub attrs: Vec<AttributeId>,
}

impl CustomizationEvent {
    pub fn new(seq: u64, ts: i64, session: &str, payload: Mutation) -> Self {
        let kind = EventKind::of(&payload);
        Self {
            seq,
            ts,
            session: session.to_string(),
            dimension: kind.dimension(),
            kind,
            attrs: payload.touched_attributes(),
            payload,
        }
    }

    fn is_consistent(&self) -> bool {
        let kind = EventKind::of(&self.payload);
        self.kind == kind && self.dimension == kind.dimension()
    }
}

/// A session's event log, optionally backed by an NDJSON file.
#[derive(Debug)]
pub struct SessionLog {
    session: String,
    events: Vec<CustomizationEvent>,
    file: Option<(PathBuf, File)>,
    fsync: bool,
}

impl SessionLog {
    pub fn in_memory(session: &str) -> Self {
        Self { session: session.to_string(), events: Vec::new(), file: None, fsync: false }
    }

    /// Opens (or creates) a file-backed log. Existing content is recovered
    /// up to the last complete event; a torn tail is truncated away.
    pub fn open(path: &Path, session: &str, fsync: bool) -> Result<Self, LogError> {
        let (events, valid_len) = recover(path)?;
        let file = OpenOptions::new().create(true).append(true).read(true).open(path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        Ok(Self { session: session.to_string(), events, file: Some((path.to_path_buf(), file)), fsync })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn events(&self) -> &[CustomizationEvent] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    /// Appends an event whose seq must directly follow the last one.
    pub fn append(&mut self, event: CustomizationEvent) -> Result<(), LogError> {
        let expected = self.last_seq() + 1;
        if event.seq != expected {
            return Err(LogError::SeqGap { expected, got: event.seq });
        }
        if !event.is_consistent() {
            return Err(LogError::Inconsistent);
        }
        if let Some((_, file)) = &mut self.file {
            let mut line = serde_json::to_vec(&event)?;
            line.push(b'\n');
            file.write_all(&line)?;
            if self.fsync {
                file.sync_data()?;
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Stamps mutations with the next sequence numbers and appends them.
    pub fn record(&mut self, ts: i64, mutations: Vec<Mutation>) -> Result<&[CustomizationEvent], LogError> {
        let start = self.events.len();
        for m in mutations {
            let event = CustomizationEvent::new(self.last_seq() + 1, ts, &self.session.clone(), m);
            self.append(event)?;
        }
        Ok(&self.events[start..])
    }

    /// NDJSON text of the whole log.
    pub fn to_ndjson(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
    }
}

/// Reads the longest valid prefix of a log file. Returns the events and the
/// byte length of that prefix.
pub fn recover(path: &Path) -> Result<(Vec<CustomizationEvent>, u64), LogError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    }
    Ok(parse_prefix(&bytes))
}

/// Parses complete, well-formed, contiguous events from NDJSON bytes.
pub fn parse_prefix(bytes: &[u8]) -> (Vec<CustomizationEvent>, u64) {
    let mut events: Vec<CustomizationEvent> = Vec::new();
    let mut offset = 0usize;
    while let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') {
        let line = &bytes[offset..offset + nl];
        let parsed = serde_json::from_slice::<CustomizationEvent>(line)
            .ok()
            .filter(|e| e.seq == events.last().map_or(1, |p| p.seq + 1) && e.is_consistent());
        match parsed {
            Some(e) => events.push(e),
            None => break,
        }
        offset += nl + 1;
    }
    (events, offset as u64)
}

/// Folds a log over an initial graph.
pub fn replay(initial: &ViewGraph, catalog: &Catalog, events: &[CustomizationEvent]) -> Result<ViewGraph, ViewError> {
    let mut graph = initial.clone();
    for e in events {
        graph.apply(catalog, &e.payload)?;
    }
    Ok(graph)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_ms: i64,
    /// Explicit end; otherwise the last event in the window ends it.
    #[serde(default)]
    pub end_ms: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Hoarder,
    Minimalist,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Surfaced,
    Hid,
    Both,
}

impl Interaction {
    fn merge(self, other: Interaction) -> Interaction {
        if self == other { self } else { Interaction::Both }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Interaction::Surfaced => "surfaced",
            Interaction::Hid => "hid",
            Interaction::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAnalytics {
    /// Content counts distinct attributes interacted with; the other
    /// dimensions count operations.
    pub per_dimension_counts: BTreeMap<Dimension, u64>,
    pub total_ops: u64,
    pub distinct_attrs_touched: u64,
    pub ops_per_minute: Decimal,
    pub classification: Classification,
    pub attribute_matrix: BTreeMap<AttributeId, Interaction>,
}

pub fn analyze(events: &[CustomizationEvent], window: Window) -> Result<SessionAnalytics, LogError> {
    let in_window: Vec<&CustomizationEvent> = events
        .iter()
        .filter(|e| e.ts >= window.start_ms && window.end_ms.is_none_or(|end| e.ts <= end))
        .collect();
    let end = match window.end_ms {
        Some(end) => end,
        None => in_window.last().map(|e| e.ts).ok_or(LogError::EmptyWindow)?,
    };
    let duration_ms = end - window.start_ms;
    if duration_ms <= 0 {
        return Err(LogError::EmptyWindow);
    }

    let mut content_attrs: BTreeSet<&AttributeId> = BTreeSet::new();
    let mut all_attrs: BTreeSet<&AttributeId> = BTreeSet::new();
    let mut counts: BTreeMap<Dimension, u64> =
        [Dimension::Content, Dimension::Composition, Dimension::Layout].into_iter().map(|d| (d, 0)).collect();
    let mut matrix: BTreeMap<AttributeId, Interaction> = BTreeMap::new();
    let (mut surfaces, mut hides) = (0u64, 0u64);
    for e in &in_window {
        all_attrs.extend(&e.attrs);
        if e.dimension == Dimension::Content {
            content_attrs.extend(&e.attrs);
        } else {
            *counts.entry(e.dimension).or_default() += 1;
        }
        let interaction = match e.kind {
            EventKind::Surface => {
                surfaces += 1;
                Interaction::Surfaced
            }
            EventKind::Hide => {
                hides += 1;
                Interaction::Hid
            }
            _ => continue,
        };
        for a in &e.attrs {
            matrix.entry(a.clone()).and_modify(|m| *m = m.merge(interaction)).or_insert(interaction);
        }
    }
    counts.insert(Dimension::Content, content_attrs.len() as u64);

    let total_ops = in_window.len() as u64;
    let ops_per_minute = Decimal::from(total_ops) * Decimal::from(60_000) / Decimal::from(duration_ms);
    let classification = if hides > 0 {
        Classification::Minimalist
    } else if surfaces > 0 {
        Classification::Hoarder
    } else {
        Classification::Neither
    };
    Ok(SessionAnalytics {
        per_dimension_counts: counts,
        total_ops,
        distinct_attrs_touched: all_attrs.len() as u64,
        ops_per_minute,
        classification,
        attribute_matrix: matrix,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub attr: AttributeId,
    pub synthesized: bool,
    /// One cell per session, in column order.
    pub cells: Vec<Option<Interaction>>,
}

/// Attribute × session interaction table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTable {
    pub sessions: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

impl AttributeTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["attribute".to_string(), "origin".to_string()];
        header.extend(self.sessions.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![row.attr.to_string(), if row.synthesized { "synthesized" } else { "source" }.to_string()];
            rec.extend(row.cells.iter().map(|c| c.map_or("", Interaction::as_str).to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Builds the interaction table across sessions. Rows are ordered by how
/// many sessions touched the attribute (then by id); attributes created by
/// synthesis form a separate trailing block with the same ordering.
pub fn export_matrix(logs: &[(String, Vec<CustomizationEvent>)]) -> AttributeTable {
    let mut synthesized: BTreeSet<AttributeId> = BTreeSet::new();
    let mut per_session: Vec<BTreeMap<AttributeId, Interaction>> = Vec::new();
    for (_, events) in logs {
        for e in events {
            if let Mutation::Synthesize { column } = &e.payload {
                if !column.fill_missing_only && column.descriptor.origin != Origin::Source {
                    synthesized.insert(column.descriptor.id.clone());
                }
            }
        }
        let matrix = match events.first() {
            Some(first) => analyze(events, Window { start_ms: first.ts, end_ms: Some(i64::MAX) })
                .map(|a| a.attribute_matrix)
                .unwrap_or_default(),
            None => BTreeMap::new(),
        };
        per_session.push(matrix);
    }
    let attrs: BTreeSet<&AttributeId> = per_session.iter().flat_map(|m| m.keys()).collect();
    let mut rows: Vec<MatrixRow> = attrs
        .into_iter()
        .map(|a| MatrixRow {
            attr: a.clone(),
            synthesized: synthesized.contains(a),
            cells: per_session.iter().map(|m| m.get(a).copied()).collect(),
        })
        .collect();
    rows.sort_by(|a, b| {
        let touched = |r: &MatrixRow| r.cells.iter().filter(|c| c.is_some()).count();
        a.synthesized
            .cmp(&b.synthesized)
            .then_with(|| touched(b).cmp(&touched(a)))
            .then_with(|| a.attr.cmp(&b.attr))
    });
    AttributeTable { sessions: logs.iter().map(|(s, _)| s.clone()).collect(), rows }
}
