//! View configuration: the mutable, event-sourced description of which
//! attributes each view shows, how overviews and detail views compose, and
//! which layouts are active.
//!
//! Every customization is expressed as one or more [`Mutation`]s. The graph
//! is a pure fold over mutations: [`ViewGraph::apply`] is the only code path
//! that changes it, both for live edits and for log replay.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{
    AttributeDescriptor, AttributeId, AttributeValue, Collection, CollectionId, ItemId, ModelError, Origin, ValueKind,
};

pub type ViewId = String;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ViewError {
    #[error("unknown view `{0}`")]
    UnknownView(ViewId),
    #[error("unknown attribute `{attr}` for view `{view}`")]
    UnknownAttribute { view: ViewId, attr: AttributeId },
    #[error("unknown collection `{0}`")]
    UnknownCollection(CollectionId),
    #[error("unknown item `{item}` in view `{view}`")]
    UnknownItem { view: ViewId, item: ItemId },
    #[error("filter index {index} out of range for view `{view}`")]
    IndexOutOfRange { view: ViewId, index: usize },
    #[error("view `{0}` is not an overview")]
    NotAnOverview(ViewId),
    #[error("view `{0}` is not a detail view")]
    NotADetail(ViewId),
    #[error("cannot remove the last overview")]
    LastOverview,
    #[error("layout binding mismatch on `{attr}`: expected {expected}")]
    BindingKindMismatch { attr: AttributeId, expected: &'static str },
    #[error("range filter on `{attr}` needs a number, money, or date attribute and matching bounds")]
    RangeKindMismatch { attr: AttributeId },
    #[error("view `{0}` shows a base collection and cannot receive items")]
    ImmutableTarget(ViewId),
    #[error("views `{0}` and `{1}` are bound to different collections")]
    CollectionMismatch(ViewId, ViewId),
    #[error("view `{0}` already exists")]
    DuplicateView(ViewId),
    #[error("composition would create a cycle through `{0}`")]
    Cycle(ViewId),
    #[error("no link between `{overview}` and `{detail}`")]
    UnknownLink { overview: ViewId, detail: ViewId },
    #[error("invalid synthesized column: {0}")]
    InvalidColumn(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortSpec {
    pub attr: AttributeId,
    pub direction: SortDirection,
}

impl SortSpec {
    pub fn asc(attr: AttributeId) -> Self {
        Self { attr, direction: SortDirection::Asc }
    }

    pub fn desc(attr: AttributeId) -> Self {
        Self { attr, direction: SortDirection::Desc }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    Equals { value: AttributeValue },
    /// Case-insensitive substring match on the rendered value.
    Contains { text: String },
    /// Inclusive bounds; either side may be open.
    Range {
        #[serde(default)]
        lo: Option<AttributeValue>,
        #[serde(default)]
        hi: Option<AttributeValue>,
    },
    IsTrue,
    IsNotSpecified,
    Negate { inner: Box<Predicate> },
}

impl Predicate {
    pub fn negate(self) -> Self {
        Predicate::Negate { inner: Box::new(self) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub attr: AttributeId,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OverviewLayout {
    List,
    Grid,
    Table,
    Hierarchy,
    SpatialMap { lat: AttributeId, lon: AttributeId },
    Timeline { date: AttributeId },
    Scatter { x: AttributeId, y: AttributeId },
    ColorSpace { color: AttributeId },
}

impl OverviewLayout {
    pub fn bound_attributes(&self) -> Vec<&AttributeId> {
        match self {
            OverviewLayout::List | OverviewLayout::Grid | OverviewLayout::Table | OverviewLayout::Hierarchy => vec![],
            OverviewLayout::SpatialMap { lat, lon } => vec![lat, lon],
            OverviewLayout::Timeline { date } => vec![date],
            OverviewLayout::Scatter { x, y } => vec![x, y],
            OverviewLayout::ColorSpace { color } => vec![color],
        }
    }

    /// Checks each binding against the kind of its attribute.
    pub fn validate<'a>(
        &self,
        lookup: impl Fn(&AttributeId) -> Option<&'a AttributeDescriptor>,
    ) -> Result<(), ViewError> {
        let check = |id: &AttributeId, ok: fn(ValueKind) -> bool, expected: &'static str| {
            match lookup(id) {
                Some(desc) if ok(desc.value_kind) => Ok(()),
                _ => Err(ViewError::BindingKindMismatch { attr: id.clone(), expected }),
            }
        };
        match self {
            OverviewLayout::List | OverviewLayout::Grid | OverviewLayout::Table | OverviewLayout::Hierarchy => Ok(()),
            OverviewLayout::SpatialMap { lat, lon } => {
                check(lat, |k| k == ValueKind::Number, "number latitude")?;
                check(lon, |k| k == ValueKind::Number, "number longitude")
            }
            OverviewLayout::Timeline { date } => check(date, |k| k == ValueKind::Date, "date"),
            OverviewLayout::Scatter { x, y } => {
                check(x, ValueKind::is_numeric, "number or money")?;
                check(y, ValueKind::is_numeric, "number or money")
            }
            OverviewLayout::ColorSpace { color } => check(color, |k| k == ValueKind::Color, "color"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverviewDetailLayout {
    NewPage,
    SideBySide,
    InPlaceDropdown,
    InPlaceReplace,
    UnderOverview,
    AboveOverviewPopup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetailMultiplicity {
    #[default]
    OneAtATime,
    ManyAtATime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ViewKind {
    Overview {
        layout: OverviewLayout,
        /// `None` shows the whole (immutable) base collection; `Some` is a
        /// user collection with its own membership list.
        #[serde(default)]
        members: Option<Vec<ItemId>>,
    },
    Detail {
        multiplicity: DetailMultiplicity,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewNode {
    pub view_id: ViewId,
    pub title: String,
    pub collection_id: CollectionId,
    pub surfaced: Vec<AttributeId>,
    pub hidden: BTreeSet<AttributeId>,
    #[serde(default)]
    pub sort: Option<SortSpec>,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
    #[serde(flatten)]
    pub kind: ViewKind,
}

impl ViewNode {
    pub fn overview(view_id: &str, collection_id: &str, title: &str, layout: OverviewLayout) -> Self {
        Self {
            view_id: view_id.to_string(),
            title: title.to_string(),
            collection_id: collection_id.to_string(),
            surfaced: Vec::new(),
            hidden: BTreeSet::new(),
            sort: None,
            filters: Vec::new(),
            kind: ViewKind::Overview { layout, members: None },
        }
    }

    pub fn detail(view_id: &str, collection_id: &str, title: &str, multiplicity: DetailMultiplicity) -> Self {
        Self {
            kind: ViewKind::Detail { multiplicity },
            ..Self::overview(view_id, collection_id, title, OverviewLayout::List)
        }
    }

    pub fn with_surfaced(mut self, attrs: &[AttributeId]) -> Self {
        self.surfaced = attrs.to_vec();
        self
    }

    /// Turns the overview into a user collection with the given members.
    pub fn with_members(mut self, items: Vec<ItemId>) -> Self {
        if let ViewKind::Overview { members, .. } = &mut self.kind {
            *members = Some(items);
        }
        self
    }

    pub fn is_overview(&self) -> bool {
        matches!(self.kind, ViewKind::Overview { .. })
    }

    pub fn overview_layout(&self) -> Option<&OverviewLayout> {
        match &self.kind {
            ViewKind::Overview { layout, .. } => Some(layout),
            ViewKind::Detail { .. } => None,
        }
    }

    pub fn members(&self) -> Option<&[ItemId]> {
        match &self.kind {
            ViewKind::Overview { members, .. } => members.as_deref(),
            ViewKind::Detail { .. } => None,
        }
    }

    /// Whether the item is visible in this view before filtering.
    pub fn contains_item(&self, collection: &Collection, item_id: &str) -> bool {
        collection.item(item_id).is_some()
            && self.members().is_none_or(|m| m.iter().any(|id| id == item_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub overview: ViewId,
    pub detail: ViewId,
    pub layout: OverviewDetailLayout,
}

/// Session-scoped attribute column produced by synthesis (new attribute,
/// reformatted attribute, or autofilled values for an existing one).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedColumn {
    pub collection_id: CollectionId,
    pub descriptor: AttributeDescriptor,
    pub values: BTreeMap<ItemId, AttributeValue>,
    /// Autofill: only absent or `NotSpecified` cells take the new values.
    #[serde(default)]
    pub fill_missing_only: bool,
}

/// Ingested collections, shared read-only across sessions.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    collections: BTreeMap<CollectionId, Arc<Collection>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, collection: Collection) -> Arc<Collection> {
        let collection = Arc::new(collection);
        self.collections.insert(collection.collection_id().to_string(), collection.clone());
        collection
    }

    pub fn get(&self, collection_id: &str) -> Option<&Arc<Collection>> {
        self.collections.get(collection_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Collection>> {
        self.collections.values()
    }
}

/// One atomic, logged change to a [`ViewGraph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Surface {
        view: ViewId,
        attr: AttributeId,
        #[serde(default)]
        position: Option<usize>,
    },
    Hide {
        view: ViewId,
        attr: AttributeId,
    },
    SetSort {
        view: ViewId,
        sort: Option<SortSpec>,
    },
    AddFilter {
        view: ViewId,
        filter: FilterSpec,
    },
    RemoveFilter {
        view: ViewId,
        index: usize,
        removed: FilterSpec,
    },
    AddOverview {
        view: ViewId,
        collection: CollectionId,
        title: String,
        surfaced: Vec<AttributeId>,
        links: Vec<Link>,
    },
    RemoveOverview {
        view: ViewId,
        /// The removed node and its links, kept so the removal can be undone.
        snapshot: ViewNode,
        links: Vec<Link>,
    },
    RenameOverview {
        view: ViewId,
        title: String,
    },
    MoveItem {
        from: ViewId,
        to: ViewId,
        item: ItemId,
        /// True when the source is a base collection (membership is kept).
        copy: bool,
    },
    SetOverviewLayout {
        view: ViewId,
        layout: OverviewLayout,
    },
    SetOdLayout {
        overview: ViewId,
        detail: ViewId,
        layout: OverviewDetailLayout,
    },
    SetDetailMultiplicity {
        view: ViewId,
        multiplicity: DetailMultiplicity,
    },
    Synthesize {
        column: SynthesizedColumn,
    },
}

impl Mutation {
    /// Attributes touched by this mutation, for the session log.
    pub fn touched_attributes(&self) -> Vec<AttributeId> {
        match self {
            Mutation::Surface { attr, .. } | Mutation::Hide { attr, .. } => vec![attr.clone()],
            Mutation::SetSort { sort, .. } => sort.iter().map(|s| s.attr.clone()).collect(),
            Mutation::AddFilter { filter, .. } => vec![filter.attr.clone()],
            Mutation::RemoveFilter { removed, .. } => vec![removed.attr.clone()],
            Mutation::SetOverviewLayout { layout, .. } => layout.bound_attributes().into_iter().cloned().collect(),
            Mutation::Synthesize { column } => vec![column.descriptor.id.clone()],
            Mutation::AddOverview { .. }
            | Mutation::RemoveOverview { .. }
            | Mutation::RenameOverview { .. }
            | Mutation::MoveItem { .. }
            | Mutation::SetOdLayout { .. }
            | Mutation::SetDetailMultiplicity { .. } => vec![],
        }
    }
}

/// The full view configuration of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ViewGraph {
    nodes: BTreeMap<ViewId, ViewNode>,
    links: Vec<Link>,
    /// (parent detail, child overview) pairs.
    nesting: BTreeSet<(ViewId, ViewId)>,
    columns: Vec<SynthesizedColumn>,
    /// Surfaced set a new overview of each collection starts with.
    defaults: BTreeMap<CollectionId, Vec<AttributeId>>,
    next_serial: u64,
}

impl ViewGraph {
    pub fn new() -> Self {
        Self::default()
    }

    // ---- construction (presets) ----

    pub fn insert_view(&mut self, catalog: &Catalog, node: ViewNode) -> Result<(), ViewError> {
        if self.nodes.contains_key(&node.view_id) {
            return Err(ViewError::DuplicateView(node.view_id));
        }
        self.check_node(catalog, &node)?;
        self.nodes.insert(node.view_id.clone(), node);
        Ok(())
    }

    pub fn link(&mut self, overview: &str, detail: &str, layout: OverviewDetailLayout) -> Result<(), ViewError> {
        let o = self.node(overview)?;
        let d = self.node(detail)?;
        if !o.is_overview() {
            return Err(ViewError::NotAnOverview(overview.into()));
        }
        if d.is_overview() {
            return Err(ViewError::NotADetail(detail.into()));
        }
        if o.collection_id != d.collection_id {
            return Err(ViewError::CollectionMismatch(overview.into(), detail.into()));
        }
        let mut next = self.clone();
        next.links.retain(|l| !(l.overview == overview && l.detail == detail));
        next.links.push(Link { overview: overview.into(), detail: detail.into(), layout });
        next.links.sort_by(|a, b| (&a.overview, &a.detail).cmp(&(&b.overview, &b.detail)));
        next.check_acyclic()?;
        *self = next;
        Ok(())
    }

    /// Embeds an overview inside a detail view.
    pub fn nest(&mut self, parent_detail: &str, child_overview: &str) -> Result<(), ViewError> {
        if self.node(parent_detail)?.is_overview() {
            return Err(ViewError::NotADetail(parent_detail.into()));
        }
        if !self.node(child_overview)?.is_overview() {
            return Err(ViewError::NotAnOverview(child_overview.into()));
        }
        let mut next = self.clone();
        next.nesting.insert((parent_detail.into(), child_overview.into()));
        next.check_acyclic()?;
        *self = next;
        Ok(())
    }

    pub fn set_default_surfaced(&mut self, collection_id: &str, attrs: Vec<AttributeId>) {
        self.defaults.insert(collection_id.to_string(), attrs);
    }

    /// Full invariant check, used when loading presets.
    pub fn validate(&self, catalog: &Catalog) -> Result<(), ViewError> {
        for node in self.nodes.values() {
            self.check_node(catalog, node)?;
        }
        for link in &self.links {
            if !self.node(&link.overview)?.is_overview() {
                return Err(ViewError::NotAnOverview(link.overview.clone()));
            }
            if self.node(&link.detail)?.is_overview() {
                return Err(ViewError::NotADetail(link.detail.clone()));
            }
        }
        for (cid, attrs) in &self.defaults {
            for a in attrs {
                if self.descriptor(catalog, cid, a)?.is_none() {
                    return Err(ViewError::UnknownAttribute { view: format!("default:{cid}"), attr: a.clone() });
                }
            }
        }
        self.check_acyclic()
    }

    fn check_node(&self, catalog: &Catalog, node: &ViewNode) -> Result<(), ViewError> {
        if catalog.get(&node.collection_id).is_none() {
            return Err(ViewError::UnknownCollection(node.collection_id.clone()));
        }
        for a in node.surfaced.iter().chain(&node.hidden) {
            self.require_attr(catalog, node, a)?;
        }
        if node.surfaced.iter().any(|a| node.hidden.contains(a)) {
            return Err(ViewError::InvalidColumn(format!("view `{}` surfaces a hidden attribute", node.view_id)));
        }
        if let Some(layout) = node.overview_layout() {
            self.check_layout(catalog, node, layout)?;
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<(), ViewError> {
        let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for l in &self.links {
            edges.entry(&l.overview).or_default().push(&l.detail);
        }
        for (parent, child) in &self.nesting {
            edges.entry(parent).or_default().push(child);
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        fn dfs<'a>(
            n: &'a str,
            edges: &BTreeMap<&'a str, Vec<&'a str>>,
            state: &mut BTreeMap<&'a str, u8>,
        ) -> Result<(), ViewError> {
            match state.get(n) {
                Some(1) => return Err(ViewError::Cycle(n.to_string())),
                Some(2) => return Ok(()),
                _ => {}
            }
            state.insert(n, 1);
            for next in edges.get(n).into_iter().flatten() {
                dfs(next, edges, state)?;
            }
            state.insert(n, 2);
            Ok(())
        }
        for n in edges.keys() {
            dfs(n, &edges, &mut state)?;
        }
        Ok(())
    }

    // ---- queries ----

    pub fn nodes(&self) -> impl Iterator<Item = &ViewNode> {
        self.nodes.values()
    }

    pub fn node(&self, view_id: &str) -> Result<&ViewNode, ViewError> {
        self.nodes.get(view_id).ok_or_else(|| ViewError::UnknownView(view_id.to_string()))
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn nesting(&self) -> &BTreeSet<(ViewId, ViewId)> {
        &self.nesting
    }

    pub fn columns(&self) -> &[SynthesizedColumn] {
        &self.columns
    }

    pub fn overviews(&self) -> impl Iterator<Item = &ViewNode> {
        self.nodes.values().filter(|n| n.is_overview())
    }

    /// Detail views linked from an overview.
    pub fn details_of(&self, overview: &str) -> impl Iterator<Item = &Link> {
        let overview = overview.to_string();
        self.links.iter().filter(move |l| l.overview == overview)
    }

    /// Stable SHA-256 fingerprint of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("graph serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Descriptor lookup over the base schema plus synthesized columns.
    pub fn descriptor<'a>(
        &'a self,
        catalog: &'a Catalog,
        collection_id: &str,
        attr: &AttributeId,
    ) -> Result<Option<&'a AttributeDescriptor>, ViewError> {
        let base = catalog
            .get(collection_id)
            .ok_or_else(|| ViewError::UnknownCollection(collection_id.to_string()))?;
        let synthesized = self
            .columns
            .iter()
            .rev()
            .find(|c| c.collection_id == collection_id && &c.descriptor.id == attr && !c.fill_missing_only)
            .map(|c| &c.descriptor);
        Ok(synthesized.or_else(|| base.descriptor(attr)))
    }

    /// The collection as seen by this session: base data plus synthesized
    /// columns, applied in log order.
    pub fn collection<'a>(&self, catalog: &'a Catalog, collection_id: &str) -> Result<Cow<'a, Collection>, ViewError> {
        let base = catalog
            .get(collection_id)
            .ok_or_else(|| ViewError::UnknownCollection(collection_id.to_string()))?;
        let mut current: Cow<'a, Collection> = Cow::Borrowed(base.as_ref());
        for col in self.columns.iter().filter(|c| c.collection_id == collection_id) {
            current = Cow::Owned(current.with_column(col.descriptor.clone(), &col.values, col.fill_missing_only)?);
        }
        Ok(current)
    }

    fn require_attr(&self, catalog: &Catalog, node: &ViewNode, attr: &AttributeId) -> Result<(), ViewError> {
        match self.descriptor(catalog, &node.collection_id, attr)? {
            Some(_) => Ok(()),
            None => Err(ViewError::UnknownAttribute { view: node.view_id.clone(), attr: attr.clone() }),
        }
    }

    fn check_layout(&self, catalog: &Catalog, node: &ViewNode, layout: &OverviewLayout) -> Result<(), ViewError> {
        for a in layout.bound_attributes() {
            self.require_attr(catalog, node, a)
                .map_err(|_| ViewError::BindingKindMismatch { attr: a.clone(), expected: "a schema attribute" })?;
        }
        layout.validate(|a| self.descriptor(catalog, &node.collection_id, a).ok().flatten())
    }

    fn check_filter(&self, catalog: &Catalog, node: &ViewNode, filter: &FilterSpec) -> Result<(), ViewError> {
        self.require_attr(catalog, node, &filter.attr)?;
        let desc = self.descriptor(catalog, &node.collection_id, &filter.attr)?.expect("checked above");
        fn walk(p: &Predicate, desc: &AttributeDescriptor) -> Result<(), ViewError> {
            match p {
                Predicate::Range { lo, hi } => {
                    let ranged = matches!(desc.value_kind, ValueKind::Number | ValueKind::Money | ValueKind::Date);
                    let bounds_ok = lo
                        .iter()
                        .chain(hi.iter())
                        .all(|b| b.kind() == Some(desc.value_kind));
                    if ranged && bounds_ok {
                        Ok(())
                    } else {
                        Err(ViewError::RangeKindMismatch { attr: desc.id.clone() })
                    }
                }
                Predicate::Negate { inner } => walk(inner, desc),
                _ => Ok(()),
            }
        }
        walk(&filter.predicate, desc)
    }

    fn node_mut(&mut self, view_id: &str) -> Result<&mut ViewNode, ViewError> {
        self.nodes.get_mut(view_id).ok_or_else(|| ViewError::UnknownView(view_id.to_string()))
    }

    fn overview_mut(&mut self, view_id: &str) -> Result<&mut ViewNode, ViewError> {
        let node = self.node_mut(view_id)?;
        if !node.is_overview() {
            return Err(ViewError::NotAnOverview(view_id.to_string()));
        }
        Ok(node)
    }

    fn fresh_view_id(&self) -> ViewId {
        let mut serial = self.next_serial + 1;
        loop {
            let id = format!("overview-{serial}");
            if !self.nodes.contains_key(&id) {
                return id;
            }
            serial += 1;
        }
    }

    // ---- the fold ----

    /// Validates and applies one mutation. On error the graph is unchanged.
    pub fn apply(&mut self, catalog: &Catalog, mutation: &Mutation) -> Result<(), ViewError> {
        match mutation {
            Mutation::Surface { view, attr, position } => {
                let node = self.node(view)?;
                self.require_attr(catalog, node, attr)?;
                let node = self.node_mut(view)?;
                node.hidden.remove(attr);
                node.surfaced.retain(|a| a != attr);
                let at = position.unwrap_or(node.surfaced.len()).min(node.surfaced.len());
                node.surfaced.insert(at, attr.clone());
            }
            Mutation::Hide { view, attr } => {
                let node = self.node(view)?;
                self.require_attr(catalog, node, attr)?;
                let node = self.node_mut(view)?;
                node.surfaced.retain(|a| a != attr);
                node.hidden.insert(attr.clone());
            }
            Mutation::SetSort { view, sort } => {
                let node = self.node(view)?;
                if let Some(spec) = sort {
                    self.require_attr(catalog, node, &spec.attr)?;
                }
                self.node_mut(view)?.sort = sort.clone();
            }
            Mutation::AddFilter { view, filter } => {
                let node = self.node(view)?;
                self.check_filter(catalog, node, filter)?;
                self.node_mut(view)?.filters.push(filter.clone());
            }
            Mutation::RemoveFilter { view, index, removed } => {
                let node = self.node_mut(view)?;
                if node.filters.get(*index) != Some(removed) {
                    return Err(ViewError::IndexOutOfRange { view: view.clone(), index: *index });
                }
                node.filters.remove(*index);
            }
            Mutation::AddOverview { view, collection, title, surfaced, links } => {
                if self.nodes.contains_key(view) {
                    return Err(ViewError::DuplicateView(view.clone()));
                }
                let node = ViewNode::overview(view, collection, title, OverviewLayout::List)
                    .with_surfaced(surfaced)
                    .with_members(Vec::new());
                self.check_node(catalog, &node)?;
                let mut next = self.clone();
                next.nodes.insert(view.clone(), node);
                for l in links {
                    if &l.overview != view {
                        return Err(ViewError::UnknownLink { overview: l.overview.clone(), detail: l.detail.clone() });
                    }
                    next.link(&l.overview, &l.detail, l.layout)?;
                }
                next.next_serial += 1;
                *self = next;
            }
            Mutation::RemoveOverview { view, .. } => {
                self.node(view)?;
                self.overview_mut(view)?;
                if self.overviews().count() <= 1 {
                    return Err(ViewError::LastOverview);
                }
                self.nodes.remove(view);
                self.links.retain(|l| &l.overview != view);
                self.nesting.retain(|(_, child)| child != view);
            }
            Mutation::RenameOverview { view, title } => {
                self.overview_mut(view)?.title = title.clone();
            }
            Mutation::MoveItem { from, to, item, copy } => {
                let src = self.node(from)?;
                let dst = self.node(to)?;
                if !src.is_overview() {
                    return Err(ViewError::NotAnOverview(from.clone()));
                }
                if !dst.is_overview() {
                    return Err(ViewError::NotAnOverview(to.clone()));
                }
                if src.collection_id != dst.collection_id {
                    return Err(ViewError::CollectionMismatch(from.clone(), to.clone()));
                }
                if dst.members().is_none() {
                    return Err(ViewError::ImmutableTarget(to.clone()));
                }
                let collection = catalog
                    .get(&src.collection_id)
                    .ok_or_else(|| ViewError::UnknownCollection(src.collection_id.clone()))?;
                if !src.contains_item(collection, item) {
                    return Err(ViewError::UnknownItem { view: from.clone(), item: item.clone() });
                }
                if *copy != src.members().is_none() {
                    return Err(ViewError::InvalidColumn("move/copy flag disagrees with source kind".into()));
                }
                if from != to {
                    if let ViewKind::Overview { members: Some(m), .. } = &mut self.node_mut(from)?.kind {
                        m.retain(|id| id != item);
                    }
                }
                if let ViewKind::Overview { members: Some(m), .. } = &mut self.node_mut(to)?.kind {
                    if !m.contains(item) {
                        m.push(item.clone());
                    }
                }
            }
            Mutation::SetOverviewLayout { view, layout } => {
                let node = self.node(view)?;
                if !node.is_overview() {
                    return Err(ViewError::NotAnOverview(view.clone()));
                }
                self.check_layout(catalog, node, layout)?;
                if let ViewKind::Overview { layout: current, .. } = &mut self.node_mut(view)?.kind {
                    *current = layout.clone();
                }
            }
            Mutation::SetOdLayout { overview, detail, layout } => {
                let link = self
                    .links
                    .iter_mut()
                    .find(|l| &l.overview == overview && &l.detail == detail)
                    .ok_or_else(|| ViewError::UnknownLink { overview: overview.clone(), detail: detail.clone() })?;
                link.layout = *layout;
            }
            Mutation::SetDetailMultiplicity { view, multiplicity } => match &mut self.node_mut(view)?.kind {
                ViewKind::Detail { multiplicity: m } => *m = *multiplicity,
                ViewKind::Overview { .. } => return Err(ViewError::NotADetail(view.clone())),
            },
            Mutation::Synthesize { column } => {
                self.check_column(catalog, column)?;
                self.check_column_fits(catalog, column)?;
                self.columns.push(column.clone());
            }
        }
        Ok(())
    }

    fn check_column(&self, catalog: &Catalog, column: &SynthesizedColumn) -> Result<(), ViewError> {
        let base = catalog
            .get(&column.collection_id)
            .ok_or_else(|| ViewError::UnknownCollection(column.collection_id.clone()))?;
        column.descriptor.check_shape()?;
        let exists = self.descriptor(catalog, &column.collection_id, &column.descriptor.id)?.is_some();
        if column.fill_missing_only && !exists {
            return Err(ViewError::InvalidColumn(format!("autofill of unknown attribute `{}`", column.descriptor.id)));
        }
        if !column.fill_missing_only && base.has_attribute(&column.descriptor.id) {
            return Err(ViewError::InvalidColumn(format!(
                "`{}` already exists in the base schema",
                column.descriptor.id
            )));
        }
        if let Some(unknown) = column.values.keys().find(|id| base.item(id).is_none()) {
            return Err(ViewError::InvalidColumn(format!("unknown item `{unknown}`")));
        }
        Ok(())
    }

    /// Validates the effective schema and the touched attribute's values as
    /// they would be with `column` applied, without materializing items.
    fn check_column_fits(&self, catalog: &Catalog, column: &SynthesizedColumn) -> Result<(), ViewError> {
        let cid = &column.collection_id;
        let base = catalog.get(cid).ok_or_else(|| ViewError::UnknownCollection(cid.clone()))?;
        let relevant = self.columns.iter().chain(std::iter::once(column)).filter(|c| &c.collection_id == cid);
        let mut schema: Vec<AttributeDescriptor> = base.schema().to_vec();
        for col in relevant.clone() {
            match schema.iter().position(|d| d.id == col.descriptor.id) {
                Some(i) if !col.fill_missing_only => schema[i] = col.descriptor.clone(),
                Some(_) => {}
                None => schema.push(col.descriptor.clone()),
            }
        }
        let id = &column.descriptor.id;
        let desc = schema.iter().find(|d| &d.id == id).cloned().expect("column descriptor is in the schema");
        Collection::new(cid, base.title(), schema, Vec::new())?;
        if desc.origin != Origin::Source {
            return Ok(());
        }
        let mut current: BTreeMap<&str, &AttributeValue> =
            base.items().iter().filter_map(|i| i.values.get(id).map(|v| (i.item_id.as_str(), v))).collect();
        for col in relevant.filter(|c| &c.descriptor.id == id) {
            for (item, value) in &col.values {
                let keep = col.fill_missing_only && current.get(item.as_str()).is_some_and(|v| !v.is_not_specified());
                if !keep {
                    current.insert(item, value);
                }
            }
        }
        match current.into_iter().find(|(_, v)| v.kind().is_some_and(|k| k != desc.value_kind)) {
            Some((item, v)) => Err(ModelError::SchemaViolation {
                item: item.to_string(),
                attr: id.to_string(),
                reason: format!("value of kind {:?} under {:?} descriptor", v.kind(), desc.value_kind),
            }
            .into()),
            None => Ok(()),
        }
    }

    /// Applies mutations as one transaction and returns them.
    fn commit(&mut self, catalog: &Catalog, mutations: Vec<Mutation>) -> Result<Vec<Mutation>, ViewError> {
        let mut next = self.clone();
        for m in &mutations {
            next.apply(catalog, m)?;
        }
        *self = next;
        Ok(mutations)
    }

    // ---- customization operations ----

    /// Surfaces attributes in order, inserting at `position` when given.
    /// Emits one mutation per distinct attribute.
    pub fn surface(
        &mut self,
        catalog: &Catalog,
        view: &str,
        attrs: &[AttributeId],
        position: Option<usize>,
    ) -> Result<Vec<Mutation>, ViewError> {
        self.node(view)?;
        let mut seen = BTreeSet::new();
        let muts = attrs
            .iter()
            .filter(|a| seen.insert(*a))
            .enumerate()
            .map(|(i, a)| Mutation::Surface { view: view.into(), attr: a.clone(), position: position.map(|p| p + i) })
            .collect();
        self.commit(catalog, muts)
    }

    pub fn hide(&mut self, catalog: &Catalog, view: &str, attrs: &[AttributeId]) -> Result<Vec<Mutation>, ViewError> {
        self.node(view)?;
        let mut seen = BTreeSet::new();
        let muts = attrs
            .iter()
            .filter(|a| seen.insert(*a))
            .map(|a| Mutation::Hide { view: view.into(), attr: a.clone() })
            .collect();
        self.commit(catalog, muts)
    }

    pub fn set_sort(&mut self, catalog: &Catalog, view: &str, sort: Option<SortSpec>) -> Result<Vec<Mutation>, ViewError> {
        self.commit(catalog, vec![Mutation::SetSort { view: view.into(), sort }])
    }

    pub fn add_filter(&mut self, catalog: &Catalog, view: &str, filter: FilterSpec) -> Result<Vec<Mutation>, ViewError> {
        self.commit(catalog, vec![Mutation::AddFilter { view: view.into(), filter }])
    }

    pub fn remove_filter(&mut self, catalog: &Catalog, view: &str, index: usize) -> Result<Vec<Mutation>, ViewError> {
        let removed = self
            .node(view)?
            .filters
            .get(index)
            .cloned()
            .ok_or_else(|| ViewError::IndexOutOfRange { view: view.into(), index })?;
        self.commit(catalog, vec![Mutation::RemoveFilter { view: view.into(), index, removed }])
    }

    /// Adds a user overview over a collection. It starts with the
    /// collection's default surfaced set (or nothing when `empty`) and links
    /// to the detail views other overviews of the collection use.
    pub fn add_overview(
        &mut self,
        catalog: &Catalog,
        collection: &str,
        title: &str,
        empty: bool,
    ) -> Result<(ViewId, Vec<Mutation>), ViewError> {
        if catalog.get(collection).is_none() {
            return Err(ViewError::UnknownCollection(collection.into()));
        }
        let view = self.fresh_view_id();
        let surfaced = if empty { Vec::new() } else { self.defaults.get(collection).cloned().unwrap_or_default() };
        let mut links: Vec<Link> = Vec::new();
        for l in &self.links {
            let same_collection = self.nodes.get(&l.overview).is_some_and(|n| n.collection_id == collection);
            if same_collection && !links.iter().any(|x| x.detail == l.detail) {
                links.push(Link { overview: view.clone(), detail: l.detail.clone(), layout: l.layout });
            }
        }
        let m = Mutation::AddOverview { view: view.clone(), collection: collection.into(), title: title.into(), surfaced, links };
        Ok((view, self.commit(catalog, vec![m])?))
    }

    pub fn remove_overview(&mut self, catalog: &Catalog, view: &str) -> Result<Vec<Mutation>, ViewError> {
        let snapshot = self.node(view)?.clone();
        let links = self.details_of(view).cloned().collect();
        self.commit(catalog, vec![Mutation::RemoveOverview { view: view.into(), snapshot, links }])
    }

    pub fn rename_overview(&mut self, catalog: &Catalog, view: &str, title: &str) -> Result<Vec<Mutation>, ViewError> {
        self.commit(catalog, vec![Mutation::RenameOverview { view: view.into(), title: title.into() }])
    }

    /// Moves an item between user collections; from a base collection the
    /// item is copied.
    pub fn move_item(&mut self, catalog: &Catalog, from: &str, to: &str, item: &str) -> Result<Vec<Mutation>, ViewError> {
        let copy = self.node(from)?.members().is_none();
        self.commit(catalog, vec![Mutation::MoveItem { from: from.into(), to: to.into(), item: item.into(), copy }])
    }

    pub fn set_overview_layout(
        &mut self,
        catalog: &Catalog,
        view: &str,
        layout: OverviewLayout,
    ) -> Result<Vec<Mutation>, ViewError> {
        self.commit(catalog, vec![Mutation::SetOverviewLayout { view: view.into(), layout }])
    }

    pub fn set_od_layout(
        &mut self,
        catalog: &Catalog,
        overview: &str,
        detail: &str,
        layout: OverviewDetailLayout,
    ) -> Result<Vec<Mutation>, ViewError> {
        self.commit(catalog, vec![Mutation::SetOdLayout { overview: overview.into(), detail: detail.into(), layout }])
    }

    pub fn set_detail_multiplicity(
        &mut self,
        catalog: &Catalog,
        view: &str,
        multiplicity: DetailMultiplicity,
    ) -> Result<Vec<Mutation>, ViewError> {
        self.commit(catalog, vec![Mutation::SetDetailMultiplicity { view: view.into(), multiplicity }])
    }

    pub fn add_column(&mut self, catalog: &Catalog, column: SynthesizedColumn) -> Result<Vec<Mutation>, ViewError> {
        self.commit(catalog, vec![Mutation::Synthesize { column }])
    }
}

/// Which detail instances are open per overview. Navigation state, kept
/// apart from the logged configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenDetails {
    open: BTreeMap<ViewId, Vec<ItemId>>,
}

impl OpenDetails {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens the detail of an item shown by an overview, honoring the
    /// multiplicity of the linked detail view (one at a time by default).
    pub fn open(&mut self, graph: &ViewGraph, catalog: &Catalog, overview: &str, item: &str) -> Result<(), ViewError> {
        let node = graph.node(overview)?;
        if !node.is_overview() {
            return Err(ViewError::NotAnOverview(overview.into()));
        }
        let collection = graph.collection(catalog, &node.collection_id)?;
        if !node.contains_item(&collection, item) {
            return Err(ViewError::UnknownItem { view: overview.into(), item: item.into() });
        }
        let multiplicity = graph
            .details_of(overview)
            .find_map(|l| match graph.nodes.get(&l.detail).map(|n| &n.kind) {
                Some(ViewKind::Detail { multiplicity }) => Some(*multiplicity),
                _ => None,
            })
            .unwrap_or_default();
        let open = self.open.entry(overview.to_string()).or_default();
        if open.iter().any(|i| i == item) {
            return Ok(());
        }
        if multiplicity == DetailMultiplicity::OneAtATime {
            open.clear();
        }
        open.push(item.to_string());
        Ok(())
    }

    pub fn close(&mut self, overview: &str, item: &str) {
        if let Some(open) = self.open.get_mut(overview) {
            open.retain(|i| i != item);
        }
    }

    pub fn open_items(&self, overview: &str) -> &[ItemId] {
        self.open.get(overview).map(Vec::as_slice).unwrap_or(&[])
    }
}
