//! Typed data model: attribute schemas, per-item values, collections, and
//! corpus JSON ingestion.
//!
//! A corpus document declares a schema and a list of items. Values are typed
//! by the descriptor they belong to; the literal string `"Not Specified"` is
//! accepted for every kind and becomes [`AttributeValue::NotSpecified`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Literal used by corpora and providers for an unknown value.
pub const NOT_SPECIFIED: &str = "Not Specified";

pub type ItemId = String;
pub type CollectionId = String;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed corpus document: {0}")]
    MalformedDocument(String),
    #[error("schema violation: item `{item}` attribute `{attr}`: {reason}")]
    SchemaViolation { item: String, attr: String, reason: String },
    #[error("duplicate item id `{0}`")]
    DuplicateItemId(String),
    #[error("duplicate attribute id `{0}`")]
    DuplicateAttribute(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown source attribute `{0}`")]
    UnknownSourceAttribute(String),
    #[error("invalid descriptor `{attr}`: {reason}")]
    InvalidDescriptor { attr: String, reason: String },
    #[error("attribute id must be non-empty")]
    EmptyAttributeId,
}

/// Case-sensitive, non-empty attribute key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AttributeId(String);

impl AttributeId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyAttributeId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AttributeId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AttributeId> for String {
    fn from(id: AttributeId) -> Self {
        id.0
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for AttributeId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

/// Convenience for fixtures and tests; panics on an empty id.
pub fn attr(id: &str) -> AttributeId {
    AttributeId::new(id).expect("attribute id must be non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    Number,
    Money,
    Boolean,
    Date,
    ImageRef,
    ComponentRef,
    Color,
}

impl ValueKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Number | ValueKind::Money)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Source,
    Synthesized,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDescriptor {
    pub id: AttributeId,
    pub display_name: String,
    pub value_kind: ValueKind,
    /// Default currency for money attributes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currency: Option<String>,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_attributes: Vec<AttributeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl AttributeDescriptor {
    pub fn source(id: &str, kind: ValueKind) -> Self {
        Self {
            id: attr(id),
            display_name: id.to_string(),
            value_kind: kind,
            currency: None,
            origin: Origin::Source,
            source_attributes: Vec::new(),
            prompt: None,
        }
    }

    pub fn derived(id: &str, kind: ValueKind, sources: &[&str]) -> Self {
        Self {
            origin: Origin::Derived,
            source_attributes: sources.iter().map(|s| attr(s)).collect(),
            prompt: Some(format!("derived from {}", sources.join(", "))),
            ..Self::source(id, kind)
        }
    }

    pub fn with_currency(mut self, currency: &str) -> Self {
        self.currency = Some(currency.to_string());
        self
    }

    /// Checks the origin/provenance field combination, not source existence.
    pub fn check_shape(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidDescriptor {
            attr: self.id.to_string(),
            reason: reason.to_string(),
        };
        match self.origin {
            Origin::Derived if self.source_attributes.is_empty() => {
                Err(bad("derived attributes need at least one source attribute"))
            }
            Origin::Source | Origin::Synthesized if !self.source_attributes.is_empty() => {
                Err(bad("only derived attributes carry source attributes"))
            }
            Origin::Source if self.prompt.is_some() => Err(bad("source attributes carry no prompt")),
            Origin::Synthesized | Origin::Derived if self.prompt.is_none() => {
                Err(bad("synthesized and derived attributes carry a prompt"))
            }
            _ => Ok(()),
        }
    }
}

/// ISO-8601 date or date-time. Keeps the original text for round-tripping.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IsoDate {
    raw: String,
    instant: NaiveDateTime,
}

impl IsoDate {
    pub fn parse(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        let instant = if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
            dt.naive_utc()
        } else if let Ok(dt) = NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f") {
            dt
        } else if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
            d.and_hms_opt(0, 0, 0)?
        } else {
            return None;
        };
        Some(Self { raw: raw.to_string(), instant })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// UTC instant used for ordering.
    pub fn instant(&self) -> NaiveDateTime {
        self.instant
    }
}

impl TryFrom<String> for IsoDate {
    type Error = String;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        IsoDate::parse(&value).ok_or_else(|| format!("not an ISO-8601 date: {value}"))
    }
}

impl From<IsoDate> for String {
    fn from(d: IsoDate) -> Self {
        d.raw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub fn parse_hex(s: &str) -> Option<Self> {
        let hex = s.trim().strip_prefix('#')?;
        if hex.len() != 6 || !hex.is_ascii() {
            return None;
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok();
        Some(Rgb([byte(0)?, byte(2)?, byte(4)?]))
    }

    pub fn to_hex(self) -> String {
        let [r, g, b] = self.0;
        format!("#{r:02x}{g:02x}{b:02x}")
    }
}

/// A per-item attribute value.
///
/// The derived serde form is self-describing (`{"kind": .., "value": ..}`) and
/// is used for events and the wire API. Corpus files use the compact,
/// descriptor-typed form handled by [`AttributeValue::from_corpus_json`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AttributeValue {
    Text(String),
    Number(Decimal),
    Money { amount: Decimal, currency: String },
    Boolean(bool),
    Date(IsoDate),
    ImageRef(Vec<String>),
    ComponentRef { component: String, state: Value },
    Color(Rgb),
    NotSpecified,
}

impl AttributeValue {
    pub fn text(s: &str) -> Self {
        AttributeValue::Text(s.to_string())
    }

    pub fn money(amount: &str, currency: &str) -> Self {
        AttributeValue::Money {
            amount: Decimal::from_str(amount).expect("valid decimal literal"),
            currency: currency.to_string(),
        }
    }

    pub fn number(n: &str) -> Self {
        AttributeValue::Number(Decimal::from_str(n).expect("valid decimal literal"))
    }

    pub fn is_not_specified(&self) -> bool {
        matches!(self, AttributeValue::NotSpecified)
    }

    /// Kind of a concrete value; `None` for `NotSpecified`.
    pub fn kind(&self) -> Option<ValueKind> {
        Some(match self {
            AttributeValue::Text(_) => ValueKind::Text,
            AttributeValue::Number(_) => ValueKind::Number,
            AttributeValue::Money { .. } => ValueKind::Money,
            AttributeValue::Boolean(_) => ValueKind::Boolean,
            AttributeValue::Date(_) => ValueKind::Date,
            AttributeValue::ImageRef(_) => ValueKind::ImageRef,
            AttributeValue::ComponentRef { .. } => ValueKind::ComponentRef,
            AttributeValue::Color(_) => ValueKind::Color,
            AttributeValue::NotSpecified => return None,
        })
    }

    /// Boolean facet of a value. Interactive components whose state is a
    /// boolean (wishlist toggles, cart buttons) expose that state.
    pub fn as_flag(&self) -> Option<bool> {
        match self {
            AttributeValue::Boolean(b) => Some(*b),
            AttributeValue::ComponentRef { state: Value::Bool(b), .. } => Some(*b),
            _ => None,
        }
    }

    /// Parses a value from the corpus encoding for the given descriptor.
    pub fn from_corpus_json(desc: &AttributeDescriptor, raw: &Value) -> Result<Self, String> {
        if raw.as_str() == Some(NOT_SPECIFIED) {
            return Ok(AttributeValue::NotSpecified);
        }
        let mismatch = || format!("expected {:?} value, found {raw}", desc.value_kind);
        match desc.value_kind {
            ValueKind::Text => Ok(AttributeValue::Text(match raw {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })),
            ValueKind::Number => decimal_from_json(raw).map(AttributeValue::Number).ok_or_else(mismatch),
            ValueKind::Money => parse_money(raw, desc.currency.as_deref()).ok_or_else(mismatch),
            ValueKind::Boolean => match raw {
                Value::Bool(b) => Ok(AttributeValue::Boolean(*b)),
                Value::String(s) => parse_flag(s).map(AttributeValue::Boolean).ok_or_else(mismatch),
                _ => Err(mismatch()),
            },
            ValueKind::Date => raw
                .as_str()
                .and_then(IsoDate::parse)
                .map(AttributeValue::Date)
                .ok_or_else(mismatch),
            ValueKind::ImageRef => match raw {
                Value::String(s) => Ok(AttributeValue::ImageRef(vec![s.clone()])),
                Value::Array(items) => items
                    .iter()
                    .map(|v| v.as_str().map(str::to_string))
                    .collect::<Option<Vec<_>>>()
                    .map(AttributeValue::ImageRef)
                    .ok_or_else(mismatch),
                _ => Err(mismatch()),
            },
            ValueKind::ComponentRef => match raw {
                Value::Object(map) => {
                    let component = map.get("component").and_then(Value::as_str).ok_or_else(mismatch)?;
                    Ok(AttributeValue::ComponentRef {
                        component: component.to_string(),
                        state: map.get("state").cloned().unwrap_or(Value::Null),
                    })
                }
                _ => Err(mismatch()),
            },
            ValueKind::Color => match raw {
                Value::String(s) => Rgb::parse_hex(s).map(AttributeValue::Color).ok_or_else(mismatch),
                Value::Array(parts) if parts.len() == 3 => {
                    let mut rgb = [0u8; 3];
                    for (slot, part) in rgb.iter_mut().zip(parts) {
                        *slot = part.as_u64().and_then(|n| u8::try_from(n).ok()).ok_or_else(mismatch)?;
                    }
                    Ok(AttributeValue::Color(Rgb(rgb)))
                }
                _ => Err(mismatch()),
            },
        }
    }

    /// Compact corpus encoding; inverse of [`AttributeValue::from_corpus_json`].
    pub fn to_corpus_json(&self) -> Value {
        match self {
            AttributeValue::Text(s) => Value::String(s.clone()),
            AttributeValue::Number(d) => decimal_to_json(*d),
            AttributeValue::Money { amount, currency } => {
                json!({ "amount": amount.to_string(), "currency": currency })
            }
            AttributeValue::Boolean(b) => Value::Bool(*b),
            AttributeValue::Date(d) => Value::String(d.as_str().to_string()),
            AttributeValue::ImageRef(uris) => json!(uris),
            AttributeValue::ComponentRef { component, state } => {
                json!({ "component": component, "state": state })
            }
            AttributeValue::Color(c) => Value::String(c.to_hex()),
            AttributeValue::NotSpecified => Value::String(NOT_SPECIFIED.to_string()),
        }
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" => Some(true),
        "false" | "no" => Some(false),
        _ => None,
    }
}

fn decimal_from_json(raw: &Value) -> Option<Decimal> {
    match raw {
        Value::Number(n) => Decimal::from_str(&n.to_string())
            .or_else(|_| Decimal::from_scientific(&n.to_string()))
            .ok(),
        Value::String(s) => Decimal::from_str(s.trim()).ok(),
        _ => None,
    }
}

fn decimal_to_json(d: Decimal) -> Value {
    // Emit a JSON number only when it survives the f64 trip unchanged.
    let text = d.to_string();
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Number(n)) if n.to_string() == text => Value::Number(n),
        _ => Value::String(text),
    }
}

const CURRENCY_SYMBOLS: &[(&str, &str)] = &[("USD", "$"), ("EUR", "€"), ("GBP", "£"), ("JPY", "¥")];

pub(crate) fn currency_symbol(code: &str) -> Option<&'static str> {
    CURRENCY_SYMBOLS.iter().find(|(c, _)| *c == code).map(|(_, s)| *s)
}

/// Accepts `{"amount": "35.00", "currency": "USD"}`, `"35.00 USD"`, `"$35.00"`,
/// or a bare number when a default currency is known.
pub fn parse_money(raw: &Value, default_currency: Option<&str>) -> Option<AttributeValue> {
    let (amount, currency) = match raw {
        Value::Object(map) => {
            let amount = decimal_from_json(map.get("amount")?)?;
            let currency = match map.get("currency") {
                Some(c) => c.as_str()?.to_string(),
                None => default_currency?.to_string(),
            };
            (amount, currency)
        }
        Value::Number(_) => (decimal_from_json(raw)?, default_currency?.to_string()),
        Value::String(s) => parse_money_text(s, default_currency)?,
        _ => return None,
    };
    if currency.len() != 3 || !currency.chars().all(|c| c.is_ascii_uppercase()) {
        return None;
    }
    Some(AttributeValue::Money { amount, currency })
}

pub(crate) fn parse_money_text(s: &str, default_currency: Option<&str>) -> Option<(Decimal, String)> {
    let s = s.trim();
    if let Some((symbol_code, rest)) = CURRENCY_SYMBOLS
        .iter()
        .find_map(|(code, sym)| s.strip_prefix(sym).map(|rest| (*code, rest)))
    {
        let amount = Decimal::from_str(&rest.trim().replace(',', "")).ok()?;
        return Some((amount, symbol_code.to_string()));
    }
    let mut parts = s.split_whitespace();
    let first = parts.next()?;
    match (parts.next(), parts.next()) {
        (Some(code), None) => {
            let amount = Decimal::from_str(&first.replace(',', "")).ok()?;
            Some((amount, code.to_string()))
        }
        (None, None) => Some((Decimal::from_str(&first.replace(',', "")).ok()?, default_currency?.to_string())),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: ItemId,
    pub values: BTreeMap<AttributeId, AttributeValue>,
}

impl Item {
    pub fn new(item_id: &str) -> Self {
        Self { item_id: item_id.to_string(), values: BTreeMap::new() }
    }

    pub fn with(mut self, attr_id: &str, value: AttributeValue) -> Self {
        self.values.insert(attr(attr_id), value);
        self
    }
}

/// An immutable, ingested collection of items with its attribute schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collection {
    collection_id: CollectionId,
    title: String,
    schema: Vec<AttributeDescriptor>,
    items: Vec<Item>,
    schema_index: BTreeMap<AttributeId, usize>,
    item_index: BTreeMap<ItemId, usize>,
}

impl Collection {
    /// Builds a collection and validates every schema and item invariant.
    pub fn new(
        collection_id: &str,
        title: &str,
        schema: Vec<AttributeDescriptor>,
        items: Vec<Item>,
    ) -> Result<Self, ModelError> {
        let mut schema_index = BTreeMap::new();
        for (i, desc) in schema.iter().enumerate() {
            desc.check_shape()?;
            if schema_index.insert(desc.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateAttribute(desc.id.to_string()));
            }
        }
        let mut item_index = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if item_index.insert(item.item_id.clone(), i).is_some() {
                return Err(ModelError::DuplicateItemId(item.item_id.clone()));
            }
            for (attr_id, value) in &item.values {
                let desc = schema_index
                    .get(attr_id)
                    .map(|&i| &schema[i])
                    .ok_or_else(|| ModelError::SchemaViolation {
                        item: item.item_id.clone(),
                        attr: attr_id.to_string(),
                        reason: "attribute not declared in schema".into(),
                    })?;
                if let Some(kind) = value.kind() {
                    // AI-filled and derived columns may mix kinds across items.
                    let compatible = kind == desc.value_kind || desc.origin != Origin::Source;
                    if !compatible {
                        return Err(ModelError::SchemaViolation {
                            item: item.item_id.clone(),
                            attr: attr_id.to_string(),
                            reason: format!("value of kind {kind:?} under {:?} descriptor", desc.value_kind),
                        });
                    }
                }
            }
        }
        let collection = Self {
            collection_id: collection_id.to_string(),
            title: title.to_string(),
            schema,
            items,
            schema_index,
            item_index,
        };
        collection.check_provenance()?;
        Ok(collection)
    }

    fn check_provenance(&self) -> Result<(), ModelError> {
        // Every derived chain must bottom out in non-derived descriptors.
        fn visit<'a>(
            c: &'a Collection,
            id: &'a AttributeId,
            on_path: &mut BTreeSet<&'a AttributeId>,
            done: &mut BTreeSet<&'a AttributeId>,
        ) -> Result<(), ModelError> {
            if done.contains(id) {
                return Ok(());
            }
            if !on_path.insert(id) {
                return Err(ModelError::InvalidDescriptor {
                    attr: id.to_string(),
                    reason: "derivation cycle".into(),
                });
            }
            let desc = c.descriptor(id).ok_or_else(|| ModelError::UnknownSourceAttribute(id.to_string()))?;
            for src in &desc.source_attributes {
                visit(c, src, on_path, done)?;
            }
            on_path.remove(id);
            done.insert(id);
            Ok(())
        }
        let mut done = BTreeSet::new();
        for desc in &self.schema {
            visit(self, &desc.id, &mut BTreeSet::new(), &mut done)?;
        }
        Ok(())
    }

    pub fn collection_id(&self) -> &str {
        &self.collection_id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    /// Descriptors in declaration order.
    pub fn schema(&self) -> &[AttributeDescriptor] {
        &self.schema
    }

    /// Items in base order.
    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &ItemId> {
        self.items.iter().map(|i| &i.item_id)
    }

    pub fn descriptor(&self, id: &AttributeId) -> Option<&AttributeDescriptor> {
        self.schema_index.get(id).map(|&i| &self.schema[i])
    }

    pub fn has_attribute(&self, id: &AttributeId) -> bool {
        self.schema_index.contains_key(id)
    }

    pub fn item(&self, item_id: &str) -> Option<&Item> {
        self.item_index.get(item_id).map(|&i| &self.items[i])
    }

    /// Position of an item in base order.
    pub fn base_position(&self, item_id: &str) -> Option<usize> {
        self.item_index.get(item_id).copied()
    }

    /// Looks up an attribute value; absent keys read as `NotSpecified`.
    pub fn get_value(&self, item: &Item, attr_id: &AttributeId) -> Result<AttributeValue, ModelError> {
        if !self.has_attribute(attr_id) {
            return Err(ModelError::UnknownAttribute(attr_id.to_string()));
        }
        Ok(item.values.get(attr_id).cloned().unwrap_or(AttributeValue::NotSpecified))
    }

    /// Returns a new collection with an extra (or replaced) attribute column.
    ///
    /// With `fill_missing_only`, existing concrete values are kept and only
    /// absent or `NotSpecified` cells take the supplied values.
    pub fn with_column(
        &self,
        descriptor: AttributeDescriptor,
        values: &BTreeMap<ItemId, AttributeValue>,
        fill_missing_only: bool,
    ) -> Result<Collection, ModelError> {
        let mut schema = self.schema.clone();
        match self.schema_index.get(&descriptor.id) {
            Some(&i) if !fill_missing_only => schema[i] = descriptor.clone(),
            Some(_) => {}
            None => schema.push(descriptor.clone()),
        }
        let mut items = self.items.clone();
        for item in &mut items {
            let Some(value) = values.get(&item.item_id) else { continue };
            let current = item.values.get(&descriptor.id);
            let keep = fill_missing_only && current.is_some_and(|v| !v.is_not_specified());
            if !keep {
                item.values.insert(descriptor.id.clone(), value.clone());
            }
        }
        Collection::new(&self.collection_id, &self.title, schema, items)
    }

    /// Serializes back to the corpus document format.
    pub fn to_document(&self) -> Value {
        let schema: Vec<Value> = self
            .schema
            .iter()
            .map(|d| serde_json::to_value(d).expect("descriptor serializes"))
            .collect();
        let items: Vec<Value> = self
            .items
            .iter()
            .map(|item| {
                let values: serde_json::Map<String, Value> = item
                    .values
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.to_corpus_json()))
                    .collect();
                json!({ "item_id": item.item_id, "values": values })
            })
            .collect();
        json!({
            "collection_id": self.collection_id,
            "title": self.title,
            "schema": schema,
            "items": items,
        })
    }
}

#[derive(Deserialize)]
struct RawDocument {
    collection_id: String,
    #[serde(default)]
    title: String,
    schema: Vec<AttributeDescriptor>,
    #[serde(default)]
    items: Vec<RawItem>,
}

#[derive(Deserialize)]
struct RawItem {
    item_id: String,
    #[serde(default)]
    values: serde_json::Map<String, Value>,
}

/// Parses a corpus JSON document into a validated [`Collection`].
///
/// Item keys missing from the declared schema get an implicit text
/// descriptor and their values are stored as text.
pub fn ingest_corpus(document: &[u8]) -> Result<Collection, ModelError> {
    let raw: RawDocument =
        serde_json::from_slice(document).map_err(|e| ModelError::MalformedDocument(e.to_string()))?;
    let mut schema = raw.schema;
    let mut declared: BTreeSet<AttributeId> = BTreeSet::new();
    for desc in &schema {
        if !declared.insert(desc.id.clone()) {
            return Err(ModelError::DuplicateAttribute(desc.id.to_string()));
        }
    }
    let mut items = Vec::with_capacity(raw.items.len());
    for raw_item in raw.items {
        let mut item = Item::new(&raw_item.item_id);
        for (key, raw_value) in raw_item.values {
            let attr_id = AttributeId::new(key).map_err(|_| ModelError::SchemaViolation {
                item: raw_item.item_id.clone(),
                attr: String::new(),
                reason: "empty attribute key".into(),
            })?;
            if declared.insert(attr_id.clone()) {
                schema.push(AttributeDescriptor::source(attr_id.as_str(), ValueKind::Text));
            }
            let desc = schema.iter().find(|d| d.id == attr_id).expect("declared above");
            let value = AttributeValue::from_corpus_json(desc, &raw_value).map_err(|reason| {
                ModelError::SchemaViolation { item: raw_item.item_id.clone(), attr: attr_id.to_string(), reason }
            })?;
            item.values.insert(attr_id, value);
        }
        items.push(item);
    }
    Collection::new(&raw.collection_id, &raw.title, schema, items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Sum,
    Product,
    Ratio,
    Concat,
}

/// Computes a derived attribute for every item of the collection.
///
/// Total over items: any missing or kind-incompatible source yields
/// `NotSpecified` for that item.
pub fn recompute_derived(
    collection: &Collection,
    descriptor: &AttributeDescriptor,
    combiner: Combiner,
) -> Result<BTreeMap<ItemId, AttributeValue>, ModelError> {
    if descriptor.origin != Origin::Derived || descriptor.source_attributes.is_empty() {
        return Err(ModelError::InvalidDescriptor {
            attr: descriptor.id.to_string(),
            reason: "recompute_derived needs a derived descriptor with sources".into(),
        });
    }
    for src in &descriptor.source_attributes {
        if !collection.has_attribute(src) {
            return Err(ModelError::UnknownSourceAttribute(src.to_string()));
        }
    }
    Ok(collection
        .items()
        .iter()
        .map(|item| {
            let inputs: Vec<&AttributeValue> = descriptor
                .source_attributes
                .iter()
                .map(|src| item.values.get(src).unwrap_or(&AttributeValue::NotSpecified))
                .collect();
            let out = combine(combiner, &inputs).unwrap_or(AttributeValue::NotSpecified);
            (item.item_id.clone(), out)
        })
        .collect())
}

fn combine(combiner: Combiner, inputs: &[&AttributeValue]) -> Option<AttributeValue> {
    if inputs.iter().any(|v| v.is_not_specified()) {
        return None;
    }
    match combiner {
        Combiner::Sum => {
            if let Some(AttributeValue::Money { currency, .. }) = inputs.first() {
                let mut total = Decimal::ZERO;
                for v in inputs {
                    match v {
                        AttributeValue::Money { amount, currency: c } if c == currency => {
                            total = total.checked_add(*amount)?
                        }
                        _ => return None,
                    }
                }
                return Some(AttributeValue::Money { amount: total, currency: currency.clone() });
            }
            let mut total = Decimal::ZERO;
            for v in inputs {
                let AttributeValue::Number(n) = v else { return None };
                total = total.checked_add(*n)?;
            }
            Some(AttributeValue::Number(total))
        }
        Combiner::Product => {
            let mut currency: Option<String> = None;
            let mut total = Decimal::ONE;
            for v in inputs {
                match v {
                    AttributeValue::Number(n) => total = total.checked_mul(*n)?,
                    AttributeValue::Money { amount, currency: c } if currency.is_none() => {
                        currency = Some(c.clone());
                        total = total.checked_mul(*amount)?;
                    }
                    _ => return None,
                }
            }
            Some(match currency {
                Some(currency) => AttributeValue::Money { amount: total, currency },
                None => AttributeValue::Number(total),
            })
        }
        Combiner::Ratio => {
            let [num, den] = inputs else { return None };
            match (num, den) {
                (AttributeValue::Number(a), AttributeValue::Number(b)) => {
                    a.checked_div(*b).map(AttributeValue::Number)
                }
                (
                    AttributeValue::Money { amount: a, currency: ca },
                    AttributeValue::Money { amount: b, currency: cb },
                ) if ca == cb => a.checked_div(*b).map(AttributeValue::Number),
                (AttributeValue::Money { amount, currency }, AttributeValue::Number(b)) => amount
                    .checked_div(*b)
                    .map(|amount| AttributeValue::Money { amount, currency: currency.clone() }),
                _ => None,
            }
        }
        Combiner::Concat => Some(AttributeValue::Text(
            inputs.iter().map(|v| crate::query::render(v)).collect::<Vec<_>>().join(" "),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shopping_doc() -> &'static str {
        r#"{
            "collection_id": "shop",
            "title": "Monitors",
            "schema": [
                {"id": "Title", "display_name": "Title", "value_kind": "text"},
                {"id": "Price", "display_name": "Price", "value_kind": "money", "currency": "USD"},
                {"id": "Shipping Fee", "display_name": "Shipping Fee", "value_kind": "money"},
                {"id": "Year Manufactured", "display_name": "Year Manufactured", "value_kind": "number"},
                {"id": "Add to Wishlist", "display_name": "Add to Wishlist", "value_kind": "component_ref"}
            ],
            "items": [
                {"item_id": "a", "values": {
                    "Title": "Dell 27", "Price": "35.00 USD",
                    "Shipping Fee": {"amount": "4.99", "currency": "USD"},
                    "Year Manufactured": 2021,
                    "Add to Wishlist": {"component": "wishlist", "state": true}
                }},
                {"item_id": "b", "values": {"Title": "LG 24", "Price": 120, "Shipping Fee": "Not Specified"}}
            ]
        }"#
    }

    #[test]
    fn ingests_money_descriptors_and_values() {
        let c = ingest_corpus(shopping_doc().as_bytes()).unwrap();
        assert_eq!(c.schema().len(), 5);
        let money: Vec<_> = c.schema().iter().filter(|d| d.value_kind == ValueKind::Money).collect();
        assert_eq!(money.len(), 2);
        let a = c.item("a").unwrap();
        assert_eq!(a.values[&attr("Price")], AttributeValue::money("35.00", "USD"));
        assert_eq!(a.values[&attr("Shipping Fee")], AttributeValue::money("4.99", "USD"));
        let b = c.item("b").unwrap();
        assert_eq!(b.values[&attr("Price")], AttributeValue::money("120", "USD"));
        assert_eq!(b.values[&attr("Shipping Fee")], AttributeValue::NotSpecified);
    }

    #[test]
    fn empty_item_list() {
        let doc = r#"{"collection_id": "c", "title": "t",
            "schema": [{"id": "Title", "display_name": "Title", "value_kind": "text"}], "items": []}"#;
        let c = ingest_corpus(doc.as_bytes()).unwrap();
        assert!(c.items().is_empty());
        assert_eq!(c.schema().len(), 1);
    }

    #[test]
    fn kind_mismatch_is_a_schema_violation() {
        let doc = r#"{"collection_id": "c", "title": "t",
            "schema": [{"id": "Weight", "display_name": "Weight", "value_kind": "number"}],
            "items": [{"item_id": "i1", "values": {"Weight": "hello"}}]}"#;
        match ingest_corpus(doc.as_bytes()) {
            Err(ModelError::SchemaViolation { item, attr, .. }) => {
                assert_eq!(item, "i1");
                assert_eq!(attr, "Weight");
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_duplicate_documents() {
        assert!(matches!(ingest_corpus(b"{not json"), Err(ModelError::MalformedDocument(_))));
        let dup = r#"{"collection_id": "c", "schema": [],
            "items": [{"item_id": "x"}, {"item_id": "x"}]}"#;
        assert_eq!(ingest_corpus(dup.as_bytes()), Err(ModelError::DuplicateItemId("x".into())));
    }

    #[test]
    fn undeclared_keys_become_text() {
        let doc = r#"{"collection_id": "c", "schema": [],
            "items": [{"item_id": "x", "values": {"Notes": 42}}]}"#;
        let c = ingest_corpus(doc.as_bytes()).unwrap();
        assert_eq!(c.descriptor(&attr("Notes")).unwrap().value_kind, ValueKind::Text);
        assert_eq!(c.item("x").unwrap().values[&attr("Notes")], AttributeValue::text("42"));
    }

    #[test]
    fn get_value_reads_missing_as_not_specified() {
        let c = ingest_corpus(shopping_doc().as_bytes()).unwrap();
        let b = c.item("b").unwrap();
        assert_eq!(c.get_value(b, &attr("Year Manufactured")).unwrap(), AttributeValue::NotSpecified);
        let item = Item::new("z").with("Title", AttributeValue::Boolean(true));
        assert_eq!(c.get_value(&item, &attr("Title")).unwrap(), AttributeValue::Boolean(true));
        assert_eq!(
            c.get_value(b, &attr("Material")),
            Err(ModelError::UnknownAttribute("Material".into()))
        );
    }

    #[test]
    fn document_round_trip() {
        let c = ingest_corpus(shopping_doc().as_bytes()).unwrap();
        let doc = serde_json::to_vec(&c.to_document()).unwrap();
        assert_eq!(ingest_corpus(&doc).unwrap(), c);
    }

    #[test]
    fn derived_sum_and_propagation() {
        let c = ingest_corpus(shopping_doc().as_bytes()).unwrap();
        let total = AttributeDescriptor::derived("Total Cost", ValueKind::Money, &["Price", "Shipping Fee"]);
        let out = recompute_derived(&c, &total, Combiner::Sum).unwrap();
        assert_eq!(out["a"], AttributeValue::money("39.99", "USD"));
        assert_eq!(out["b"], AttributeValue::NotSpecified);
    }

    #[test]
    fn mixed_currency_sum_is_not_specified() {
        let schema = vec![
            AttributeDescriptor::source("P", ValueKind::Money),
            AttributeDescriptor::source("S", ValueKind::Money),
            AttributeDescriptor::source("N", ValueKind::Number),
        ];
        let items = vec![
            Item::new("x").with("P", AttributeValue::money("1", "USD")).with("S", AttributeValue::money("2", "EUR")),
            Item::new("y").with("P", AttributeValue::money("1", "USD")).with("N", AttributeValue::number("2")),
        ];
        let c = Collection::new("c", "t", schema, items).unwrap();
        let sum = AttributeDescriptor::derived("T", ValueKind::Money, &["P", "S"]);
        assert_eq!(recompute_derived(&c, &sum, Combiner::Sum).unwrap()["x"], AttributeValue::NotSpecified);
        let mixed = AttributeDescriptor::derived("M", ValueKind::Money, &["P", "N"]);
        assert_eq!(recompute_derived(&c, &mixed, Combiner::Sum).unwrap()["y"], AttributeValue::NotSpecified);
        // money times a plain number keeps the currency
        assert_eq!(
            recompute_derived(&c, &mixed, Combiner::Product).unwrap()["y"],
            AttributeValue::money("2", "USD")
        );
    }

    #[test]
    fn ratio_matches_long_division() {
        let schema = vec![
            AttributeDescriptor::source("Maximum Resolution Width", ValueKind::Number),
            AttributeDescriptor::source("Display Size", ValueKind::Number),
        ];
        let items = vec![Item::new("m")
            .with("Maximum Resolution Width", AttributeValue::number("3840"))
            .with("Display Size", AttributeValue::number("27"))
            .clone()];
        let c = Collection::new("c", "t", schema, items).unwrap();
        let density =
            AttributeDescriptor::derived("Pixel Density", ValueKind::Number, &["Maximum Resolution Width", "Display Size"]);
        let out = recompute_derived(&c, &density, Combiner::Ratio).unwrap();
        let AttributeValue::Number(d) = out["m"] else { panic!("expected number") };
        // 3840 / 27 by schoolbook long division: 142.222222...
        assert_eq!(d.round_sf(6).unwrap().to_string(), long_division_sig(3840, 27, 6));
    }

    /// Independent oracle: integer long division truncated to `sig` significant
    /// digits, then rounded half-up on the next digit.
    fn long_division_sig(num: u64, den: u64, sig: usize) -> String {
        let int_part = num / den;
        let mut rem = num % den;
        let int_digits = int_part.to_string().len();
        let mut frac = Vec::new();
        for _ in 0..(sig + 1).saturating_sub(int_digits) {
            rem *= 10;
            frac.push((rem / den) as u8);
            rem %= den;
        }
        let keep = sig - int_digits;
        let mut digits: Vec<u8> = frac[..keep].to_vec();
        if frac[keep] >= 5 {
            // no carry beyond the last kept digit for the inputs used here
            *digits.last_mut().unwrap() += 1;
        }
        let frac: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
        format!("{int_part}.{frac}")
    }

    #[test]
    fn derived_errors() {
        let c = ingest_corpus(shopping_doc().as_bytes()).unwrap();
        let bad = AttributeDescriptor::derived("T", ValueKind::Money, &["Price", "Tax"]);
        assert_eq!(
            recompute_derived(&c, &bad, Combiner::Sum),
            Err(ModelError::UnknownSourceAttribute("Tax".into()))
        );
        let not_derived = AttributeDescriptor::source("Price", ValueKind::Money);
        assert!(recompute_derived(&c, &not_derived, Combiner::Sum).is_err());
    }

    #[test]
    fn provenance_cycles_are_rejected() {
        let schema = vec![
            AttributeDescriptor::derived("A", ValueKind::Number, &["B"]),
            AttributeDescriptor::derived("B", ValueKind::Number, &["A"]),
        ];
        assert!(matches!(
            Collection::new("c", "t", schema, vec![]),
            Err(ModelError::InvalidDescriptor { .. })
        ));
    }

    #[test]
    fn attribute_ids_are_non_empty() {
        assert_eq!(AttributeId::new(""), Err(ModelError::EmptyAttributeId));
        assert!(serde_json::from_str::<AttributeId>("\"\"").is_err());
    }

    #[test]
    fn tagged_value_serde_round_trips() {
        let values = vec![
            AttributeValue::money("35.00", "USD"),
            AttributeValue::NotSpecified,
            AttributeValue::Date(IsoDate::parse("2024-05-01").unwrap()),
            AttributeValue::Color(Rgb([1, 2, 255])),
        ];
        for v in values {
            let s = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<AttributeValue>(&s).unwrap(), v, "{s}");
        }
    }
}
