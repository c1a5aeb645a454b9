//! Prompt-driven attribute synthesis: resolve a prompt to an attribute name,
//! generate per-item values, reformat values, and fill in missing ones.
//!
//! The three prompt templates live in `templates/` and are rendered with a
//! single-pass `${...}` substitution. Providers return raw text; the engine
//! extracts the first bracketed answer and types it.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{
    parse_money_text, AttributeDescriptor, AttributeId, AttributeValue, Collection, IsoDate, ItemId, ModelError,
    Origin, ValueKind, NOT_SPECIFIED,
};
use crate::query::render;
use crate::view::SynthesizedColumn;

pub const RESOLVE_TEMPLATE: &str = include_str!("templates/resolve_attribute.txt");
pub const GENERATE_TEMPLATE: &str = include_str!("templates/generate_value.txt");
pub const TRANSFORM_TEMPLATE: &str = include_str!("templates/transform_value.txt");

/// Provider calls tried per item before recording a failure.
pub const MAX_ATTEMPTS: usize = 3;
/// Concurrent provider calls per operation.
pub const PARALLELISM: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned status {0}")]
    Status(u16),
    #[error("provider misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("unparseable response: {0:?}")]
    Unparseable(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("attribute {0} has no prompt")]
    MissingPrompt(String),
    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),
    #[error("no items to transform")]
    NoItems,
    #[error("prompt {0:?} did not resolve to an attribute")]
    Unresolved(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A previous transform result shown to the provider as a worked example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformExample {
    pub attr_name: String,
    pub original: String,
    pub transformed: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformRequest<'a> {
    pub attr_name: &'a str,
    pub original_value: &'a str,
    pub user_prompt: &'a str,
    pub item_context: &'a str,
    pub example: Option<&'a TransformExample>,
}

/// Backend that answers the three prompt kinds with raw text.
pub trait SynthesisProvider: Send + Sync {
    fn resolve_name(&self, user_prompt: &str, item_context: &str) -> Result<String, ProviderError>;
    fn generate_value(&self, attr_name: &str, attr_prompt: &str, item_context: &str) -> Result<String, ProviderError>;
    fn transform_value(&self, request: &TransformRequest<'_>) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketResponse {
    pub raw: String,
    pub extracted: String,
}

impl BracketResponse {
    pub fn parse(raw: &str) -> Result<Self, SynthesisError> {
        Ok(Self { raw: raw.to_string(), extracted: parse_bracket(raw)?.to_string() })
    }
}

/// Interior of the first balanced `[...]` pair, trimmed. "First" is the pair
/// whose opening bracket comes earliest, so nested brackets stay inside it.
pub fn parse_bracket(raw: &str) -> Result<&str, SynthesisError> {
    let mut open: Vec<usize> = Vec::new();
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in raw.char_indices() {
        match c {
            '[' => open.push(i),
            ']' => {
                if let Some(start) = open.pop() {
                    if best.is_none_or(|(s, _)| start < s) {
                        best = Some((start, i));
                    }
                }
            }
            _ => {}
        }
    }
    match best {
        Some((s, e)) => Ok(raw[s + 1..e].trim()),
        None => Err(SynthesisError::Unparseable(raw.to_string())),
    }
}

/// Types an extracted answer. Total: anything unrecognized is text.
pub fn infer_value(s: &str) -> AttributeValue {
    let s = s.trim();
    if s.eq_ignore_ascii_case(NOT_SPECIFIED) {
        return AttributeValue::NotSpecified;
    }
    match s.to_ascii_lowercase().as_str() {
        "yes" | "true" => return AttributeValue::Boolean(true),
        "no" | "false" => return AttributeValue::Boolean(false),
        _ => {}
    }
    if let Some(d) = IsoDate::parse(s) {
        return AttributeValue::Date(d);
    }
    if let Some(v) = parse_explicit_money(s) {
        return v;
    }
    if let Ok(d) = Decimal::from_str(s) {
        return AttributeValue::Number(d);
    }
    AttributeValue::Text(s.to_string())
}

fn parse_explicit_money(s: &str) -> Option<AttributeValue> {
    let (amount, currency) = parse_money_text(s, None)?;
    let code_ok = currency.len() == 3 && currency.chars().all(|c| c.is_ascii_uppercase());
    code_ok.then_some(AttributeValue::Money { amount, currency })
}

/// Reads an answer as a value of the given kind, if it can be one.
pub fn coerce_value(s: &str, kind: ValueKind, currency: Option<&str>) -> Option<AttributeValue> {
    let s = s.trim();
    if s.eq_ignore_ascii_case(NOT_SPECIFIED) {
        return Some(AttributeValue::NotSpecified);
    }
    match kind {
        ValueKind::Text => Some(AttributeValue::Text(s.to_string())),
        ValueKind::Money => parse_money_text(s, currency)
            .filter(|(_, c)| c.len() == 3)
            .map(|(amount, currency)| AttributeValue::Money { amount, currency }),
        _ => Some(infer_value(s)).filter(|v| v.kind() == Some(kind)),
    }
}

/// The item's values as stable-key-ordered JSON in the corpus encoding.
pub fn item_context(collection: &Collection, item_id: &str) -> String {
    let map: BTreeMap<&str, Value> = collection
        .item(item_id)
        .map(|item| item.values.iter().map(|(k, v)| (k.as_str(), v.to_corpus_json())).collect())
        .unwrap_or_default();
    serde_json::to_string(&map).expect("context serializes")
}

/// Replaces each `${name}` once, left to right, with `lookup(name, n)` where
/// `n` counts earlier occurrences of the same name. Substituted text is never
/// rescanned; unknown names stay literal.
fn substitute(template: &str, lookup: impl Fn(&str, usize) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else {
            out.push_str(&rest[start..]);
            return out;
        };
        let name = &after[..end];
        let n = seen.entry(name).or_default();
        match lookup(name, *n) {
            Some(v) => out.push_str(&v),
            None => out.push_str(&rest[start..start + 2 + end + 1]),
        }
        *n += 1;
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    out
}

pub fn render_resolve_prompt(user_prompt: &str, item_context: &str) -> String {
    substitute(RESOLVE_TEMPLATE, |name, _| match name {
        "itemAttributes" => Some(item_context.to_string()),
        "userPrompt" => Some(user_prompt.to_string()),
        _ => None,
    })
}

pub fn render_generate_prompt(attr_name: &str, attr_prompt: &str, item_context: &str) -> String {
    substitute(GENERATE_TEMPLATE, |name, _| match name {
        "itemAttributes" => Some(item_context.to_string()),
        "attribute.name" => Some(attr_name.to_string()),
        "attribute.prompt" => Some(attr_prompt.to_string()),
        _ => None,
    })
}

/// Without an example the Example block is left out entirely.
pub fn render_transform_prompt(request: &TransformRequest<'_>) -> String {
    let template = match request.example {
        Some(_) => TRANSFORM_TEMPLATE.to_string(),
        None => {
            let start = TRANSFORM_TEMPLATE.find("Example:\n").expect("template has an example block");
            let end = TRANSFORM_TEMPLATE.find("Attribute to transform: ${attribute.name}").expect("template body");
            format!("{}{}", &TRANSFORM_TEMPLATE[..start], &TRANSFORM_TEMPLATE[end..])
        }
    };
    substitute(&template, |name, n| match (name, request.example) {
        ("itemAttributes", _) => Some(request.item_context.to_string()),
        ("userPrompt", _) => Some(request.user_prompt.to_string()),
        ("attribute.name", _) => Some(request.attr_name.to_string()),
        ("attribute.value", _) => Some(request.original_value.to_string()),
        ("exampleAttribute.name", Some(ex)) => Some(ex.attr_name.clone()),
        ("exampleAttribute.value", Some(ex)) if n == 0 => Some(ex.original.clone()),
        ("exampleAttribute.value", Some(ex)) => Some(ex.transformed.clone()),
        _ => None,
    })
}

/// Calls the provider until a bracketed answer comes back.
fn with_retries(call: impl Fn() -> Result<String, ProviderError>) -> Result<String, SynthesisError> {
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        match call() {
            Ok(raw) => match parse_bracket(&raw) {
                Ok(answer) => return Ok(answer.to_string()),
                Err(e) => last = Some(e),
            },
            Err(e) => last = Some(e.into()),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Maps `f` over `inputs` on up to `bound` scoped threads, keeping order.
fn parallel_map<T: Sync, R: Send>(inputs: &[T], bound: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, R)>> = Mutex::new(Vec::with_capacity(inputs.len()));
    std::thread::scope(|scope| {
        for _ in 0..bound.clamp(1, inputs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(input) = inputs.get(i) else { break };
                let r = f(input);
                results.lock().expect("no poisoned workers").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("no poisoned workers");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub descriptor: AttributeDescriptor,
    pub values: BTreeMap<ItemId, AttributeValue>,
    pub failures: BTreeMap<ItemId, String>,
}

impl SynthesisOutcome {
    pub fn into_column(self, collection_id: &str, fill_missing_only: bool) -> SynthesizedColumn {
        SynthesizedColumn {
            collection_id: collection_id.to_string(),
            descriptor: self.descriptor,
            values: self.values,
            fill_missing_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "descriptor", rename_all = "snake_case")]
pub enum Resolved {
    Existing(AttributeDescriptor),
    New(AttributeDescriptor),
}

impl Resolved {
    pub fn descriptor(&self) -> &AttributeDescriptor {
        match self {
            Resolved::Existing(d) | Resolved::New(d) => d,
        }
    }
}

fn normalize(name: &str) -> String {
    name.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

fn find_existing<'a>(collection: &'a Collection, name: &str) -> Option<&'a AttributeDescriptor> {
    let exact = collection
        .schema()
        .iter()
        .find(|d| d.id.as_str().eq_ignore_ascii_case(name) || d.display_name.eq_ignore_ascii_case(name));
    let wanted = normalize(name);
    exact.or_else(|| {
        collection
            .schema()
            .iter()
            .find(|d| normalize(d.id.as_str()) == wanted || normalize(&d.display_name) == wanted)
    })
}

fn sample_context(collection: &Collection) -> String {
    collection.items().first().map_or_else(|| "{}".to_string(), |i| item_context(collection, &i.item_id))
}

/// Asks the provider which attribute a prompt refers to. An answer naming
/// several existing attributes (comma separated) resolves to all of them;
/// anything else becomes one new synthesized attribute.
pub fn resolve_attributes(
    provider: &dyn SynthesisProvider,
    collection: &Collection,
    user_prompt: &str,
) -> Result<Vec<Resolved>, SynthesisError> {
    let user_prompt = user_prompt.trim();
    if user_prompt.is_empty() {
        return Err(SynthesisError::EmptyPrompt);
    }
    let context = sample_context(collection);
    let name = with_retries(|| provider.resolve_name(user_prompt, &context))?;
    if name.is_empty() || name.eq_ignore_ascii_case(NOT_SPECIFIED) {
        return Err(SynthesisError::Unresolved(user_prompt.to_string()));
    }
    if let Some(d) = find_existing(collection, &name) {
        return Ok(vec![Resolved::Existing(d.clone())]);
    }
    let parts: Vec<&str> = name.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if parts.len() > 1 {
        let found: Option<Vec<Resolved>> =
            parts.iter().map(|p| find_existing(collection, p).map(|d| Resolved::Existing(d.clone()))).collect();
        if let Some(found) = found {
            return Ok(found);
        }
    }
    let descriptor = AttributeDescriptor {
        id: AttributeId::new(name.clone())?,
        display_name: name,
        value_kind: ValueKind::Text,
        currency: None,
        origin: Origin::Synthesized,
        source_attributes: Vec::new(),
        prompt: Some(user_prompt.to_string()),
    };
    Ok(vec![Resolved::New(descriptor)])
}

/// Single-attribute form of [`resolve_attributes`].
pub fn resolve_or_generate_attribute(
    provider: &dyn SynthesisProvider,
    collection: &Collection,
    user_prompt: &str,
) -> Result<AttributeDescriptor, SynthesisError> {
    let resolved = resolve_attributes(provider, collection, user_prompt)?;
    Ok(resolved.into_iter().next().expect("at least one resolution").descriptor().clone())
}

/// Kind shared by every concrete value, if there is exactly one.
fn common_kind<'a>(values: impl Iterator<Item = &'a AttributeValue>) -> Option<ValueKind> {
    let mut kinds = values.filter_map(AttributeValue::kind);
    let first = kinds.next()?;
    kinds.all(|k| k == first).then_some(first)
}

fn currency_of(values: &BTreeMap<ItemId, AttributeValue>) -> Option<String> {
    values.values().find_map(|v| match v {
        AttributeValue::Money { currency, .. } => Some(currency.clone()),
        _ => None,
    })
}

fn split_results(
    items: &[ItemId],
    results: Vec<Result<AttributeValue, String>>,
) -> (BTreeMap<ItemId, AttributeValue>, BTreeMap<ItemId, String>) {
    let mut values = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for (id, r) in items.iter().zip(results) {
        match r {
            Ok(v) => {
                values.insert(id.clone(), v);
            }
            Err(e) => {
                failures.insert(id.clone(), e);
            }
        }
    }
    (values, failures)
}

/// Generates one value per item from the descriptor's prompt. Per-item
/// failures are collected, never fatal. A new synthesized descriptor takes
/// the kind its values agree on (text when they disagree).
pub fn generate_values(
    provider: &dyn SynthesisProvider,
    collection: &Collection,
    descriptor: &AttributeDescriptor,
    items: &[ItemId],
) -> Result<SynthesisOutcome, SynthesisError> {
    let prompt = descriptor.prompt.as_deref().ok_or_else(|| SynthesisError::MissingPrompt(descriptor.id.to_string()))?;
    let results = parallel_map(items, PARALLELISM, |id| {
        if collection.item(id).is_none() {
            return Err(format!("unknown item {id}"));
        }
        let context = item_context(collection, id);
        with_retries(|| provider.generate_value(&descriptor.display_name, prompt, &context))
            .map(|answer| infer_value(&answer))
            .map_err(|e| e.to_string())
    });
    let (mut values, failures) = split_results(items, results);
    let mut descriptor = descriptor.clone();
    if descriptor.origin == Origin::Synthesized && !collection.has_attribute(&descriptor.id) {
        let kind = common_kind(values.values());
        descriptor.value_kind = kind.unwrap_or(ValueKind::Text);
        descriptor.currency = currency_of(&values);
        if kind.is_none() {
            for v in values.values_mut() {
                if !v.is_not_specified() {
                    *v = AttributeValue::Text(render(v));
                }
            }
        }
    }
    Ok(SynthesisOutcome { descriptor, values, failures })
}

/// Reformats an attribute's values into a new derived attribute
/// `"<attr> (reformatted)"`. The first item's result serves as the worked
/// example for the rest.
pub fn transform_values(
    provider: &dyn SynthesisProvider,
    collection: &Collection,
    attr_id: &AttributeId,
    user_prompt: &str,
    items: &[ItemId],
) -> Result<SynthesisOutcome, SynthesisError> {
    let source = collection.descriptor(attr_id).ok_or_else(|| SynthesisError::UnknownAttribute(attr_id.to_string()))?;
    let user_prompt = user_prompt.trim();
    if user_prompt.is_empty() {
        return Err(SynthesisError::EmptyPrompt);
    }
    let (first, rest) = items.split_first().ok_or(SynthesisError::NoItems)?;

    let call = |id: &ItemId, example: Option<&TransformExample>| -> Result<(String, String), String> {
        let item = collection.item(id).ok_or_else(|| format!("unknown item {id}"))?;
        let original = render(&collection.get_value(item, attr_id).map_err(|e| e.to_string())?);
        let context = item_context(collection, id);
        let request = TransformRequest {
            attr_name: &source.display_name,
            original_value: &original,
            user_prompt,
            item_context: &context,
            example,
        };
        let answer = with_retries(|| provider.transform_value(&request)).map_err(|e| e.to_string())?;
        Ok((original, answer))
    };

    let first_result = call(first, None);
    let example = first_result.as_ref().ok().map(|(original, transformed)| TransformExample {
        attr_name: source.display_name.clone(),
        original: original.clone(),
        transformed: transformed.clone(),
    });
    let mut answers = vec![first_result.map(|(_, a)| a)];
    answers.extend(parallel_map(rest, PARALLELISM, |id| call(id, example.as_ref()).map(|(_, a)| a)));

    let coerced: Vec<Result<AttributeValue, String>> = answers
        .into_iter()
        .map(|r| {
            r.map(|a| coerce_value(&a, source.value_kind, source.currency.as_deref()).unwrap_or_else(|| infer_value(&a)))
        })
        .collect();
    let (mut values, failures) = split_results(items, coerced);
    let kind = common_kind(values.values()).unwrap_or(source.value_kind);
    if common_kind(values.values()).is_none() {
        for v in values.values_mut() {
            if !v.is_not_specified() {
                *v = AttributeValue::Text(render(v));
            }
        }
    }
    let name = format!("{} (reformatted)", source.display_name);
    let descriptor = AttributeDescriptor {
        id: AttributeId::new(format!("{} (reformatted)", attr_id))?,
        display_name: name,
        value_kind: if values.values().any(|v| !v.is_not_specified()) { kind } else { source.value_kind },
        currency: currency_of(&values).or_else(|| source.currency.clone()),
        origin: Origin::Derived,
        source_attributes: vec![attr_id.clone()],
        prompt: Some(user_prompt.to_string()),
    };
    Ok(SynthesisOutcome { descriptor, values, failures })
}

/// Generates values only for items missing the attribute. Answers that fail
/// or do not fit the declared kind become `NotSpecified`; nothing is
/// reported as a failure.
pub fn autofill_missing(
    provider: &dyn SynthesisProvider,
    collection: &Collection,
    attr_id: &AttributeId,
) -> Result<SynthesisOutcome, SynthesisError> {
    let descriptor =
        collection.descriptor(attr_id).ok_or_else(|| SynthesisError::UnknownAttribute(attr_id.to_string()))?.clone();
    let missing: Vec<ItemId> = collection
        .items()
        .iter()
        .filter(|i| i.values.get(attr_id).is_none_or(AttributeValue::is_not_specified))
        .map(|i| i.item_id.clone())
        .collect();
    let prompt = descriptor.prompt.clone().unwrap_or_else(|| descriptor.display_name.clone());
    let results = parallel_map(&missing, PARALLELISM, |id| {
        let context = item_context(collection, id);
        with_retries(|| provider.generate_value(&descriptor.display_name, &prompt, &context))
            .ok()
            .and_then(|a| coerce_value(&a, descriptor.value_kind, descriptor.currency.as_deref()))
            .unwrap_or(AttributeValue::NotSpecified)
    });
    let values = missing.into_iter().zip(results).collect();
    Ok(SynthesisOutcome { descriptor, values, failures: BTreeMap::new() })
}

/// Which of the three prompts a call answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Resolve,
    Generate,
    Transform,
}

/// What the mock sees of a call.
#[derive(Debug, Clone)]
pub struct MockCall<'a> {
    pub kind: TemplateKind,
    /// The user's or the attribute's prompt.
    pub prompt: &'a str,
    pub attr_name: Option<&'a str>,
    pub original_value: Option<&'a str>,
    pub context: &'a serde_json::Map<String, Value>,
}

impl MockCall<'_> {
    /// Context field rendered as plain text.
    pub fn field(&self, name: &str) -> Option<String> {
        self.context.get(name).map(context_text)
    }

    /// Leading decimal of a context field, e.g. `12.5` from `"12.5 in"`.
    pub fn number(&self, name: &str) -> Option<Decimal> {
        let text = self.field(name)?;
        let lead: String = text.trim().chars().take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-').collect();
        Decimal::from_str(&lead).ok()
    }
}

fn context_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Object(m) if m.contains_key("amount") => {
            let amount = m.get("amount").map(context_text).unwrap_or_default();
            let currency = m.get("currency").map(context_text).unwrap_or_default();
            format!("{amount} {currency}")
        }
        other => other.to_string(),
    }
}

pub type MockFn = Arc<dyn Fn(&MockCall<'_>) -> String + Send + Sync>;

#[derive(Clone)]
pub enum MockResponse {
    Fixed(String),
    /// `${Field}` placeholders filled from the item context.
    Template(String),
    Computed(MockFn),
}

impl std::fmt::Debug for MockResponse {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MockResponse::Fixed(s) => f.debug_tuple("Fixed").field(s).finish(),
            MockResponse::Template(s) => f.debug_tuple("Template").field(s).finish(),
            MockResponse::Computed(_) => f.write_str("Computed(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRule {
    pub kind: TemplateKind,
    /// Matched case-insensitively as a substring of the prompt.
    pub pattern: String,
    pub response: MockResponse,
}

impl MockRule {
    pub fn fixed(kind: TemplateKind, pattern: &str, response: &str) -> Self {
        Self { kind, pattern: pattern.to_lowercase(), response: MockResponse::Fixed(response.to_string()) }
    }

    pub fn template(kind: TemplateKind, pattern: &str, response: &str) -> Self {
        Self { kind, pattern: pattern.to_lowercase(), response: MockResponse::Template(response.to_string()) }
    }

    pub fn computed(
        kind: TemplateKind,
        pattern: &str,
        f: impl Fn(&MockCall<'_>) -> String + Send + Sync + 'static,
    ) -> Self {
        Self { kind, pattern: pattern.to_lowercase(), response: MockResponse::Computed(Arc::new(f)) }
    }
}

/// Deterministic rule-table provider. The first matching rule answers;
/// unmatched calls answer `[Not Specified]`.
#[derive(Debug, Default)]
pub struct MockProvider {
    rules: Vec<MockRule>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Preloaded with the four worked examples of the prompt templates.
    pub fn new() -> Self {
        use TemplateKind::*;
        Self::empty().with_rules([
            MockRule::fixed(Resolve, "is it 4k", "[Is 4k]"),
            MockRule::fixed(Resolve, "multiply the item height with the length", "[Item Height x Length]"),
            MockRule::fixed(Resolve, "at least how old", "[Approximate Minimum Age]"),
            MockRule::fixed(Resolve, "what's the value of", "[Value]"),
            MockRule::computed(Generate, "is it 4k", is_4k),
            MockRule::computed(Generate, "multiply the item height with the length", |call| {
                match (call.number("Item Height"), call.number("Item Length")) {
                    (Some(h), Some(l)) => format!("[{}]", (h * l).normalize()),
                    _ => format!("[{NOT_SPECIFIED}]"),
                }
            }),
            MockRule::fixed(Generate, "at least how old", "[At least 2 Years]"),
            MockRule::fixed(Generate, "what's the value of", "[Medium Value]"),
        ])
    }

    /// Appends rules; earlier rules win.
    pub fn with_rules(mut self, rules: impl IntoIterator<Item = MockRule>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn answer(&self, call: &MockCall<'_>) -> String {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let prompt = call.prompt.to_lowercase();
        let rule = self.rules.iter().find(|r| r.kind == call.kind && prompt.contains(&r.pattern));
        match rule.map(|r| &r.response) {
            None => format!("[{NOT_SPECIFIED}]"),
            Some(MockResponse::Fixed(s)) => s.clone(),
            Some(MockResponse::Template(t)) => {
                substitute(t, |name, _| Some(call.field(name).unwrap_or_else(|| NOT_SPECIFIED.to_string())))
            }
            Some(MockResponse::Computed(f)) => f(call),
        }
    }
}

fn is_4k(call: &MockCall<'_>) -> String {
    let Some(res) = call.field("Maximum Resolution") else {
        return format!("[{NOT_SPECIFIED}]");
    };
    let dims: Vec<u32> = res
        .to_lowercase()
        .split('x')
        .filter_map(|p| p.split_whitespace().next().and_then(|n| n.parse().ok()))
        .collect();
    match dims[..] {
        [w, h] => format!("[{}]", if w >= 3840 && h >= 2160 { "Yes" } else { "No" }),
        _ => format!("[{NOT_SPECIFIED}]"),
    }
}

fn parse_context(item_context: &str) -> serde_json::Map<String, Value> {
    serde_json::from_str(item_context).unwrap_or_default()
}

impl SynthesisProvider for MockProvider {
    fn resolve_name(&self, user_prompt: &str, item_context: &str) -> Result<String, ProviderError> {
        let context = parse_context(item_context);
        Ok(self.answer(&MockCall {
            kind: TemplateKind::Resolve,
            prompt: user_prompt,
            attr_name: None,
            original_value: None,
            context: &context,
        }))
    }

    fn generate_value(&self, attr_name: &str, attr_prompt: &str, item_context: &str) -> Result<String, ProviderError> {
        let context = parse_context(item_context);
        Ok(self.answer(&MockCall {
            kind: TemplateKind::Generate,
            prompt: attr_prompt,
            attr_name: Some(attr_name),
            original_value: None,
            context: &context,
        }))
    }

    fn transform_value(&self, request: &TransformRequest<'_>) -> Result<String, ProviderError> {
        let context = parse_context(request.item_context);
        Ok(self.answer(&MockCall {
            kind: TemplateKind::Transform,
            prompt: request.user_prompt,
            attr_name: Some(request.attr_name),
            original_value: Some(request.original_value),
            context: &context,
        }))
    }
}

#[cfg(feature = "http-provider")]
pub use http::{HttpProvider, HttpSettings};

#[cfg(feature = "http-provider")]
mod http {
    use std::sync::OnceLock;
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{render_generate_prompt, render_resolve_prompt, render_transform_prompt, ProviderError, SynthesisProvider, TransformRequest};

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct HttpSettings {
        pub base_url: String,
        /// Name of the environment variable holding the bearer key.
        pub api_key_env: String,
        pub model: String,
    }

    /// Sends each rendered prompt as one POST of `{model, prompt}` and reads
    /// the `text` field of the JSON reply.
    #[derive(Debug)]
    pub struct HttpProvider {
        settings: HttpSettings,
        api_key: Option<String>,
        client: OnceLock<reqwest::blocking::Client>,
    }

    #[derive(Serialize)]
    struct Request<'a> {
        model: &'a str,
        prompt: &'a str,
    }

    #[derive(Deserialize)]
    struct Reply {
        text: String,
    }

    impl HttpProvider {
        pub fn new(settings: HttpSettings) -> Self {
            let api_key = std::env::var(&settings.api_key_env).ok();
            Self { settings, api_key, client: OnceLock::new() }
        }

        fn client(&self) -> Result<&reqwest::blocking::Client, ProviderError> {
            if let Some(c) = self.client.get() {
                return Ok(c);
            }
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .map_err(|e| ProviderError::Config(e.to_string()))?;
            Ok(self.client.get_or_init(|| client))
        }

        fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
            let mut req = self
                .client()?
                .post(&self.settings.base_url)
                .json(&Request { model: &self.settings.model, prompt });
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(ProviderError::Status(resp.status().as_u16()));
            }
            let reply: Reply = resp.json().map_err(|e| ProviderError::Transport(e.to_string()))?;
            Ok(reply.text)
        }
    }

    impl SynthesisProvider for HttpProvider {
        fn resolve_name(&self, user_prompt: &str, item_context: &str) -> Result<String, ProviderError> {
            self.complete(&render_resolve_prompt(user_prompt, item_context))
        }

        fn generate_value(&self, attr_name: &str, attr_prompt: &str, item_context: &str) -> Result<String, ProviderError> {
            self.complete(&render_generate_prompt(attr_name, attr_prompt, item_context))
        }

        fn transform_value(&self, request: &TransformRequest<'_>) -> Result<String, ProviderError> {
            self.complete(&render_transform_prompt(request))
        }
    }
}
