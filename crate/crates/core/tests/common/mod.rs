//! Random corpora, view specs, and naive reference implementations shared
//! by the property tests and the acceptance run.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;

use malleable_core::model::{
    attr, AttributeDescriptor, AttributeId, AttributeValue, Collection, IsoDate, Item, Origin, Rgb, ValueKind,
};
use malleable_core::view::{
    Catalog, DetailMultiplicity, FilterSpec, Mutation, OverviewDetailLayout, OverviewLayout, Predicate,
    SortDirection, SortSpec, SynthesizedColumn, ViewGraph, ViewNode,
};
use rand::seq::IndexedRandom;
use rand::Rng;
use rust_decimal::Decimal;
use serde_json::Value;

pub const ATTRS: [(&str, ValueKind); 8] = [
    ("Name", ValueKind::Text),
    ("Price", ValueKind::Money),
    ("Score", ValueKind::Number),
    ("Listed", ValueKind::Date),
    ("Active", ValueKind::Boolean),
    ("Tint", ValueKind::Color),
    ("Photos", ValueKind::ImageRef),
    ("Cart", ValueKind::ComponentRef),
];

const WORDS: [&str; 10] = ["lamp", "Desk", "chair", "Sofa", "linen", "OAK", "walnut", "rug", "shelf", "Mirror"];

pub fn decimal<R: Rng>(rng: &mut R) -> Decimal {
    Decimal::new(rng.random_range(-5000..5000), rng.random_range(0..3))
}

pub fn value_of_kind<R: Rng>(rng: &mut R, kind: ValueKind) -> AttributeValue {
    match kind {
        ValueKind::Text => {
            let n = rng.random_range(1..4);
            let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
            AttributeValue::Text(words.join(" "))
        }
        ValueKind::Number => AttributeValue::Number(decimal(rng)),
        ValueKind::Money => AttributeValue::Money {
            amount: decimal(rng).abs(),
            currency: ["USD", "USD", "USD", "EUR"].choose(rng).unwrap().to_string(),
        },
        ValueKind::Boolean => AttributeValue::Boolean(rng.random()),
        ValueKind::Date => {
            let raw = if rng.random_bool(0.5) {
                format!("2024-{:02}-{:02}", rng.random_range(1..13), rng.random_range(1..29))
            } else {
                format!("2024-{:02}-{:02}T{:02}:30:00Z", rng.random_range(1..13), rng.random_range(1..29), rng.random_range(0..24))
            };
            AttributeValue::Date(IsoDate::parse(&raw).unwrap())
        }
        ValueKind::ImageRef => {
            AttributeValue::ImageRef((0..rng.random_range(0..3)).map(|i| format!("img/{}.jpg", rng.random_range(0..5) + i)).collect())
        }
        ValueKind::ComponentRef => {
            AttributeValue::ComponentRef { component: "add_to_cart".into(), state: Value::Bool(rng.random()) }
        }
        ValueKind::Color => AttributeValue::Color(Rgb([rng.random(), rng.random(), rng.random()])),
    }
}

/// Any value, any kind, including free-form components and `NotSpecified`.
pub fn any_value<R: Rng>(rng: &mut R) -> AttributeValue {
    match rng.random_range(0..11) {
        0 => AttributeValue::NotSpecified,
        1 => AttributeValue::ComponentRef {
            component: ["rating", "stepper"].choose(rng).unwrap().to_string(),
            state: Value::from(rng.random_range(0..3)),
        },
        2 => AttributeValue::Text(["", "a", "A", "b", "Lamp"].choose(rng).unwrap().to_string()),
        k => value_of_kind(rng, ATTRS[(k - 3) as usize].1),
    }
}

pub fn schema() -> Vec<AttributeDescriptor> {
    ATTRS
        .iter()
        .map(|(id, kind)| {
            let d = AttributeDescriptor::source(id, *kind);
            if *kind == ValueKind::Money { d.with_currency("USD") } else { d }
        })
        .collect()
}

/// Up to `max_items` items; roughly one cell in five is missing (absent or
/// an explicit `NotSpecified`).
pub fn collection<R: Rng>(rng: &mut R, max_items: usize) -> Collection {
    let n = rng.random_range(0..=max_items);
    let items = (0..n)
        .map(|i| {
            let mut item = Item::new(&format!("i{i:03}"));
            for (id, kind) in ATTRS {
                match rng.random_range(0..10) {
                    0 => {}
                    1 => {
                        item.values.insert(attr(id), AttributeValue::NotSpecified);
                    }
                    _ => {
                        item.values.insert(attr(id), value_of_kind(rng, kind));
                    }
                }
            }
            item
        })
        .collect();
    Collection::new("c", "Random", schema(), items).unwrap()
}

pub fn cell(item: &Item, id: &AttributeId) -> AttributeValue {
    item.values.get(id).cloned().unwrap_or(AttributeValue::NotSpecified)
}

fn random_cell<R: Rng>(rng: &mut R, c: &Collection, id: &AttributeId, kind: ValueKind) -> AttributeValue {
    match c.items().choose(rng) {
        Some(item) if rng.random_bool(0.7) => cell(item, id),
        _ => value_of_kind(rng, kind),
    }
}

pub fn predicate<R: Rng>(rng: &mut R, c: &Collection, id: &AttributeId, kind: ValueKind) -> Predicate {
    let p = match rng.random_range(0..5) {
        0 => Predicate::Equals { value: random_cell(rng, c, id, kind) },
        1 => Predicate::IsNotSpecified,
        2 if kind == ValueKind::Text => Predicate::Contains { text: WORDS.choose(rng).unwrap()[..2].to_string() },
        2 | 3 if matches!(kind, ValueKind::Number | ValueKind::Money | ValueKind::Date) => {
            let mut bound = || match random_cell(rng, c, id, kind) {
                AttributeValue::NotSpecified => None,
                v => Some(v),
            };
            let (lo, hi) = (bound(), bound());
            Predicate::Range { lo, hi }
        }
        _ if matches!(kind, ValueKind::Boolean | ValueKind::ComponentRef) => Predicate::IsTrue,
        _ => Predicate::Equals { value: random_cell(rng, c, id, kind) },
    };
    if rng.random_bool(0.2) { p.negate() } else { p }
}

/// A random overview over the collection: sort, up to three filters, and a
/// surfaced/hidden split.
pub fn overview<R: Rng>(rng: &mut R, c: &Collection) -> ViewNode {
    let mut node = ViewNode::overview("o", "c", "O", OverviewLayout::List);
    for (id, _) in ATTRS {
        match rng.random_range(0..3) {
            0 => node.surfaced.push(attr(id)),
            1 => {
                node.hidden.insert(attr(id));
            }
            _ => {}
        }
    }
    if rng.random_bool(0.8) {
        let (id, _) = ATTRS.choose(rng).unwrap();
        let direction = if rng.random() { SortDirection::Asc } else { SortDirection::Desc };
        node.sort = Some(SortSpec { attr: attr(id), direction });
    }
    for _ in 0..rng.random_range(0..4) {
        let (id, kind) = *ATTRS.choose(rng).unwrap();
        let p = predicate(rng, c, &attr(id), kind);
        node.filters.push(FilterSpec { attr: attr(id), predicate: p });
    }
    node
}

/// Sort key whose derived order is the intended cross-kind order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Key {
    Number(Decimal),
    Money(String, Decimal),
    Date(i64),
    Flag(bool),
    Text(String),
    Images(Vec<String>),
    Component(String, String),
    Color([u8; 3]),
    Missing,
}

pub fn key(v: &AttributeValue) -> Key {
    match v {
        AttributeValue::Number(d) => Key::Number(*d),
        AttributeValue::Money { amount, currency } => Key::Money(currency.clone(), *amount),
        AttributeValue::Date(d) => Key::Date(d.instant().and_utc().timestamp_millis()),
        AttributeValue::Boolean(b) => Key::Flag(*b),
        AttributeValue::ComponentRef { state: Value::Bool(b), .. } => Key::Flag(*b),
        AttributeValue::ComponentRef { component, state } => Key::Component(component.clone(), state.to_string()),
        AttributeValue::Text(s) => Key::Text(s.to_lowercase()),
        AttributeValue::ImageRef(v) => Key::Images(v.clone()),
        AttributeValue::Color(c) => Key::Color(c.0),
        AttributeValue::NotSpecified => Key::Missing,
    }
}

fn same_variant(a: &Key, b: &Key) -> bool {
    match (a, b) {
        (Key::Money(ca, _), Key::Money(cb, _)) => ca == cb,
        _ => std::mem::discriminant(a) == std::mem::discriminant(b),
    }
}

pub fn oracle_matches(p: &Predicate, v: &AttributeValue) -> bool {
    let k = key(v);
    match p {
        Predicate::Equals { value } => k == key(value),
        Predicate::Contains { text } => match v {
            AttributeValue::Text(s) => s.to_lowercase().contains(&text.to_lowercase()),
            _ => false,
        },
        Predicate::Range { lo, hi } => {
            let ranged = matches!(k, Key::Number(_) | Key::Money(..) | Key::Date(_));
            let lo_ok = lo.as_ref().is_none_or(|b| same_variant(&k, &key(b)) && k >= key(b));
            let hi_ok = hi.as_ref().is_none_or(|b| same_variant(&k, &key(b)) && k <= key(b));
            ranged && lo_ok && hi_ok
        }
        Predicate::IsTrue => k == Key::Flag(true),
        Predicate::IsNotSpecified => k == Key::Missing,
        Predicate::Negate { inner } => !oracle_matches(inner, v),
    }
}

/// Naive materialization: filter, insertion-sort (stable), project.
pub fn oracle_rows(view: &ViewNode, c: &Collection) -> Vec<(String, Vec<AttributeValue>)> {
    let mut kept: Vec<&Item> =
        c.items().iter().filter(|i| view.filters.iter().all(|f| oracle_matches(&f.predicate, &cell(i, &f.attr)))).collect();
    if let Some(sort) = &view.sort {
        let before = |a: &Item, b: &Item| -> bool {
            let (ka, kb) = (key(&cell(a, &sort.attr)), key(&cell(b, &sort.attr)));
            match (ka == Key::Missing, kb == Key::Missing) {
                (true, _) => false,
                (false, true) => true,
                (false, false) => match sort.direction {
                    SortDirection::Asc => ka < kb,
                    SortDirection::Desc => ka > kb,
                },
            }
        };
        let mut sorted: Vec<&Item> = Vec::with_capacity(kept.len());
        for item in kept {
            let mut at = sorted.len();
            while at > 0 && before(item, sorted[at - 1]) {
                at -= 1;
            }
            sorted.insert(at, item);
        }
        kept = sorted;
    }
    let columns: Vec<&AttributeId> = view.surfaced.iter().filter(|a| !view.hidden.contains(*a)).collect();
    kept.into_iter().map(|i| (i.item_id.clone(), columns.iter().map(|a| cell(i, a)).collect())).collect()
}

pub fn ordering_of(a: &AttributeValue, b: &AttributeValue) -> Ordering {
    key(a).cmp(&key(b))
}

/// Catalog with one random collection and a graph with a base overview, a
/// user-collection overview, and a linked detail view.
pub fn session<R: Rng>(rng: &mut R, max_items: usize) -> (Catalog, ViewGraph) {
    let mut catalog = Catalog::new();
    catalog.insert(collection(rng, max_items));
    let mut g = ViewGraph::new();
    let defaults = vec![attr("Name"), attr("Price")];
    g.insert_view(&catalog, ViewNode::overview("results", "c", "Results", OverviewLayout::List).with_surfaced(&defaults))
        .unwrap();
    g.insert_view(
        &catalog,
        ViewNode::overview("saved", "c", "Saved", OverviewLayout::Grid).with_surfaced(&defaults).with_members(vec![]),
    )
    .unwrap();
    g.insert_view(&catalog, ViewNode::detail("detail", "c", "Detail", DetailMultiplicity::OneAtATime)).unwrap();
    g.link("results", "detail", OverviewDetailLayout::NewPage).unwrap();
    g.link("saved", "detail", OverviewDetailLayout::SideBySide).unwrap();
    g.set_default_surfaced("c", defaults);
    (catalog, g)
}

/// One random customization through the public operations. Invalid picks
/// are expected; they must leave the graph untouched.
pub fn random_op<R: Rng>(rng: &mut R, catalog: &Catalog, g: &mut ViewGraph) -> Result<Vec<Mutation>, String> {
    let c = catalog.get("c").unwrap().clone();
    let views: Vec<String> = g.nodes().map(|n| n.view_id.clone()).collect();
    let overviews: Vec<String> = g.overviews().map(|n| n.view_id.clone()).collect();
    let view = views.choose(rng).unwrap().clone();
    let pick_attr = |rng: &mut R| {
        let (id, kind) = *ATTRS.choose(rng).unwrap();
        if rng.random_bool(0.05) { (attr("Bogus"), kind) } else { (attr(id), kind) }
    };
    let before = g.clone();
    let result = match rng.random_range(0..13) {
        0 | 1 => {
            let attrs: Vec<AttributeId> = (0..rng.random_range(1..3)).map(|_| pick_attr(rng).0).collect();
            let pos = rng.random_bool(0.3).then(|| rng.random_range(0..4));
            g.surface(catalog, &view, &attrs, pos)
        }
        2 => g.hide(catalog, &view, &[pick_attr(rng).0]),
        3 => {
            let sort = rng.random_bool(0.8).then(|| SortSpec { attr: pick_attr(rng).0, direction: SortDirection::Desc });
            g.set_sort(catalog, &view, sort)
        }
        4 => {
            let (id, kind) = pick_attr(rng);
            let p = predicate(rng, &c, &id, kind);
            g.add_filter(catalog, &view, FilterSpec { attr: id, predicate: p })
        }
        5 => g.remove_filter(catalog, &view, rng.random_range(0..2)),
        6 => {
            let title = format!("List {}", rng.random_range(0..100));
            g.add_overview(catalog, "c", &title, rng.random()).map(|(_, m)| m)
        }
        7 => g.remove_overview(catalog, overviews.choose(rng).unwrap()),
        8 => g.rename_overview(catalog, &view, "Renamed"),
        9 => {
            let item = c.items().choose(rng).map_or("ghost".to_string(), |i| i.item_id.clone());
            g.move_item(catalog, overviews.choose(rng).unwrap(), overviews.choose(rng).unwrap(), &item)
        }
        10 => {
            let layout = match rng.random_range(0..5) {
                0 => OverviewLayout::Table,
                1 => OverviewLayout::Scatter { x: attr("Price"), y: attr("Score") },
                2 => OverviewLayout::Timeline { date: attr("Listed") },
                3 => OverviewLayout::ColorSpace { color: attr("Name") },
                _ => OverviewLayout::Grid,
            };
            g.set_overview_layout(catalog, &view, layout)
        }
        11 => {
            let detail = if rng.random() { "detail" } else { "results" };
            let layout = if rng.random() { OverviewDetailLayout::InPlaceDropdown } else { OverviewDetailLayout::UnderOverview };
            g.set_od_layout(catalog, &view, detail, layout)
                .or_else(|_| g.set_detail_multiplicity(catalog, "detail", DetailMultiplicity::ManyAtATime))
        }
        _ => {
            let id = format!("Synth {}", rng.random_range(0..3));
            let mut values = BTreeMap::new();
            for item in c.items() {
                if rng.random_bool(0.7) {
                    values.insert(item.item_id.clone(), AttributeValue::Number(decimal(rng)));
                }
            }
            let descriptor = AttributeDescriptor {
                origin: Origin::Synthesized,
                prompt: Some("how good is it".into()),
                ..AttributeDescriptor::source(&id, ValueKind::Number)
            };
            g.add_column(catalog, SynthesizedColumn { collection_id: "c".into(), descriptor, values, fill_missing_only: false })
        }
    };
    match result {
        Ok(m) => Ok(m),
        Err(e) => {
            assert_eq!(*g, before, "failed op changed the graph: {e}");
            Err(e.to_string())
        }
    }
}

pub fn surfaced_hidden_disjoint(g: &ViewGraph) -> bool {
    g.nodes().all(|n| n.surfaced.iter().all(|a| !n.hidden.contains(a)))
}

/// Exact sum of two decimal strings using integer arithmetic on a common
/// scale, rendered back with that scale.
pub fn add_decimal_strings(a: &str, b: &str) -> String {
    fn split(s: &str) -> (i128, u32) {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        let digits: i128 = format!("{int}{frac}").parse().unwrap();
        (digits, frac.len() as u32)
    }
    let ((x, sx), (y, sy)) = (split(a), split(b));
    let scale = sx.max(sy);
    let total = x * 10i128.pow(scale - sx) + y * 10i128.pow(scale - sy);
    let sign = if total < 0 { "-" } else { "" };
    let abs = total.unsigned_abs().to_string();
    if scale == 0 {
        return format!("{sign}{abs}");
    }
    let padded = format!("{abs:0>width$}", width = scale as usize + 1);
    let (i, f) = padded.split_at(padded.len() - scale as usize);
    format!("{sign}{i}.{f}")
}

/// 50 listings with USD price and shipping fee, some of either missing,
/// plus the expected Total Cost per item from the string oracle.
pub fn total_cost_fixture<R: Rng>(rng: &mut R) -> (Collection, BTreeMap<String, AttributeValue>) {
    let schema = vec![
        AttributeDescriptor::source("Price", ValueKind::Money).with_currency("USD"),
        AttributeDescriptor::source("Shipping Fee", ValueKind::Money).with_currency("USD"),
    ];
    let mut expected = BTreeMap::new();
    let items = (0..50)
        .map(|i| {
            let id = format!("p{i:02}");
            let price = (i % 11 != 5).then(|| format!("{}.{:02}", rng.random_range(1..900), rng.random_range(0..100)));
            let fee = (i % 7 != 3).then(|| format!("{}.{:02}", rng.random_range(0..30), rng.random_range(0..100)));
            let mut item = Item::new(&id);
            if let Some(p) = &price {
                item = item.with("Price", AttributeValue::money(p, "USD"));
            }
            item = item.with(
                "Shipping Fee",
                fee.as_deref().map_or(AttributeValue::NotSpecified, |f| AttributeValue::money(f, "USD")),
            );
            let total = match (&price, &fee) {
                (Some(p), Some(f)) => AttributeValue::money(&add_decimal_strings(p, f), "USD"),
                _ => AttributeValue::NotSpecified,
            };
            expected.insert(id, total);
            item
        })
        .collect();
    (Collection::new("c", "Listings", schema, items).unwrap(), expected)
}

pub fn total_cost_descriptor() -> AttributeDescriptor {
    AttributeDescriptor::derived("Total Cost", ValueKind::Money, &["Price", "Shipping Fee"]).with_currency("USD")
}
