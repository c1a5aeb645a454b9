//! View materialization: typed comparison, filtering, stable sorting,
//! projection, canonical rendering, and overview representation suggestions.

use std::cmp::Ordering;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{currency_symbol, AttributeDescriptor, AttributeId, AttributeValue, Collection, Item, ItemId, ValueKind};
use crate::view::{FilterSpec, OverviewLayout, Predicate, SortDirection, SortSpec, ViewKind, ViewNode};

/// Position of a value's kind in the cross-kind order. `NotSpecified` is last.
fn kind_rank(v: &AttributeValue) -> u8 {
    match v {
        AttributeValue::Number(_) => 0,
        AttributeValue::Money { .. } => 1,
        AttributeValue::Date(_) => 2,
        AttributeValue::Boolean(_) => 3,
        AttributeValue::ComponentRef { state: Value::Bool(_), .. } => 3,
        AttributeValue::Text(_) => 4,
        AttributeValue::ImageRef(_) => 5,
        AttributeValue::ComponentRef { .. } => 6,
        AttributeValue::Color(_) => 7,
        AttributeValue::NotSpecified => 8,
    }
}

fn cmp_case_insensitive(a: &str, b: &str) -> Ordering {
    a.chars().flat_map(char::to_lowercase).cmp(b.chars().flat_map(char::to_lowercase))
}

/// Total order over attribute values.
///
/// Within a kind: numbers, money (currency code first, then amount) and dates
/// in natural order, text case-insensitively, `false < true`. Across kinds:
/// number < money < date < boolean < text < image < component < color, and
/// `NotSpecified` after everything.
pub fn compare(a: &AttributeValue, b: &AttributeValue) -> Ordering {
    use AttributeValue as V;
    let (ra, rb) = (kind_rank(a), kind_rank(b));
    if ra != rb {
        return ra.cmp(&rb);
    }
    match (a, b) {
        (V::Number(x), V::Number(y)) => x.cmp(y),
        (V::Money { amount: x, currency: cx }, V::Money { amount: y, currency: cy }) => {
            cx.cmp(cy).then_with(|| x.cmp(y))
        }
        (V::Date(x), V::Date(y)) => x.instant().cmp(&y.instant()),
        (V::Text(x), V::Text(y)) => cmp_case_insensitive(x, y),
        (V::ImageRef(x), V::ImageRef(y)) => x.cmp(y),
        (V::Color(x), V::Color(y)) => x.cmp(y),
        (V::ComponentRef { component: kx, state: sx }, V::ComponentRef { component: ky, state: sy })
            if ra == 6 =>
        {
            kx.cmp(ky).then_with(|| sx.to_string().cmp(&sy.to_string()))
        }
        // rank 3: booleans and boolean-state components compare by flag
        _ if ra == 3 => a.as_flag().cmp(&b.as_flag()),
        (V::NotSpecified, V::NotSpecified) => Ordering::Equal,
        _ => unreachable!("equal ranks imply matching variants"),
    }
}

/// Sort comparison for one direction; `NotSpecified` stays last either way.
pub fn compare_directed(a: &AttributeValue, b: &AttributeValue, direction: SortDirection) -> Ordering {
    match (a.is_not_specified(), b.is_not_specified()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => match direction {
            SortDirection::Asc => compare(a, b),
            SortDirection::Desc => compare(b, a),
        },
    }
}

/// Evaluates a filter predicate against one cell value.
pub fn matches(predicate: &Predicate, value: &AttributeValue) -> bool {
    match predicate {
        Predicate::Equals { value: target } => compare(value, target) == Ordering::Equal,
        Predicate::Contains { text } => {
            !value.is_not_specified() && render(value).to_lowercase().contains(&text.to_lowercase())
        }
        Predicate::Range { lo, hi } => {
            let in_kind = |bound: &AttributeValue| match (value, bound) {
                (AttributeValue::Money { currency: a, .. }, AttributeValue::Money { currency: b, .. }) => a == b,
                _ => value.kind().is_some() && value.kind() == bound.kind(),
            };
            lo.iter().chain(hi.iter()).all(in_kind)
                && value.kind().is_some_and(|k| matches!(k, ValueKind::Number | ValueKind::Money | ValueKind::Date))
                && lo.as_ref().is_none_or(|lo| compare(value, lo) != Ordering::Less)
                && hi.as_ref().is_none_or(|hi| compare(value, hi) != Ordering::Greater)
        }
        Predicate::IsTrue => value.as_flag() == Some(true),
        Predicate::IsNotSpecified => value.is_not_specified(),
        Predicate::Negate { inner } => !matches(inner, value),
    }
}

fn cell(item: &Item, attr: &AttributeId) -> AttributeValue {
    item.values.get(attr).cloned().unwrap_or(AttributeValue::NotSpecified)
}

fn passes(item: &Item, filters: &[FilterSpec]) -> bool {
    filters.iter().all(|f| matches(&f.predicate, item.values.get(&f.attr).unwrap_or(&AttributeValue::NotSpecified)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub attr: AttributeId,
    pub value: AttributeValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializedRow {
    pub item_id: ItemId,
    pub cells: Vec<Cell>,
}

/// Items an overview enumerates before filtering, in base order: the whole
/// collection, or a user collection's membership order.
pub fn base_items<'a>(view: &ViewNode, collection: &'a Collection) -> Vec<&'a Item> {
    match view.members() {
        None => collection.items().iter().collect(),
        Some(members) => members.iter().filter_map(|id| collection.item(id)).collect(),
    }
}

/// Filters (conjunction), stably sorts, and projects an overview.
pub fn materialize(view: &ViewNode, collection: &Collection) -> Vec<MaterializedRow> {
    let mut items: Vec<&Item> = base_items(view, collection).into_iter().filter(|i| passes(i, &view.filters)).collect();
    if let Some(SortSpec { attr, direction }) = &view.sort {
        let missing = AttributeValue::NotSpecified;
        items.sort_by(|a, b| {
            compare_directed(a.values.get(attr).unwrap_or(&missing), b.values.get(attr).unwrap_or(&missing), *direction)
        });
    }
    let columns: Vec<&AttributeId> = view.surfaced.iter().filter(|a| !view.hidden.contains(*a)).collect();
    items
        .into_iter()
        .map(|item| MaterializedRow {
            item_id: item.item_id.clone(),
            cells: columns.iter().map(|a| Cell { attr: (*a).clone(), value: cell(item, a) }).collect(),
        })
        .collect()
}

/// Full-attribute row for a detail view: every schema attribute in
/// declaration order, minus the view's hidden set.
pub fn materialize_detail(view: &ViewNode, collection: &Collection, item_id: &str) -> Option<MaterializedRow> {
    debug_assert!(matches!(view.kind, ViewKind::Detail { .. }));
    let item = collection.item(item_id)?;
    Some(MaterializedRow {
        item_id: item.item_id.clone(),
        cells: collection
            .schema()
            .iter()
            .filter(|d| !view.hidden.contains(&d.id))
            .map(|d| Cell { attr: d.id.clone(), value: cell(item, &d.id) })
            .collect(),
    })
}

/// Canonical display string for a value.
pub fn render(value: &AttributeValue) -> String {
    match value {
        AttributeValue::Text(s) => s.clone(),
        AttributeValue::Number(n) => n.normalize().to_string(),
        AttributeValue::Money { amount, currency } => render_money(*amount, currency),
        AttributeValue::Boolean(true) => "Yes".into(),
        AttributeValue::Boolean(false) => "No".into(),
        AttributeValue::Date(d) => d.as_str().to_string(),
        AttributeValue::ImageRef(uris) => match uris.len() {
            1 => "1 image".into(),
            n => format!("{n} images"),
        },
        AttributeValue::ComponentRef { component, state } => match state {
            Value::Null => component.clone(),
            Value::Bool(b) => format!("{component}: {}", if *b { "Yes" } else { "No" }),
            other => format!("{component}: {other}"),
        },
        AttributeValue::Color(c) => c.to_hex(),
        AttributeValue::NotSpecified => crate::model::NOT_SPECIFIED.into(),
    }
}

fn render_money(amount: Decimal, currency: &str) -> String {
    let places = if currency == "JPY" { 0 } else { 2 };
    let rounded = amount.round_dp_with_strategy(places, RoundingStrategy::MidpointAwayFromZero);
    let mut digits = rounded.abs();
    digits.rescale(places);
    let sign = if rounded.is_sign_negative() && !rounded.is_zero() { "-" } else { "" };
    match currency_symbol(currency) {
        Some(symbol) => format!("{sign}{symbol}{digits}"),
        None => format!("{sign}{digits} {currency}"),
    }
}

pub const ELLIPSIS: char = '…';

/// Renders a value for an overview cell within `budget` characters. Only
/// text is shortened: it is cut at the last word boundary that leaves room
/// for a trailing ellipsis.
pub fn truncate_for_overview(value: &AttributeValue, budget: usize) -> (String, bool) {
    let budget = budget.max(1);
    let text = render(value);
    let AttributeValue::Text(_) = value else { return (text, false) };
    if text.chars().count() <= budget {
        return (text, false);
    }
    let room: String = text.chars().take(budget - 1).collect();
    // Cut at a boundary only if the next character starts a new word.
    let next_is_space = text.chars().nth(budget - 1).is_some_and(char::is_whitespace);
    let cut = if next_is_space {
        room.as_str()
    } else {
        match room.rfind(char::is_whitespace) {
            Some(i) => &room[..i],
            None => room.as_str(),
        }
    };
    let mut out = cut.trim_end().to_string();
    out.push(ELLIPSIS);
    (out, true)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationSuggestion {
    pub layout: OverviewLayout,
    /// 1 for attribute-specific layouts, 2 for the universal fallbacks.
    pub rank: u32,
}

fn is_lat(d: &AttributeDescriptor) -> bool {
    let n = d.display_name.to_lowercase();
    d.value_kind == ValueKind::Number && (n == "latitude" || n == "lat")
}

fn is_lon(d: &AttributeDescriptor) -> bool {
    let n = d.display_name.to_lowercase();
    d.value_kind == ValueKind::Number && (n == "longitude" || n == "lon" || n == "lng")
}

/// Suggests overview representations for a set of selected attributes.
///
/// Rule table, in order: two number/money attributes give a scatter plot
/// (x = first, y = second); a date gives a timeline; a color gives a color
/// space; a latitude/longitude pair gives a spatial map. List, grid and
/// table are always appended.
pub fn suggest_representations(selected: &[AttributeDescriptor]) -> Vec<RepresentationSuggestion> {
    let mut out = Vec::new();
    let numeric: Vec<&AttributeDescriptor> = selected.iter().filter(|d| d.value_kind.is_numeric()).collect();
    if let [x, y, ..] = numeric.as_slice() {
        out.push(OverviewLayout::Scatter { x: x.id.clone(), y: y.id.clone() });
    }
    if let Some(date) = selected.iter().find(|d| d.value_kind == ValueKind::Date) {
        out.push(OverviewLayout::Timeline { date: date.id.clone() });
    }
    if let Some(color) = selected.iter().find(|d| d.value_kind == ValueKind::Color) {
        out.push(OverviewLayout::ColorSpace { color: color.id.clone() });
    }
    if let (Some(lat), Some(lon)) = (selected.iter().find(|d| is_lat(d)), selected.iter().find(|d| is_lon(d))) {
        out.push(OverviewLayout::SpatialMap { lat: lat.id.clone(), lon: lon.id.clone() });
    }
    let mut suggestions: Vec<RepresentationSuggestion> =
        out.into_iter().map(|layout| RepresentationSuggestion { layout, rank: 1 }).collect();
    for layout in [OverviewLayout::List, OverviewLayout::Grid, OverviewLayout::Table] {
        suggestions.push(RepresentationSuggestion { layout, rank: 2 });
    }
    debug_assert!(suggestions
        .iter()
        .all(|s| s.layout.validate(|id| selected.iter().find(|d| &d.id == id)).is_ok()));
    suggestions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attr, AttributeDescriptor as D, IsoDate, Rgb};
    use crate::view::{OverviewLayout, SortSpec};

    fn year_collection(years: &[Option<i64>]) -> Collection {
        let schema = vec![D::source("Year Manufactured", ValueKind::Number), D::source("Condition", ValueKind::Text)];
        let items = years
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let item = Item::new(&format!("i{i}"));
                match y {
                    Some(y) => item.with("Year Manufactured", AttributeValue::Number((*y).into())),
                    None => item,
                }
            })
            .collect();
        Collection::new("c", "c", schema, items).unwrap()
    }

    fn overview() -> ViewNode {
        ViewNode::overview("v", "c", "v", OverviewLayout::List).with_surfaced(&[attr("Year Manufactured")])
    }

    #[test]
    fn compare_examples() {
        assert_eq!(compare(&AttributeValue::number("2019"), &AttributeValue::number("2021")), Ordering::Less);
        assert_eq!(compare(&AttributeValue::NotSpecified, &AttributeValue::text("x")), Ordering::Greater);
        assert_eq!(
            compare(&AttributeValue::money("10", "USD"), &AttributeValue::money("10", "EUR")),
            Ordering::Greater
        );
        assert_eq!(compare(&AttributeValue::text("apple"), &AttributeValue::text("Banana")), Ordering::Less);
        assert_eq!(compare(&AttributeValue::Boolean(false), &AttributeValue::Boolean(true)), Ordering::Less);
        assert_eq!(compare(&AttributeValue::number("1.0"), &AttributeValue::number("1.00")), Ordering::Equal);
        assert_eq!(compare(&AttributeValue::number("5"), &AttributeValue::money("1", "USD")), Ordering::Less);
    }

    #[test]
    fn sort_desc_keeps_missing_last() {
        let c = year_collection(&[Some(2019), None, Some(2021), Some(2020)]);
        let mut v = overview();
        v.sort = Some(SortSpec::desc(attr("Year Manufactured")));
        let ids: Vec<_> = materialize(&v, &c).into_iter().map(|r| r.item_id).collect();
        assert_eq!(ids, ["i2", "i3", "i0", "i1"]);
        v.sort = Some(SortSpec::asc(attr("Year Manufactured")));
        let ids: Vec<_> = materialize(&v, &c).into_iter().map(|r| r.item_id).collect();
        assert_eq!(ids, ["i0", "i3", "i2", "i1"]);
    }

    #[test]
    fn equality_filter_counts_rows() {
        let schema = vec![D::source("Condition", ValueKind::Text)];
        let items = ["New", "Used", "New"]
            .iter()
            .enumerate()
            .map(|(i, c)| Item::new(&i.to_string()).with("Condition", AttributeValue::text(c)))
            .collect();
        let c = Collection::new("c", "c", schema, items).unwrap();
        let mut v = ViewNode::overview("v", "c", "v", OverviewLayout::List);
        v.filters.push(FilterSpec {
            attr: attr("Condition"),
            predicate: Predicate::Equals { value: AttributeValue::text("New") },
        });
        assert_eq!(materialize(&v, &c).len(), 2);
    }

    #[test]
    fn negated_not_specified_keeps_present_values() {
        let c = year_collection(&[Some(2019), None, Some(2021)]);
        let mut v = overview();
        v.filters.push(FilterSpec { attr: attr("Year Manufactured"), predicate: Predicate::IsNotSpecified.negate() });
        let ids: Vec<_> = materialize(&v, &c).into_iter().map(|r| r.item_id).collect();
        assert_eq!(ids, ["i0", "i2"]);
    }

    #[test]
    fn range_and_is_true_predicates() {
        let lo = Some(AttributeValue::number("2020"));
        assert!(matches(&Predicate::Range { lo: lo.clone(), hi: None }, &AttributeValue::number("2020")));
        assert!(!matches(&Predicate::Range { lo: lo.clone(), hi: None }, &AttributeValue::number("2019")));
        assert!(!matches(&Predicate::Range { lo, hi: None }, &AttributeValue::NotSpecified));
        let usd = Predicate::Range { lo: None, hi: Some(AttributeValue::money("100", "USD")) };
        assert!(matches(&usd, &AttributeValue::money("99", "USD")));
        assert!(!matches(&usd, &AttributeValue::money("5", "EUR")));
        let wish = AttributeValue::ComponentRef { component: "Add to Wishlist".into(), state: Value::Bool(true) };
        assert!(matches(&Predicate::IsTrue, &wish));
        assert!(matches(&Predicate::Contains { text: "LINEN".into() }, &AttributeValue::text("Belgian linen")));
    }

    #[test]
    fn hidden_attributes_are_not_projected() {
        let c = year_collection(&[Some(2019)]);
        let mut v = overview();
        v.surfaced.push(attr("Condition"));
        let rows = materialize(&v, &c);
        assert_eq!(rows[0].cells.len(), 2);
        assert_eq!(rows[0].cells[1].value, AttributeValue::NotSpecified);
        v.surfaced.retain(|a| a != &attr("Condition"));
        v.hidden.insert(attr("Condition"));
        assert!(materialize(&v, &c)[0].cells.iter().all(|c| c.attr != attr("Condition")));
    }

    #[test]
    fn detail_rows_expose_everything_but_hidden() {
        let c = year_collection(&[Some(2019)]);
        let mut d = ViewNode::detail("d", "c", "d", Default::default());
        assert_eq!(materialize_detail(&d, &c, "i0").unwrap().cells.len(), 2);
        d.hidden.insert(attr("Condition"));
        let row = materialize_detail(&d, &c, "i0").unwrap();
        assert_eq!(row.cells.len(), 1);
        assert!(materialize_detail(&d, &c, "nope").is_none());
    }

    #[test]
    fn member_order_is_the_base_order() {
        let c = year_collection(&[Some(1), Some(2), Some(3)]);
        let v = overview().with_members(vec!["i2".into(), "i0".into(), "gone".into()]);
        let ids: Vec<_> = materialize(&v, &c).into_iter().map(|r| r.item_id).collect();
        assert_eq!(ids, ["i2", "i0"]);
    }

    // Golden rendering table.
    #[test]
    fn canonical_rendering() {
        let cases = [
            (AttributeValue::money("39.99", "USD"), "$39.99"),
            (AttributeValue::money("39.9", "USD"), "$39.90"),
            (AttributeValue::money("-4.5", "EUR"), "-€4.50"),
            (AttributeValue::money("1200", "JPY"), "¥1200"),
            (AttributeValue::money("12.5", "CHF"), "12.50 CHF"),
            (AttributeValue::number("35.60"), "35.6"),
            (AttributeValue::number("2021"), "2021"),
            (AttributeValue::Boolean(true), "Yes"),
            (AttributeValue::Date(IsoDate::parse("2024-06-01").unwrap()), "2024-06-01"),
            (AttributeValue::ImageRef(vec!["a.png".into(), "b.png".into()]), "2 images"),
            (AttributeValue::Color(Rgb([255, 0, 16])), "#ff0010"),
            (AttributeValue::NotSpecified, "Not Specified"),
        ];
        for (value, expected) in cases {
            assert_eq!(truncate_for_overview(&value, 80), (expected.to_string(), false));
        }
    }

    #[test]
    fn truncation_cuts_at_word_boundary() {
        let long = "lorem ipsum dolor sit amet ".repeat(12);
        assert_eq!(long.chars().count(), 324);
        let (s, truncated) = truncate_for_overview(&AttributeValue::Text(long.clone()), 80);
        assert!(truncated);
        assert!(s.chars().count() <= 80);
        assert!(s.ends_with(ELLIPSIS));
        let body = s.trim_end_matches(ELLIPSIS);
        assert!(long.starts_with(body));
        assert!(long[body.len()..].starts_with(' '), "cut lands on a word boundary");
        assert_eq!(truncate_for_overview(&AttributeValue::text("Hi"), 80), ("Hi".into(), false));
        assert_eq!(truncate_for_overview(&AttributeValue::text("abcdef"), 1), ("…".into(), true));
        assert_eq!(truncate_for_overview(&AttributeValue::text("abcdef"), 4), ("abc…".into(), true));
    }

    #[test]
    fn representation_rules() {
        let price = D::source("Price", ValueKind::Money);
        let score = D::source("Vendor Feedback Score", ValueKind::Number);
        let s = suggest_representations(&[price, score]);
        assert_eq!(s[0].layout, OverviewLayout::Scatter { x: attr("Price"), y: attr("Vendor Feedback Score") });
        assert_eq!(s.len(), 4);

        let s = suggest_representations(&[D::source("Dominant Color", ValueKind::Color)]);
        assert_eq!(s[0].layout, OverviewLayout::ColorSpace { color: attr("Dominant Color") });

        let s = suggest_representations(&[D::source("Title", ValueKind::Text)]);
        let layouts: Vec<_> = s.iter().map(|s| (&s.layout, s.rank)).collect();
        assert_eq!(
            layouts,
            [(&OverviewLayout::List, 2), (&OverviewLayout::Grid, 2), (&OverviewLayout::Table, 2)]
        );

        let s = suggest_representations(&[
            D::source("Latitude", ValueKind::Number),
            D::source("Longitude", ValueKind::Number),
        ]);
        assert!(s.iter().any(|s| s.layout == OverviewLayout::SpatialMap { lat: attr("Latitude"), lon: attr("Longitude") }));
    }
}
