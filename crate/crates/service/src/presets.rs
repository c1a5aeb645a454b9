//! Initial view graphs for new sessions.

use malleable_core::model::{attr, AttributeId};
use malleable_core::view::{
    Catalog, DetailMultiplicity, OverviewDetailLayout, OverviewLayout, ViewError, ViewGraph, ViewNode,
};

/// Attributes every shopping overview starts with.
pub const SHOPPING_DEFAULTS: [&str; 9] = [
    "Title",
    "Thumbnail Image",
    "Vendor Username",
    "Vendor Feedback Score",
    "Vendor Feedback Percentage",
    "Product Price",
    "Product Condition",
    "Number of Products Sold",
    "Add to Cart",
];

#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub collection_id: &'static str,
    build: fn(&Catalog, &str) -> Result<ViewGraph, ViewError>,
}

impl Preset {
    /// Builds and validates the graph against the loaded corpus.
    pub fn build(&self, catalog: &Catalog) -> Result<ViewGraph, ViewError> {
        let graph = (self.build)(catalog, self.collection_id)?;
        graph.validate(catalog)?;
        Ok(graph)
    }
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "shopping-default", collection_id: "shopping", build: shopping },
    Preset { name: "booking-default", collection_id: "booking", build: booking },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

fn ids(names: &[&str]) -> Vec<AttributeId> {
    names.iter().map(|n| attr(n)).collect()
}

fn shopping(catalog: &Catalog, cid: &str) -> Result<ViewGraph, ViewError> {
    let defaults = ids(&SHOPPING_DEFAULTS);
    let mut g = ViewGraph::new();
    g.insert_view(catalog, ViewNode::overview("search-results", cid, "Search Results", OverviewLayout::List).with_surfaced(&defaults))?;
    g.insert_view(
        catalog,
        ViewNode::overview("cart", cid, "Cart", OverviewLayout::Grid).with_surfaced(&defaults).with_members(Vec::new()),
    )?;
    g.insert_view(catalog, ViewNode::detail("item-detail", cid, "Item", DetailMultiplicity::OneAtATime))?;
    g.link("search-results", "item-detail", OverviewDetailLayout::NewPage)?;
    g.link("cart", "item-detail", OverviewDetailLayout::NewPage)?;
    g.set_default_surfaced(cid, defaults);
    Ok(g)
}

fn booking(catalog: &Catalog, cid: &str) -> Result<ViewGraph, ViewError> {
    let map = OverviewLayout::SpatialMap { lat: attr("Latitude"), lon: attr("Longitude") };
    let mut g = ViewGraph::new();
    g.insert_view(catalog, ViewNode::overview("map", cid, "Map", map).with_surfaced(&ids(&["Rating"])))?;
    g.insert_view(
        catalog,
        ViewNode::overview("bookmarks", cid, "Bookmarks", OverviewLayout::List)
            .with_surfaced(&ids(&["Hotel Name"]))
            .with_members(Vec::new()),
    )?;
    g.insert_view(catalog, ViewNode::detail("hotel-detail", cid, "Hotel", DetailMultiplicity::OneAtATime))?;
    g.link("map", "hotel-detail", OverviewDetailLayout::AboveOverviewPopup)?;
    g.link("bookmarks", "hotel-detail", OverviewDetailLayout::NewPage)?;
    g.set_default_surfaced(cid, ids(&["Hotel Name"]));
    Ok(g)
}

/// Fallback for corpora without a preset: one list overview showing the
/// first few schema attributes, and a detail view.
pub fn generic(catalog: &Catalog, cid: &str) -> Result<ViewGraph, ViewError> {
    let collection = catalog.get(cid).ok_or_else(|| ViewError::UnknownCollection(cid.into()))?;
    let surfaced: Vec<AttributeId> = collection.schema().iter().take(4).map(|d| d.id.clone()).collect();
    let mut g = ViewGraph::new();
    g.insert_view(catalog, ViewNode::overview("overview", cid, collection.title(), OverviewLayout::List).with_surfaced(&surfaced))?;
    g.insert_view(catalog, ViewNode::detail("detail", cid, "Detail", DetailMultiplicity::OneAtATime))?;
    g.link("overview", "detail", OverviewDetailLayout::NewPage)?;
    g.set_default_surfaced(cid, surfaced);
    g.validate(catalog)?;
    Ok(g)
}
