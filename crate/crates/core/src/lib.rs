//! Headless engine for customizable overview-detail interfaces.
//!
//! Collections of items are shown through a graph of overview and detail
//! views. Every user customization is a [`view::Mutation`] folded over the
//! graph and recorded in a [`session_log::SessionLog`].

pub mod model;
pub mod query;
pub mod session_log;
pub mod synthesis;
pub mod view;
