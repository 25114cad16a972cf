//! HTTP service and command-line tools around the active learning engine.

pub mod api;
pub mod cli;
pub mod datasets;
pub mod plot;
pub mod sessions;
