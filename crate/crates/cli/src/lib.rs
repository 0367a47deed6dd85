//! Command-line front end: single runs, batches with a metrics report,
//! trajectory-group collection and advantage export.

pub mod cli;
pub mod collect;
pub mod factory;
pub mod report;
pub mod runner;
