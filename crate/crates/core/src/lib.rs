//! Engine for adapted design interfaces: construct model, knowledge sampling,
//! domain adaptation, command catalog, translation, metrics and sessions.

pub mod adapt;
pub mod catalog;
pub mod construct;
pub mod fixtures;
pub mod knowledge;
pub mod metrics;
pub mod session;
pub mod translator;
