//! Model documents, archetype classification and connection resolution.

pub mod classify;
pub mod connect;
pub mod document;
pub mod stats;

pub use classify::{classify, Classification, ClassificationTable, ClassifyError, Pattern, TableRow};
pub use connect::{resolve_connections, BlockChannel, BlockConnection, ConnectionKind, ConnectionReport, OpenEndpoint};
pub use document::{parse_model, write_model, ModelError};
pub use stats::{model_stats, ModelStats};
