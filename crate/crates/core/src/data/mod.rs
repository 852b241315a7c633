//! Tabular data: feature schema, CSV ingestion with standardization, and the
//! coalition bitmask shared by every other module.

mod coalition;
mod dataset;
mod schema;

pub use coalition::{
    coalition_iter, proper_coalition_count, sample_coalitions, Coalition, SamplingMode,
    ENUMERATION_LIMIT, MAX_FEATURES,
};
pub(crate) use coalition::binomial;
pub use dataset::{load_csv, load_csv_with_stats, write_csv, ColumnStats, Dataset, Instance};
pub use schema::{FeatureKind, FeatureSchema, FeatureSpec, Slot};
