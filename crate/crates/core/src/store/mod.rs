//! Relational databases: typed tables, primary/foreign keys and entity times.
//!
//! A database is described by a JSON manifest plus one CSV file per table
//! (see [`Manifest`]). Loading validates keys and column types, turns empty
//! cells into [`Cell::Missing`], and keeps foreign keys that resolve to no
//! row (they are reported in [`LoadReport::dangling`] and produce no graph
//! edges).

mod index;
mod load;
mod types;

pub use index::{build_key_index, KeyIndex};
pub use load::{load_database, parse_timestamp, write_database, LoadOptions};
pub use types::{
    Cell, ColumnKind, ColumnSpec, Database, DanglingRef, Entity, ForeignKey, LoadReport, Manifest, Table, TableId,
    TableSpec, Timestamp,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("schema mismatch in table `{table}`: {reason}")]
    SchemaMismatch { table: String, reason: String },
    #[error("duplicate primary key `{key}` in table `{table}`")]
    DuplicatePrimaryKey { table: String, key: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests;
