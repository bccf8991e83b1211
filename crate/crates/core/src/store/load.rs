use std::fs::{self, File};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::types::{Cell, ColumnKind, Database, Entity, LoadReport, Manifest, TableSpec, Timestamp};
use super::{Result, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub struct LoadOptions {
    /// Cells per column that may fail to parse (and become missing) before
    /// the load is rejected with [`StoreError::SchemaMismatch`].
    pub max_unparseable_per_column: usize,
}


/// Parse an integer epoch-seconds value, an RFC 3339 datetime, a naive
/// `YYYY-MM-DD[ T]HH:MM:SS` datetime (read as UTC) or a bare date.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let s = s.trim();
    if let Ok(n) = s.parse::<i64>() {
        return (n != i64::MIN && n != i64::MAX).then_some(Timestamp(n));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(Timestamp(dt.timestamp()));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Timestamp(dt.and_utc().timestamp()));
        }
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(Timestamp(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp()))
}

fn parse_cell(kind: ColumnKind, raw: &str) -> Option<Cell> {
    match kind {
        ColumnKind::Numeric => raw.trim().parse::<f64>().ok().filter(|x| x.is_finite()).map(Cell::Num),
        ColumnKind::Categorical => Some(Cell::Cat(raw.to_string())),
        ColumnKind::Text => Some(Cell::Text(raw.to_string())),
        ColumnKind::Timestamp => parse_timestamp(raw).map(Cell::Time),
    }
}

fn read_table(spec: &TableSpec, data_dir: &Path, opts: LoadOptions, report: &mut LoadReport) -> Result<Vec<Entity>> {
    let path = data_dir.join(&spec.file);
    if !path.is_file() {
        return Err(StoreError::MissingFile(path));
    }
    let mismatch = |reason: String| StoreError::SchemaMismatch { table: spec.name.clone(), reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(File::open(&path)?);
    let header = reader.headers()?.clone();
    let positions: Vec<usize> = spec
        .columns
        .iter()
        .map(|c| {
            header.iter().position(|h| h == c.name).ok_or_else(|| mismatch(format!("column `{}` absent from CSV", c.name)))
        })
        .collect::<Result<_>>()?;
    let pk_col = spec.column_index(&spec.primary_key);
    let time_col = spec.time_column.as_deref().and_then(|t| spec.column_index(t));
    let fk_cols: Vec<Option<usize>> = spec.foreign_keys.iter().map(|fk| spec.column_index(&fk.column)).collect();

    let mut bad = vec![0usize; spec.columns.len()];
    let mut entities = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let raw = |c: usize| record.get(positions[c]).unwrap_or("");
        let mut attrs = Vec::with_capacity(spec.columns.len());
        for (c, col) in spec.columns.iter().enumerate() {
            let s = raw(c);
            if s.is_empty() {
                if !col.nullable || Some(c) == pk_col {
                    return Err(mismatch(format!("row {row}: missing value in non-nullable column `{}`", col.name)));
                }
                attrs.push(Cell::Missing);
                continue;
            }
            match parse_cell(col.kind, s) {
                Some(cell) => attrs.push(cell),
                None => {
                    bad[c] += 1;
                    attrs.push(Cell::Missing);
                }
            }
        }
        let pkey = pk_col.map(|c| raw(c).to_string()).unwrap_or_default();
        let fkeys = fk_cols.iter().map(|c| c.map(raw).filter(|s| !s.is_empty()).map(str::to_string)).collect();
        let time = match time_col.map(|c| &attrs[c]) {
            Some(Cell::Time(t)) => *t,
            _ => Timestamp::NEG_INF,
        };
        entities.push(Entity { pkey, fkeys, attrs, time });
    }
    for (c, &n) in bad.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let col = &spec.columns[c];
        if n > opts.max_unparseable_per_column {
            return Err(mismatch(format!("{n} cells of column `{}` do not parse as {:?}", col.name, col.kind)));
        }
        report.unparseable.push((spec.name.clone(), col.name.clone(), n));
    }
    Ok(entities)
}

/// Load a database from a JSON manifest and per-table CSV files in `data_dir`.
pub fn load_database(manifest_path: &Path, data_dir: &Path, opts: LoadOptions) -> Result<Database> {
    if !manifest_path.is_file() {
        return Err(StoreError::MissingFile(manifest_path.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let mut report = LoadReport::default();
    let mut parts = Vec::with_capacity(manifest.tables.len());
    for spec in manifest.tables {
        let rows = read_table(&spec, data_dir, opts, &mut report)?;
        parts.push((spec, rows));
    }
    Database::from_tables(parts, report)
}

/// Write `db` as `manifest.json` plus one CSV per table under `dir`.
///
/// Key columns are written from the stored key strings, so loading the
/// result reproduces an equal database.
pub fn write_database(db: &Database, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = db.manifest();
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for t in &db.tables {
        let mut w = csv::Writer::from_path(dir.join(&t.spec.file))?;
        w.write_record(t.spec.columns.iter().map(|c| c.name.as_str()))?;
        for e in &t.entities {
            let mut row: Vec<String> = e.attrs.iter().map(|c| c.render().unwrap_or_default()).collect();
            row[t.pk_col] = e.pkey.clone();
            for (k, &(c, _)) in t.fk_cols.iter().enumerate() {
                row[c] = e.fkeys[k].clone().unwrap_or_default();
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(())
}
