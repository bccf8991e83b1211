use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Result, StoreError};

/// Entity time in integer epoch seconds.
///
/// [`Timestamp::NEG_INF`] marks non-temporal rows and orders below every
/// finite value; [`Timestamp::POS_INF`] is a convenient "no cutoff" bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const NEG_INF: Timestamp = Timestamp(i64::MIN);
    pub const POS_INF: Timestamp = Timestamp(i64::MAX);

    pub fn is_finite(self) -> bool {
        self != Self::NEG_INF && self != Self::POS_INF
    }

    pub fn secs(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::NEG_INF => f.write_str("-inf"),
            Self::POS_INF => f.write_str("+inf"),
            Timestamp(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
    Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "default_true")]
    pub nullable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub target_table: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub file: String,
    pub primary_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_column: Option<String>,
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableSpec {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// The JSON manifest describing a database on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tables: Vec<TableSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Missing,
    Num(f64),
    Cat(String),
    Text(String),
    Time(Timestamp),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    /// Textual form used for CSV output and prompts; `None` when missing.
    pub fn render(&self) -> Option<String> {
        match self {
            Cell::Missing => None,
            Cell::Num(x) => Some(format!("{x}")),
            Cell::Cat(s) | Cell::Text(s) => Some(s.clone()),
            Cell::Time(t) => Some(t.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableId(pub usize);

/// One row: primary key, foreign keys, attribute cells and entity time.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub pkey: String,
    /// Aligned with [`TableSpec::foreign_keys`]; `None` for a missing cell.
    pub fkeys: Vec<Option<String>>,
    /// One cell per declared column, in declaration order.
    pub attrs: Vec<Cell>,
    pub time: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub spec: TableSpec,
    pub entities: Vec<Entity>,
    pub pk_col: usize,
    pub time_col: Option<usize>,
    /// `(column index, target table)` for each foreign key, in declaration order.
    pub fk_cols: Vec<(usize, TableId)>,
}

impl Table {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Columns that carry entity attributes: everything except the primary
    /// key, foreign keys and the entity time column.
    pub fn attribute_columns(&self) -> Vec<usize> {
        (0..self.spec.columns.len())
            .filter(|&c| c != self.pk_col && Some(c) != self.time_col && !self.fk_cols.iter().any(|&(f, _)| f == c))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DanglingRef {
    pub table: String,
    pub row: usize,
    pub column: String,
    pub key: String,
}

/// Things the loader accepted but flags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub dangling: Vec<DanglingRef>,
    /// `(table, column, count)` of cells that failed to parse and became missing.
    pub unparseable: Vec<(String, String, usize)>,
    /// Tables with a foreign key into themselves.
    pub self_referential: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub tables: Vec<Table>,
    by_name: HashMap<String, TableId>,
    /// `(fkey table, pkey table)` pairs, derived from the declared foreign keys.
    pub links: BTreeSet<(TableId, TableId)>,
    pub report: LoadReport,
}

impl Database {
    /// Assemble and validate a database from already-parsed tables.
    pub fn from_tables(specs_and_rows: Vec<(TableSpec, Vec<Entity>)>, report: LoadReport) -> Result<Self> {
        let mut by_name = HashMap::new();
        for (i, (spec, _)) in specs_and_rows.iter().enumerate() {
            if by_name.insert(spec.name.clone(), TableId(i)).is_some() {
                return Err(StoreError::InvalidManifest(format!("table `{}` declared twice", spec.name)));
            }
        }
        let mut tables = Vec::with_capacity(specs_and_rows.len());
        let mut links = BTreeSet::new();
        for (i, (spec, entities)) in specs_and_rows.into_iter().enumerate() {
            let mismatch = |reason: String| StoreError::SchemaMismatch { table: spec.name.clone(), reason };
            let mut seen = std::collections::HashSet::new();
            for c in &spec.columns {
                if !seen.insert(c.name.as_str()) {
                    return Err(mismatch(format!("column `{}` declared twice", c.name)));
                }
            }
            let pk_col = spec
                .column_index(&spec.primary_key)
                .ok_or_else(|| mismatch(format!("primary key `{}` is not a column", spec.primary_key)))?;
            let time_col = match &spec.time_column {
                Some(t) => {
                    let c = spec.column_index(t).ok_or_else(|| mismatch(format!("time column `{t}` is not a column")))?;
                    if spec.columns[c].kind != ColumnKind::Timestamp {
                        return Err(mismatch(format!("time column `{t}` must have kind timestamp")));
                    }
                    Some(c)
                }
                None => None,
            };
            let mut fk_cols = Vec::with_capacity(spec.foreign_keys.len());
            for fk in &spec.foreign_keys {
                let c = spec
                    .column_index(&fk.column)
                    .ok_or_else(|| mismatch(format!("foreign key `{}` is not a column", fk.column)))?;
                let target = *by_name.get(&fk.target_table).ok_or_else(|| {
                    mismatch(format!("foreign key `{}` targets undeclared table `{}`", fk.column, fk.target_table))
                })?;
                fk_cols.push((c, target));
                links.insert((TableId(i), target));
            }
            let mut keys = std::collections::HashSet::with_capacity(entities.len());
            for e in &entities {
                if e.attrs.len() != spec.columns.len() {
                    return Err(mismatch(format!("row has {} cells, expected {}", e.attrs.len(), spec.columns.len())));
                }
                if !keys.insert(e.pkey.as_str()) {
                    return Err(StoreError::DuplicatePrimaryKey { table: spec.name.clone(), key: e.pkey.clone() });
                }
            }
            tables.push(Table { spec, entities, pk_col, time_col, fk_cols });
        }
        let mut db = Self { tables, by_name, links, report };
        db.flag_references();
        Ok(db)
    }

    fn flag_references(&mut self) {
        let keys: Vec<HashSet<&str>> =
            self.tables.iter().map(|t| t.entities.iter().map(|e| e.pkey.as_str()).collect()).collect();
        let mut dangling = Vec::new();
        let mut self_ref = Vec::new();
        for (ti, t) in self.tables.iter().enumerate() {
            if t.fk_cols.iter().any(|&(_, target)| target.0 == ti) {
                self_ref.push(t.spec.name.clone());
            }
            for (row, e) in t.entities.iter().enumerate() {
                for (k, &(_, target)) in t.fk_cols.iter().enumerate() {
                    if let Some(key) = &e.fkeys[k] {
                        if !keys[target.0].contains(key.as_str()) {
                            dangling.push(DanglingRef {
                                table: t.spec.name.clone(),
                                row,
                                column: t.spec.foreign_keys[k].column.clone(),
                                key: key.clone(),
                            });
                        }
                    }
                }
            }
        }
        self.report.dangling = dangling;
        self.report.self_referential = self_ref;
    }

    pub fn table_id(&self, name: &str) -> Result<TableId> {
        self.by_name.get(name).copied().ok_or_else(|| StoreError::UnknownTable(name.to_string()))
    }

    pub fn table(&self, id: TableId) -> &Table {
        &self.tables[id.0]
    }

    pub fn table_by_name(&self, name: &str) -> Result<&Table> {
        Ok(self.table(self.table_id(name)?))
    }

    pub fn entity(&self, table: TableId, row: usize) -> &Entity {
        &self.tables[table.0].entities[row]
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn num_entities(&self) -> usize {
        self.tables.iter().map(Table::len).sum()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest { tables: self.tables.iter().map(|t| t.spec.clone()).collect() }
    }

    /// Largest finite entity time, if any table is temporal.
    pub fn max_time(&self) -> Option<Timestamp> {
        self.tables.iter().flat_map(|t| t.entities.iter().map(|e| e.time)).filter(|t| t.is_finite()).max()
    }
}
