use fnv::FnvHashMap;

use super::types::{Database, TableId};

/// Hash indexes over primary keys and foreign-key references.
#[derive(Debug, Clone, Default)]
pub struct KeyIndex {
    /// `primary[t][key]` is the row of `key` in table `t`.
    primary: Vec<FnvHashMap<String, usize>>,
    /// `referencing[t][k][key]` lists, ascending, the rows of table `t` whose
    /// `k`-th foreign key holds `key`.
    referencing: Vec<Vec<FnvHashMap<String, Vec<usize>>>>,
    fk_targets: Vec<Vec<TableId>>,
}

impl KeyIndex {
    pub fn build(db: &Database) -> Self {
        let mut primary = Vec::with_capacity(db.num_tables());
        let mut referencing = Vec::with_capacity(db.num_tables());
        let mut fk_targets = Vec::with_capacity(db.num_tables());
        for t in &db.tables {
            primary.push(t.entities.iter().enumerate().map(|(row, e)| (e.pkey.clone(), row)).collect());
            let mut per_fk: Vec<FnvHashMap<String, Vec<usize>>> = vec![FnvHashMap::default(); t.fk_cols.len()];
            for (row, e) in t.entities.iter().enumerate() {
                for (k, key) in e.fkeys.iter().enumerate() {
                    if let Some(key) = key {
                        per_fk[k].entry(key.clone()).or_default().push(row);
                    }
                }
            }
            referencing.push(per_fk);
            fk_targets.push(t.fk_cols.iter().map(|&(_, target)| target).collect());
        }
        Self { primary, referencing, fk_targets }
    }

    pub fn row_of(&self, table: TableId, key: &str) -> Option<usize> {
        self.primary[table.0].get(key).copied()
    }

    /// Rows of `table` whose `fk`-th foreign key equals `key`, ascending.
    pub fn referencing_by_column(&self, table: TableId, fk: usize, key: &str) -> &[usize] {
        self.referencing[table.0][fk].get(key).map_or(&[], Vec::as_slice)
    }

    /// Rows of `src` referencing `key` in `dst` through any foreign key of the
    /// link `(src, dst)`, ascending and without repeats.
    pub fn referencing(&self, src: TableId, dst: TableId, key: &str) -> Vec<usize> {
        let mut rows: Vec<usize> = self.fk_targets[src.0]
            .iter()
            .enumerate()
            .filter(|&(_, &t)| t == dst)
            .flat_map(|(k, _)| self.referencing_by_column(src, k, key).iter().copied())
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    /// Resolve the `fk`-th foreign key of `(table, row)` to a target row.
    pub fn resolve(&self, db: &Database, table: TableId, row: usize, fk: usize) -> Option<(TableId, usize)> {
        let target = self.fk_targets[table.0][fk];
        let key = db.entity(table, row).fkeys[fk].as_deref()?;
        self.row_of(target, key).map(|r| (target, r))
    }
}

/// Convenience wrapper for [`KeyIndex::build`].
pub fn build_key_index(db: &Database) -> KeyIndex {
    KeyIndex::build(db)
}
