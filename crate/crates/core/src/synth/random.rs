use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::store::{Cell, ColumnKind, ColumnSpec, Database, Entity, ForeignKey, LoadReport, TableSpec, Timestamp};

/// Shape of a random schema for property tests.
#[derive(Debug, Clone, Copy)]
pub struct RandomDbConfig {
    pub tables: usize,
    /// Total rows, split as evenly as possible over the tables.
    pub rows: usize,
    /// Probability that a table has a foreign key into each earlier table.
    pub link_prob: f64,
    /// Probability that a table gets a self-referential foreign key.
    pub self_link_prob: f64,
    /// Per foreign-key cell: probability of missing and of dangling.
    pub missing_fk_prob: f64,
    pub dangling_fk_prob: f64,
    /// Probability that a table is temporal.
    pub temporal_prob: f64,
    /// Entity times are drawn from `0..time_range`.
    pub time_range: i64,
}

impl Default for RandomDbConfig {
    fn default() -> Self {
        Self {
            tables: 3,
            rows: 60,
            link_prob: 0.7,
            self_link_prob: 0.15,
            missing_fk_prob: 0.1,
            dangling_fk_prob: 0.05,
            temporal_prob: 0.7,
            time_range: 50,
        }
    }
}

/// Generate a random database with every column kind, optional entity
/// times, missing values and missing, dangling, duplicated and
/// self-referential foreign keys.
///
/// Table `i` may reference any table `j < i`, sometimes through two columns.
/// Tables with a self link reference only earlier rows.
pub fn random_database(seed: u64, cfg: RandomDbConfig) -> Database {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tables = cfg.tables.max(1);
    let counts: Vec<usize> =
        (0..n_tables).map(|i| cfg.rows / n_tables + usize::from(i < cfg.rows % n_tables)).collect();
    let mut specs: Vec<TableSpec> = Vec::with_capacity(n_tables);
    for i in 0..n_tables {
        let name = format!("t{i}");
        let mut columns = vec![ColumnSpec { name: "id".into(), kind: ColumnKind::Categorical, nullable: false }];
        let mut foreign_keys = Vec::new();
        for j in 0..i {
            if rng.gen_bool(cfg.link_prob) {
                let copies = if rng.gen_bool(0.2) { 2 } else { 1 };
                for c in 0..copies {
                    let col = format!("fk_t{j}_{c}");
                    columns.push(ColumnSpec { name: col.clone(), kind: ColumnKind::Categorical, nullable: true });
                    foreign_keys.push(ForeignKey { column: col, target_table: format!("t{j}") });
                }
            }
        }
        if rng.gen_bool(cfg.self_link_prob) {
            columns.push(ColumnSpec { name: "parent".into(), kind: ColumnKind::Categorical, nullable: true });
            foreign_keys.push(ForeignKey { column: "parent".into(), target_table: name.clone() });
        }
        let time_column = rng.gen_bool(cfg.temporal_prob).then(|| "ts".to_string());
        if time_column.is_some() {
            columns.push(ColumnSpec { name: "ts".into(), kind: ColumnKind::Timestamp, nullable: true });
        }
        for (k, kind) in [ColumnKind::Numeric, ColumnKind::Categorical, ColumnKind::Text].into_iter().enumerate() {
            if k == 0 || rng.gen_bool(0.7) {
                columns.push(ColumnSpec { name: format!("a{k}"), kind, nullable: true });
            }
        }
        specs.push(TableSpec { file: format!("{name}.csv"), name, primary_key: "id".into(), time_column, columns, foreign_keys });
    }

    let mut parts = Vec::with_capacity(n_tables);
    for (i, spec) in specs.iter().enumerate() {
        let mut rows = Vec::with_capacity(counts[i]);
        for r in 0..counts[i] {
            let pkey = format!("t{i}r{r}");
            let mut attrs = Vec::with_capacity(spec.columns.len());
            let mut fkeys = vec![None; spec.foreign_keys.len()];
            let mut time = Timestamp::NEG_INF;
            for c in &spec.columns {
                if c.name == "id" {
                    attrs.push(Cell::Cat(pkey.clone()));
                } else if let Some(k) = spec.foreign_keys.iter().position(|f| f.column == c.name) {
                    let target: usize = spec.foreign_keys[k].target_table[1..].parse().expect("t<i> table name");
                    let pool = if target == i { r } else { counts[target] };
                    let v = if pool == 0 || rng.gen_bool(cfg.missing_fk_prob) {
                        None
                    } else if rng.gen_bool(cfg.dangling_fk_prob) {
                        Some(format!("ghost{}", rng.gen_range(0..3)))
                    } else {
                        Some(format!("t{target}r{}", rng.gen_range(0..pool)))
                    };
                    attrs.push(v.clone().map_or(Cell::Missing, Cell::Cat));
                    fkeys[k] = v;
                } else if rng.gen_bool(0.1) {
                    attrs.push(Cell::Missing);
                } else {
                    let cell = match c.kind {
                        ColumnKind::Numeric => Cell::Num((rng.gen_range(-1000.0..1000.0f64) * 8.0).round() / 8.0),
                        ColumnKind::Categorical => Cell::Cat(format!("c{}", rng.gen_range(0..5))),
                        ColumnKind::Text => {
                            let n = rng.gen_range(1..4);
                            Cell::Text((0..n).map(|_| format!("w{}", rng.gen_range(0..9))).collect::<Vec<_>>().join(" "))
                        }
                        ColumnKind::Timestamp => {
                            let t = Timestamp(rng.gen_range(0..cfg.time_range.max(1)));
                            time = t;
                            Cell::Time(t)
                        }
                    };
                    attrs.push(cell);
                }
            }
            rows.push(Entity { pkey, fkeys, attrs, time });
        }
        parts.push((spec.clone(), rows));
    }
    Database::from_tables(parts, LoadReport::default()).expect("generated schema is valid")
}
