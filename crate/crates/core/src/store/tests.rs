use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

const MANIFEST: &str = r#"{
  "tables": [
    { "name": "users", "file": "users.csv", "primary_key": "id",
      "columns": [ {"name": "id", "kind": "categorical", "nullable": false},
                   {"name": "age", "kind": "numeric", "nullable": true},
                   {"name": "bio", "kind": "text", "nullable": true} ] },
    { "name": "orders", "file": "orders.csv", "primary_key": "oid", "time_column": "ts",
      "columns": [ {"name": "oid", "kind": "categorical", "nullable": false},
                   {"name": "user_id", "kind": "categorical", "nullable": true},
                   {"name": "ts", "kind": "timestamp", "nullable": true},
                   {"name": "total", "kind": "numeric", "nullable": true} ],
      "foreign_keys": [ {"column": "user_id", "target_table": "users"} ] }
  ]
}"#;

fn fixture(users: &str, orders: &str) -> (tempfile::TempDir, Result<Database>) {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "manifest.json", MANIFEST);
    write(dir.path(), "users.csv", users);
    write(dir.path(), "orders.csv", orders);
    let db = load_database(&dir.path().join("manifest.json"), dir.path(), LoadOptions::default());
    (dir, db)
}

const USERS: &str = "id,age,bio\nu1,30,\"likes red, shoes\"\nu2,,\n";
const ORDERS: &str = "oid,user_id,ts,total\no1,u1,100,9.5\no2,u1,2020-01-02,\no3,u99,300,1\no4,,,2\n";

#[test]
fn loads_links_and_missing_cells() {
    let (_d, db) = fixture(USERS, ORDERS);
    let db = db.unwrap();
    let users = db.table_id("users").unwrap();
    let orders = db.table_id("orders").unwrap();
    assert_eq!(db.links.iter().copied().collect::<Vec<_>>(), vec![(orders, users)]);
    assert_eq!(db.table(users).len(), 2);
    assert_eq!(db.table(orders).len(), 4);
    assert_eq!(db.entity(users, 1).attrs[1], Cell::Missing);
    assert_eq!(db.entity(users, 0).attrs[2], Cell::Text("likes red, shoes".into()));
    assert_eq!(db.entity(users, 0).time, Timestamp::NEG_INF);
    assert_eq!(db.entity(orders, 0).time, Timestamp(100));
    assert_eq!(db.entity(orders, 1).time, Timestamp(1_577_923_200));
    assert_eq!(db.entity(orders, 3).time, Timestamp::NEG_INF);
    assert_eq!(db.entity(orders, 3).fkeys, vec![None]);
    assert_eq!(db.table(orders).attribute_columns(), vec![3]);
    assert!(db.report.self_referential.is_empty());
}

#[test]
fn dangling_references_are_kept_and_counted() {
    let (_d, db) = fixture(USERS, ORDERS);
    let db = db.unwrap();
    // Oracle: linear scan of every foreign-key cell against every target key.
    let mut expected = 0;
    for t in &db.tables {
        for e in &t.entities {
            for (k, &(_, target)) in t.fk_cols.iter().enumerate() {
                if let Some(key) = &e.fkeys[k] {
                    if !db.table(target).entities.iter().any(|x| &x.pkey == key) {
                        expected += 1;
                    }
                }
            }
        }
    }
    assert_eq!(expected, 1);
    assert_eq!(db.report.dangling.len(), expected);
    assert_eq!(db.report.dangling[0].key, "u99");
    assert_eq!(db.table_by_name("orders").unwrap().len(), 4);
}

#[test]
fn duplicate_primary_key_is_rejected() {
    let (_d, db) = fixture("id,age,bio\nu1,1,\nu1,2,\n", ORDERS);
    assert!(matches!(db, Err(StoreError::DuplicatePrimaryKey { ref key, .. }) if key == "u1"));
}

#[test]
fn missing_file_and_column() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "manifest.json", MANIFEST);
    write(dir.path(), "users.csv", USERS);
    let err = load_database(&dir.path().join("manifest.json"), dir.path(), LoadOptions::default()).unwrap_err();
    assert!(matches!(err, StoreError::MissingFile(p) if p.ends_with("orders.csv")));

    let (_d, db) = fixture("id,age\nu1,3\n", ORDERS);
    assert!(matches!(db, Err(StoreError::SchemaMismatch { ref table, .. }) if table == "users"));
}

#[test]
fn unparseable_cells_respect_threshold() {
    let users = "id,age,bio\nu1,old,\nu2,4,\n";
    let (_d, db) = fixture(users, ORDERS);
    assert!(matches!(db, Err(StoreError::SchemaMismatch { .. })));

    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "manifest.json", MANIFEST);
    write(dir.path(), "users.csv", users);
    write(dir.path(), "orders.csv", ORDERS);
    let opts = LoadOptions { max_unparseable_per_column: 1 };
    let db = load_database(&dir.path().join("manifest.json"), dir.path(), opts).unwrap();
    assert_eq!(db.report.unparseable, vec![("users".into(), "age".into(), 1)]);
    assert_eq!(db.entity(TableId(0), 0).attrs[1], Cell::Missing);
}

#[test]
fn non_nullable_missing_is_rejected() {
    let (_d, db) = fixture("id,age,bio\n,1,\n", ORDERS);
    assert!(matches!(db, Err(StoreError::SchemaMismatch { .. })));
}

#[test]
fn undeclared_target_and_bad_time_column() {
    let spec = TableSpec {
        name: "a".into(),
        file: "a.csv".into(),
        primary_key: "id".into(),
        time_column: Some("id".into()),
        columns: vec![ColumnSpec { name: "id".into(), kind: ColumnKind::Categorical, nullable: false }],
        foreign_keys: vec![],
    };
    assert!(matches!(
        Database::from_tables(vec![(spec.clone(), vec![])], LoadReport::default()),
        Err(StoreError::SchemaMismatch { .. })
    ));
    let spec = TableSpec {
        time_column: None,
        foreign_keys: vec![ForeignKey { column: "id".into(), target_table: "zzz".into() }],
        ..spec
    };
    assert!(Database::from_tables(vec![(spec, vec![])], LoadReport::default()).is_err());
}

#[test]
fn self_referential_links_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = r#"{"tables":[{"name":"emp","file":"emp.csv","primary_key":"id",
        "columns":[{"name":"id","kind":"categorical","nullable":false},{"name":"boss","kind":"categorical","nullable":true}],
        "foreign_keys":[{"column":"boss","target_table":"emp"}]}]}"#;
    write(dir.path(), "manifest.json", manifest);
    write(dir.path(), "emp.csv", "id,boss\na,\nb,a\nc,a\n");
    let db = load_database(&dir.path().join("manifest.json"), dir.path(), LoadOptions::default()).unwrap();
    assert_eq!(db.report.self_referential, vec!["emp".to_string()]);
    let t = db.table_id("emp").unwrap();
    assert_eq!(KeyIndex::build(&db).referencing(t, t, "a"), vec![1, 2]);
}

#[test]
fn timestamps_parse_to_epoch_seconds() {
    assert_eq!(parse_timestamp("0"), Some(Timestamp(0)));
    assert_eq!(parse_timestamp("-5"), Some(Timestamp(-5)));
    assert_eq!(parse_timestamp("1970-01-02"), Some(Timestamp(86_400)));
    assert_eq!(parse_timestamp("1970-01-01 00:01:00"), Some(Timestamp(60)));
    assert_eq!(parse_timestamp("1970-01-01T00:00:10"), Some(Timestamp(10)));
    assert_eq!(parse_timestamp("1970-01-01T01:00:00+01:00"), Some(Timestamp(0)));
    assert_eq!(parse_timestamp("yesterday"), None);
    assert!(Timestamp::NEG_INF < Timestamp(i64::MIN + 1));
}

#[test]
fn key_index_small_example() {
    let (_d, db) = fixture("id,age,bio\nu1,1,\nu2,2,\n", "oid,user_id,ts,total\no1,u1,1,\no2,u1,2,\n");
    let db = db.unwrap();
    let idx = build_key_index(&db);
    let (u, o) = (db.table_id("users").unwrap(), db.table_id("orders").unwrap());
    assert_eq!(idx.referencing(o, u, "u1"), vec![0, 1]);
    assert!(idx.referencing(o, u, "u2").is_empty());
    assert_eq!(idx.row_of(u, "u2"), Some(1));
    assert_eq!(idx.resolve(&db, o, 1, 0), Some((u, 0)));
}

#[test]
fn key_index_on_empty_table() {
    let (_d, db) = fixture("id,age,bio\n", "oid,user_id,ts,total\n");
    let db = db.unwrap();
    let idx = build_key_index(&db);
    let (u, o) = (db.table_id("users").unwrap(), db.table_id("orders").unwrap());
    assert!(idx.referencing(o, u, "u1").is_empty());
    assert_eq!(idx.row_of(u, "u1"), None);
}

/// A random two-link schema: `a` (root), `b -> a`, `c -> a` and `c -> b`.
fn random_db(seed: u64, rows: usize) -> Database {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let col = |n: &str, kind| ColumnSpec { name: n.into(), kind, nullable: true };
    let key = |n: &str| ColumnSpec { name: n.into(), kind: ColumnKind::Categorical, nullable: false };
    let fk = |c: &str, t: &str| ForeignKey { column: c.into(), target_table: t.into() };
    let specs = [
        TableSpec {
            name: "a".into(),
            file: "a.csv".into(),
            primary_key: "id".into(),
            time_column: None,
            columns: vec![key("id"), col("x", ColumnKind::Numeric), col("s", ColumnKind::Text)],
            foreign_keys: vec![],
        },
        TableSpec {
            name: "b".into(),
            file: "b.csv".into(),
            primary_key: "id".into(),
            time_column: Some("t".into()),
            columns: vec![key("id"), col("a_id", ColumnKind::Categorical), col("t", ColumnKind::Timestamp)],
            foreign_keys: vec![fk("a_id", "a")],
        },
        TableSpec {
            name: "c".into(),
            file: "c.csv".into(),
            primary_key: "id".into(),
            time_column: Some("t".into()),
            columns: vec![
                key("id"),
                col("a_id", ColumnKind::Categorical),
                col("a2", ColumnKind::Categorical),
                col("b_id", ColumnKind::Categorical),
                col("t", ColumnKind::Timestamp),
                col("k", ColumnKind::Categorical),
            ],
            foreign_keys: vec![fk("a_id", "a"), fk("a2", "a"), fk("b_id", "b")],
        },
    ];
    let counts = [rows / 5 + 1, rows / 3 + 1, rows - rows / 5 - rows / 3 - 2];
    let mut parts = Vec::new();
    for (ti, spec) in specs.iter().enumerate() {
        let mut ents = Vec::new();
        for r in 0..counts[ti] {
            let pkey = format!("{}{r}", spec.name);
            let mut attrs = Vec::new();
            let mut fkeys = vec![None; spec.foreign_keys.len()];
            let mut time = Timestamp::NEG_INF;
            for (ci, c) in spec.columns.iter().enumerate() {
                if ci == 0 {
                    attrs.push(Cell::Cat(pkey.clone()));
                    continue;
                }
                if let Some(k) = spec.foreign_keys.iter().position(|f| f.column == c.name) {
                    let target = specs.iter().position(|s| s.name == spec.foreign_keys[k].target_table).unwrap();
                    // Occasionally missing or dangling.
                    let v = match rng.gen_range(0..10) {
                        0 => None,
                        1 => Some(format!("zz{}", rng.gen_range(0..5))),
                        _ => Some(format!("{}{}", specs[target].name, rng.gen_range(0..counts[target]))),
                    };
                    attrs.push(v.clone().map_or(Cell::Missing, Cell::Cat));
                    fkeys[k] = v;
                    continue;
                }
                let cell = match c.kind {
                    _ if rng.gen_bool(0.1) => Cell::Missing,
                    ColumnKind::Numeric => Cell::Num(rng.gen_range(-1e6..1e6)),
                    ColumnKind::Text => Cell::Text(format!("w{} \"q\", w{}", rng.gen::<u8>(), rng.gen::<u8>())),
                    ColumnKind::Categorical => Cell::Cat(format!("k{}", rng.gen_range(0..7))),
                    ColumnKind::Timestamp => Cell::Time(Timestamp(rng.gen_range(-1000..1_000_000))),
                };
                if spec.time_column.as_deref() == Some(c.name.as_str()) {
                    if let Cell::Time(t) = cell {
                        time = t;
                    }
                }
                attrs.push(cell);
            }
            ents.push(Entity { pkey, fkeys, attrs, time });
        }
        parts.push((spec.clone(), ents));
    }
    Database::from_tables(parts, LoadReport::default()).unwrap()
}

#[test]
fn key_index_matches_full_scan_on_random_db() {
    let db = random_db(11, 500);
    assert_eq!(db.num_entities(), 500);
    let idx = build_key_index(&db);
    for &(src, dst) in &db.links {
        for target in &db.table(dst).entities {
            // O(n·m) oracle: every src row, every fk column into dst.
            let mut expected = Vec::new();
            for (row, e) in db.table(src).entities.iter().enumerate() {
                let hit = db.table(src).fk_cols.iter().enumerate().any(|(k, &(_, t))| {
                    t == dst && e.fkeys[k].as_deref() == Some(target.pkey.as_str())
                });
                if hit {
                    expected.push(row);
                }
            }
            assert_eq!(idx.referencing(src, dst, &target.pkey), expected);
        }
    }
    for (ti, t) in db.tables.iter().enumerate() {
        for (row, e) in t.entities.iter().enumerate() {
            assert_eq!(idx.row_of(TableId(ti), &e.pkey), Some(row));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn write_then_load_round_trips(seed in any::<u64>(), rows in 4usize..120) {
        let db = random_db(seed, rows);
        let dir = tempfile::tempdir().unwrap();
        write_database(&db, dir.path()).unwrap();
        let back = load_database(&dir.path().join("manifest.json"), dir.path(), LoadOptions::default()).unwrap();
        prop_assert_eq!(&back.tables, &db.tables);
        prop_assert_eq!(&back.links, &db.links);
        for t in &back.tables {
            let csv_rows = fs::read_to_string(dir.path().join(&t.spec.file)).unwrap();
            let data_rows = csv::Reader::from_reader(csv_rows.as_bytes()).records().count();
            prop_assert_eq!(t.len(), data_rows);
        }
    }
}
