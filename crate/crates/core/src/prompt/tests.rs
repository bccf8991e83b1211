use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::Value;

use super::*;
use crate::autodiff::{ParamStore, Tensor};
use crate::store::{Cell, ColumnKind, ColumnSpec, Entity, ForeignKey, KeyIndex, LoadReport, TableId, TableSpec};
use crate::synth::{random_database, RandomDbConfig};
use crate::task::{AnswerStrategy, LabelSource, TaskKind};

fn col(name: &str, kind: ColumnKind) -> ColumnSpec {
    ColumnSpec { name: name.into(), kind, nullable: true }
}

fn spec(name: &str, columns: Vec<ColumnSpec>, time: Option<&str>, fks: &[(&str, &str)]) -> TableSpec {
    TableSpec {
        name: name.into(),
        file: format!("{name}.csv"),
        primary_key: "id".into(),
        time_column: time.map(Into::into),
        columns,
        foreign_keys: fks.iter().map(|(c, t)| ForeignKey { column: (*c).into(), target_table: (*t).into() }).collect(),
    }
}

/// users <- orders <- items; order `o{k}` belongs to user `u{k % users}` at
/// time `k`, item `i{k}` to order `o{k / 2}` at time `k`.
fn chain(users: usize, orders: usize, items: usize) -> Database {
    let id = || col("id", ColumnKind::Categorical);
    let u = spec("users", vec![id(), col("age", ColumnKind::Numeric)], None, &[]);
    let o = spec(
        "orders",
        vec![id(), col("user", ColumnKind::Categorical), col("ts", ColumnKind::Timestamp), col("amount", ColumnKind::Numeric)],
        Some("ts"),
        &[("user", "users")],
    );
    let it = spec(
        "items",
        vec![id(), col("order", ColumnKind::Categorical), col("ts", ColumnKind::Timestamp), col("name", ColumnKind::Text)],
        Some("ts"),
        &[("order", "orders")],
    );
    let ue = (0..users)
        .map(|k| Entity {
            pkey: format!("u{k}"),
            fkeys: vec![],
            attrs: vec![Cell::Cat(format!("u{k}")), Cell::Num(20.0 + k as f64)],
            time: Timestamp::NEG_INF,
        })
        .collect();
    let oe = (0..orders)
        .map(|k| {
            let user = format!("u{}", k % users);
            Entity {
                pkey: format!("o{k}"),
                fkeys: vec![Some(user.clone())],
                attrs: vec![Cell::Cat(format!("o{k}")), Cell::Cat(user), Cell::Time(Timestamp(k as i64)), Cell::Num(k as f64 * 1.5)],
                time: Timestamp(k as i64),
            }
        })
        .collect();
    let ie = (0..items)
        .map(|k| {
            let order = format!("o{}", k / 2);
            Entity {
                pkey: format!("i{k}"),
                fkeys: vec![Some(order.clone())],
                attrs: vec![
                    Cell::Cat(format!("i{k}")),
                    Cell::Cat(order),
                    Cell::Time(Timestamp(k as i64)),
                    Cell::Text(format!("thing {k}")),
                ],
                time: Timestamp(k as i64),
            }
        })
        .collect();
    Database::from_tables(vec![(u, ue), (o, oe), (it, ie)], LoadReport::default()).unwrap()
}

fn graph_of(db: &Database) -> EntityGraph {
    EntityGraph::build(db, &KeyIndex::build(db))
}

fn cfg(n_nest: usize, zeta: usize) -> DenormConfig {
    DenormConfig { n_nest, zeta, strict_time: false }
}

/// Linked rows of `u` in table `t`, read straight from key cells.
fn linked_rows(db: &Database, u: NodeId, t: TableId) -> BTreeSet<usize> {
    let ut = db.table(u.table());
    let tt = db.table(t);
    let ue = &ut.entities[u.row()];
    let mut rows = BTreeSet::new();
    // Rows of t whose key cells point at u.
    for (i, &(_, target)) in tt.fk_cols.iter().enumerate() {
        if target == u.table() {
            for (r, e) in tt.entities.iter().enumerate() {
                if e.fkeys[i].as_deref() == Some(ue.pkey.as_str()) {
                    rows.insert(r);
                }
            }
        }
    }
    // Rows of t that u's key cells point at.
    for (i, &(_, target)) in ut.fk_cols.iter().enumerate() {
        if target == t {
            if let Some(k) = &ue.fkeys[i] {
                rows.extend(tt.entities.iter().position(|e| &e.pkey == k));
            }
        }
    }
    rows
}

/// Level-synchronous expansion evaluated directly on the tables.
fn oracle(db: &Database, seed: NodeId, t_star: Timestamp, n_nest: usize, zeta: usize) -> Vec<(Option<usize>, NodeId, usize)> {
    let mut out = vec![(None, seed, 0)];
    let mut visited: BTreeSet<TableId> = [seed.table()].into();
    let mut frontier = vec![0];
    for depth in 1..=zeta {
        let mut next = Vec::new();
        let mut entered = BTreeSet::new();
        for &p in &frontier {
            let u = out[p].1;
            for t in (0..db.num_tables()).map(TableId) {
                if visited.contains(&t) {
                    continue;
                }
                let mut picks: Vec<(Timestamp, NodeId)> = linked_rows(db, u, t)
                    .into_iter()
                    .map(|r| (db.entity(t, r).time, NodeId::new(t, r)))
                    .filter(|(tau, _)| *tau <= t_star)
                    .collect();
                picks.sort();
                picks.reverse();
                picks.truncate(n_nest);
                if !picks.is_empty() {
                    entered.insert(t);
                }
                for (_, w) in picks {
                    next.push(out.len());
                    out.push((Some(p), w, depth));
                }
            }
        }
        visited.extend(entered);
        frontier = next;
    }
    out
}

fn flatten(tree: &DenormTree) -> Vec<(Option<usize>, NodeId, usize)> {
    tree.nodes.iter().map(|n| (n.parent, n.entity, n.depth)).collect()
}

#[test]
fn zero_depth_keeps_only_the_seed() {
    let db = chain(2, 6, 6);
    let g = graph_of(&db);
    let seed = NodeId::new(TableId(0), 0);
    let tree = denormalize(&g, seed, Timestamp::POS_INF, &cfg(8, 0)).unwrap();
    assert_eq!(tree.len(), 1);
    assert_eq!(tree.root(), seed);
    assert_eq!(tree.visited, vec![TableId(0)]);
}

#[test]
fn children_are_capped_and_most_recent() {
    // One user with orders at times 0..5.
    let db = chain(1, 5, 0);
    let g = graph_of(&db);
    let seed = NodeId::new(TableId(0), 0);
    let tree = denormalize(&g, seed, Timestamp(10), &cfg(2, 1)).unwrap();
    let kids: Vec<NodeId> = tree.nodes[0].children.iter().map(|&c| tree.nodes[c].entity).collect();
    assert_eq!(kids, vec![NodeId::new(TableId(1), 4), NodeId::new(TableId(1), 3)]);
    let tree = denormalize(&g, seed, Timestamp(2), &cfg(2, 1)).unwrap();
    let kids: Vec<usize> = tree.nodes[0].children.iter().map(|&c| tree.nodes[c].entity.row()).collect();
    assert_eq!(kids, vec![2, 1]);
}

#[test]
fn chain_matches_traversal_oracle() {
    let db = chain(3, 12, 24);
    let g = graph_of(&db);
    for u in 0..3 {
        let seed = NodeId::new(TableId(0), u);
        for t in [3, 9, 30] {
            let tree = denormalize(&g, seed, Timestamp(t), &cfg(2, 2)).unwrap();
            assert_eq!(flatten(&tree), oracle(&db, seed, Timestamp(t), 2, 2));
            assert!(tree.depth() <= 2);
        }
    }
    // Items are reached through orders, never back to users.
    let tree = denormalize(&g, NodeId::new(TableId(2), 5), Timestamp::POS_INF, &cfg(4, 3)).unwrap();
    assert_eq!(tree.visited, vec![TableId(2), TableId(1), TableId(0)]);
    assert_eq!(tree.len(), 3);
}

#[test]
fn unknown_seed_is_rejected() {
    let db = chain(1, 1, 1);
    let g = graph_of(&db);
    assert!(denormalize(&g, NodeId::new(TableId(0), 9), Timestamp(0), &cfg(1, 1)).is_err());
}

#[test]
fn prompt_layout_for_small_trees() {
    let db = chain(1, 2, 0);
    let g = graph_of(&db);
    let seed = NodeId::new(TableId(0), 0);
    let single = denormalize(&g, seed, Timestamp(5), &cfg(2, 0)).unwrap();
    let p = GraphPrompt::build(&single, true);
    assert_eq!(p.slots, vec![Slot::Pooled, Slot::Open, Slot::Node(0), Slot::Close]);
    let two = denormalize(&g, seed, Timestamp(5), &cfg(2, 1)).unwrap();
    let p = GraphPrompt::build(&two, true);
    assert_eq!(p.vector_slots(), 4);
    assert_eq!(p.len(), 1 + 3 + 6);
    assert_eq!(p.brackets(), "{{}{}}");
    assert_eq!(GraphPrompt::build(&two, false).vector_slots(), 3);
}

#[test]
fn assemble_gathers_rows_in_slot_order() {
    let db = chain(1, 2, 0);
    let g = graph_of(&db);
    let tree = denormalize(&g, NodeId::new(TableId(0), 0), Timestamp(5), &cfg(2, 1)).unwrap();
    let prompt = GraphPrompt::build(&tree, true);
    let store = ParamStore::new();
    let mut gr = crate::autodiff::Graph::inference(&store);
    // Node rows hold 10 + local index; delimiters 1 and 2; pooled 7.
    let local = [NodeId::new(TableId(0), 0), NodeId::new(TableId(1), 1), NodeId::new(TableId(1), 0)];
    let proj = gr.constant(Tensor::from_rows(&[vec![10.0], vec![11.0], vec![12.0]]));
    let delims = gr.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]));
    let pooled = gr.constant(Tensor::scalar(7.0));
    let local_of = |v: NodeId| local.iter().position(|&w| w == v);
    let out = prompt.assemble(&mut gr, proj, local_of, Some(pooled), delims).unwrap();
    assert_eq!(gr.value(out).data(), &[7.0, 1.0, 10.0, 1.0, 11.0, 2.0, 1.0, 12.0, 2.0, 2.0]);

    let missing = |v: NodeId| (v.table() == TableId(0)).then_some(0);
    assert!(matches!(
        prompt.assemble(&mut gr, proj, missing, Some(pooled), delims),
        Err(PromptError::MissingEmbedding(_))
    ));
    assert!(matches!(prompt.assemble(&mut gr, proj, local_of, None, delims), Err(PromptError::MissingPooled)));
}

fn manifest(id: &str) -> TaskManifest {
    TaskManifest {
        task_id: id.into(),
        target_table: "users".into(),
        labels: LabelSource::File("labels.csv".into()),
        kind: TaskKind::Classification,
        val_cutoff: Timestamp(0),
        test_cutoff: Timestamp(1),
        strategy: AnswerStrategy::TokenDistribution,
        description: None,
        question: None,
    }
}

#[test]
fn registered_templates_resolve() {
    let ctx = render_task_context(&manifest("rel-amazon/user-churn")).unwrap();
    assert_eq!(
        ctx.question_text,
        "Based on the customer data provided, will this customer review any product in the next 3 months? Give Yes or No as an answer."
    );
    let ctx = render_task_context(&manifest("rel-f1/driver-dnf")).unwrap();
    assert_eq!(ctx.question_text, "Will this driver finish a race in the next 1 month? Give Yes or No as an answer.");
    assert_eq!(ctx.task_text, "This task is to predict if this driver will finish a race in the next 1 month or not.");
    assert!(ctx.tokens().contains(&"yes".to_string()));
    assert!(matches!(render_task_context(&manifest("nope/none")), Err(PromptError::UnknownTask(_))));

    let mut m = manifest("custom");
    m.description = Some("Predict.".into());
    m.question = Some("Yes?".into());
    assert_eq!(render_task_context(&m).unwrap().full_text(), "Predict. Yes?");
    for (_, d, q) in templates::TEMPLATES {
        assert!(!d.contains('{') && !q.contains('{'));
    }
}

#[test]
fn single_entity_document() {
    let db = chain(1, 0, 0);
    let g = graph_of(&db);
    let tree = denormalize(&g, NodeId::new(TableId(0), 0), Timestamp(0), &cfg(1, 1)).unwrap();
    assert_eq!(serialize_document(&tree, &db), r#"{"users":{"age":20.0}}"#);
}

/// `(path, value)` leaves of a JSON document; array positions are dropped.
fn leaves(v: &Value, path: &str, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                leaves(x, &format!("{path}/{k}"), out);
            }
        }
        Value::Array(items) => {
            for x in items {
                leaves(x, path, out);
            }
        }
        _ => out.push((path.to_string(), v.clone())),
    }
}

fn expected_leaves(tree: &DenormTree, db: &Database) -> Vec<(String, Value)> {
    fn walk(tree: &DenormTree, db: &Database, i: usize, path: String, out: &mut Vec<(String, Value)>) {
        let v = tree.nodes[i].entity;
        let t = db.table(v.table());
        let e = &t.entities[v.row()];
        let path = format!("{path}/{}", t.name());
        let mut cols = t.attribute_columns();
        cols.extend(t.time_col);
        for c in cols {
            let val = match &e.attrs[c] {
                Cell::Missing => Value::Null,
                Cell::Num(x) => serde_json::json!(x),
                Cell::Cat(s) | Cell::Text(s) => serde_json::json!(s),
                Cell::Time(ts) => serde_json::json!(ts.secs()),
            };
            out.push((format!("{path}/{}", t.spec.columns[c].name), val));
        }
        for &c in &tree.nodes[i].children {
            walk(tree, db, c, path.clone(), out);
        }
    }
    let mut out = Vec::new();
    walk(tree, db, 0, String::new(), &mut out);
    out
}

#[test]
fn nested_document_paths_match_traversal() {
    let db = chain(2, 8, 16);
    let g = graph_of(&db);
    let tree = denormalize(&g, NodeId::new(TableId(0), 1), Timestamp::POS_INF, &cfg(2, 2)).unwrap();
    assert_eq!(tree.len(), 1 + 2 + 4);
    let doc: Value = serde_json::from_str(&serialize_document(&tree, &db)).unwrap();
    let mut got = Vec::new();
    leaves(&doc, "", &mut got);
    let mut want = expected_leaves(&tree, &db);
    got.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.to_string().cmp(&b.1.to_string())));
    want.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.to_string().cmp(&b.1.to_string())));
    assert_eq!(got, want);
    assert!(got.iter().any(|(p, _)| p == "/users/orders/items/name"));
}

fn examples(spec: &[(i64, f64)]) -> Vec<Example> {
    spec.iter()
        .enumerate()
        .map(|(i, &(t, label))| Example { entity: NodeId::new(TableId(0), i), seed_time: Timestamp(t), label })
        .collect()
}

#[test]
fn in_context_selection_is_balanced_and_causal() {
    let train = examples(&[(1, 1.0), (2, 0.0), (3, 1.0), (4, 0.0), (5, 1.0), (6, 0.0), (50, 1.0)]);
    assert!(select_in_context_examples(&train, 0, Timestamp(10), 0).unwrap().is_empty());
    let picked = select_in_context_examples(&train, 4, Timestamp(10), 3).unwrap();
    assert_eq!(picked.len(), 4);
    assert_eq!(picked.iter().filter(|e| e.label > 0.5).count(), 2);
    assert!(picked.iter().all(|e| e.seed_time < Timestamp(10)));
    assert_eq!(picked, select_in_context_examples(&train, 4, Timestamp(10), 3).unwrap());
    let odd = select_in_context_examples(&train, 5, Timestamp(10), 1).unwrap();
    let pos = odd.iter().filter(|e| e.label > 0.5).count();
    assert!(pos == 2 || pos == 3);
    assert!(matches!(
        select_in_context_examples(&train, 2, Timestamp(1), 0),
        Err(PromptError::InsufficientExamples { .. })
    ));
}

#[test]
fn in_context_text_lists_documents_and_answers() {
    let db = chain(2, 2, 0);
    let g = graph_of(&db);
    let ex = examples(&[(5, 1.0), (5, 0.0)]);
    let text = in_context_text(&g, &db, &ex, &cfg(1, 1), true).unwrap();
    assert!(text.starts_with("Example: {\"users\":"));
    assert!(text.contains("Answer: Yes.") && text.contains("Answer: No."));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_trees_match_oracle_and_respect_time(
        seed in any::<u64>(),
        t in -1i64..55,
        n_nest in 0usize..4,
        zeta in 0usize..4,
    ) {
        let db = random_database(seed, RandomDbConfig { tables: 4, rows: 80, ..Default::default() });
        let g = graph_of(&db);
        for v in g.nodes().step_by(9) {
            let tree = denormalize(&g, v, Timestamp(t), &cfg(n_nest, zeta)).unwrap();
            prop_assert_eq!(flatten(&tree), oracle(&db, v, Timestamp(t), n_nest, zeta));
            for n in &tree.nodes[1..] {
                prop_assert!(g.time(n.entity) <= Timestamp(t));
            }
            let mut per_parent_table = std::collections::BTreeMap::new();
            for n in &tree.nodes[1..] {
                *per_parent_table.entry((n.parent, n.entity.table())).or_insert(0usize) += 1;
            }
            prop_assert!(per_parent_table.values().all(|&c| c <= n_nest));

            let prompt = GraphPrompt::build(&tree, true);
            prop_assert_eq!(prompt.vector_slots(), tree.len() + 1);
            let mut depth = 0i64;
            let mut max_depth = 0;
            for ch in prompt.brackets().chars() {
                depth += if ch == '{' { 1 } else { -1 };
                prop_assert!(depth >= 0);
                max_depth = max_depth.max(depth);
            }
            prop_assert_eq!(depth, 0);
            prop_assert_eq!(max_depth as usize, tree.depth() + 1);

            let text = serialize_document(&tree, &db);
            let doc: Value = serde_json::from_str(&text).unwrap();
            let mut got = Vec::new();
            leaves(&doc, "", &mut got);
            prop_assert_eq!(got.len(), expected_leaves(&tree, &db).len());
        }
    }
}
