use serde_json::{Map, Number, Value};

use super::denorm::DenormTree;
use crate::store::{Cell, Database};

fn cell_value(cell: &Cell) -> Value {
    match cell {
        Cell::Missing => Value::Null,
        Cell::Num(x) => Number::from_f64(*x).map(Value::Number).unwrap_or(Value::Null),
        Cell::Cat(s) | Cell::Text(s) => Value::String(s.clone()),
        Cell::Time(t) if t.is_finite() => Value::Number(t.secs().into()),
        Cell::Time(_) => Value::Null,
    }
}

/// Key under which children from `table` are nested. Falls back to
/// `"{table}_linked"` when an attribute column already uses the table name.
pub fn child_key(object: &Map<String, Value>, table: &str) -> String {
    match object.get(table) {
        Some(Value::Array(_)) | None => table.to_string(),
        Some(_) => format!("{table}_linked"),
    }
}

fn entity_object(tree: &DenormTree, db: &Database, i: usize) -> Map<String, Value> {
    let v = tree.nodes[i].entity;
    let t = db.table(v.table());
    let e = &t.entities[v.row()];
    let mut obj = Map::new();
    for c in t.attribute_columns() {
        obj.insert(t.spec.columns[c].name.clone(), cell_value(&e.attrs[c]));
    }
    if let Some(tc) = t.time_col {
        obj.insert(t.spec.columns[tc].name.clone(), cell_value(&e.attrs[tc]));
    }
    for &c in &tree.nodes[i].children {
        let child_table = db.table(tree.nodes[c].entity.table()).name();
        let key = child_key(&obj, child_table);
        let child = Value::Object(entity_object(tree, db, c));
        match obj.entry(key).or_insert_with(|| Value::Array(Vec::new())) {
            Value::Array(items) => items.push(child),
            _ => unreachable!("child keys always hold arrays"),
        }
    }
    obj
}

/// The tree as nested JSON: `{"<seed table>": {column: value, ..., "<child
/// table>": [ ... ]}}`. Attribute and time columns are included; key columns
/// are not. Keys within an object are sorted.
pub fn document_value(tree: &DenormTree, db: &Database) -> Value {
    let mut root = Map::new();
    if !tree.is_empty() {
        let table = db.table(tree.root().table()).name().to_string();
        root.insert(table, Value::Object(entity_object(tree, db, 0)));
    }
    Value::Object(root)
}

pub fn serialize_document(tree: &DenormTree, db: &Database) -> String {
    document_value(tree, db).to_string()
}
