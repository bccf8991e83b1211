use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::store::{Cell, ColumnKind, Database, Timestamp};

/// Embedding row for categories unseen while fitting.
pub const UNK_ROW: usize = 0;
/// Embedding row for missing categorical cells.
pub const MISSING_ROW: usize = 1;

/// Frozen per-column statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnStat {
    Numeric { mean: f64, std: f64 },
    Categorical { categories: BTreeMap<String, usize> },
    Text { buckets: usize },
    Timestamp { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub table: String,
    /// `(column index, statistics)` for each attribute column, in column order.
    pub columns: Vec<(usize, String, ColumnStat)>,
}

/// Column-encoder statistics fitted on rows up to a cutoff time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderStats {
    pub tables: Vec<TableStats>,
    /// Divisor turning `t* - τ` into the relative-age input.
    pub age_scale: f64,
    pub fit_cutoff: Timestamp,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 1.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Lowercased whitespace tokens.
pub fn text_tokens(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split_whitespace().map(str::to_lowercase)
}

pub fn text_bucket(token: &str, buckets: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % buckets as u64) as usize
}

impl EncoderStats {
    /// Fit on rows whose entity time is `<= cutoff` (non-temporal rows always count).
    pub fn fit(db: &Database, cutoff: Timestamp, text_buckets: usize, max_categories: usize) -> Self {
        let mut tables = Vec::with_capacity(db.num_tables());
        let mut all_times = Vec::new();
        for t in &db.tables {
            let rows: Vec<_> = t.entities.iter().filter(|e| e.time <= cutoff).collect();
            all_times.extend(rows.iter().filter(|e| e.time.is_finite()).map(|e| e.time.secs() as f64));
            let mut columns = Vec::new();
            for c in t.attribute_columns() {
                let spec = &t.spec.columns[c];
                let stat = match spec.kind {
                    ColumnKind::Numeric => {
                        let xs: Vec<f64> = rows
                            .iter()
                            .filter_map(|e| match e.attrs[c] {
                                Cell::Num(x) => Some(x),
                                _ => None,
                            })
                            .collect();
                        let (mean, std) = mean_std(&xs);
                        ColumnStat::Numeric { mean, std }
                    }
                    ColumnKind::Timestamp => {
                        let xs: Vec<f64> = rows
                            .iter()
                            .filter_map(|e| match e.attrs[c] {
                                Cell::Time(t) => Some(t.secs() as f64),
                                _ => None,
                            })
                            .collect();
                        let (mean, std) = mean_std(&xs);
                        ColumnStat::Timestamp { mean, std }
                    }
                    ColumnKind::Categorical => {
                        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                        for e in &rows {
                            if let Cell::Cat(s) = &e.attrs[c] {
                                *counts.entry(s.as_str()).or_default() += 1;
                            }
                        }
                        let mut by_freq: Vec<(&str, usize)> = counts.into_iter().collect();
                        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                        by_freq.truncate(max_categories);
                        by_freq.sort_by(|a, b| a.0.cmp(b.0));
                        let categories =
                            by_freq.into_iter().enumerate().map(|(i, (s, _))| (s.to_string(), i + 2)).collect();
                        ColumnStat::Categorical { categories }
                    }
                    ColumnKind::Text => ColumnStat::Text { buckets: text_buckets },
                };
                columns.push((c, spec.name.clone(), stat));
            }
            tables.push(TableStats { table: t.name().to_string(), columns });
        }
        let (_, age_scale) = mean_std(&all_times);
        Self { tables, age_scale, fit_cutoff: cutoff }
    }
}

impl ColumnStat {
    /// Width of the raw input fed to the column's learned map.
    pub fn input_width(&self) -> usize {
        match self {
            ColumnStat::Numeric { .. } | ColumnStat::Timestamp { .. } => 2,
            ColumnStat::Categorical { categories } => categories.len() + 2,
            ColumnStat::Text { buckets } => buckets + 1,
        }
    }

    /// Embedding row of a categorical cell.
    pub fn category_row(&self, cell: &Cell) -> usize {
        match (self, cell) {
            (_, Cell::Missing) => MISSING_ROW,
            (ColumnStat::Categorical { categories }, Cell::Cat(s)) => categories.get(s).copied().unwrap_or(UNK_ROW),
            _ => UNK_ROW,
        }
    }

    /// Dense raw features of a non-categorical cell, written into `out`
    /// (length [`input_width`](Self::input_width)).
    pub fn features(&self, cell: &Cell, out: &mut [f64]) {
        out.fill(0.0);
        let last = out.len() - 1;
        match (self, cell) {
            (_, Cell::Missing) => out[last] = 1.0,
            (ColumnStat::Numeric { mean, std }, Cell::Num(x)) => out[0] = (x - mean) / std,
            (ColumnStat::Timestamp { mean, std }, Cell::Time(t)) => out[0] = (t.secs() as f64 - mean) / std,
            (ColumnStat::Text { buckets }, Cell::Text(s) | Cell::Cat(s)) => {
                let toks: Vec<String> = text_tokens(s).collect();
                if toks.is_empty() {
                    out[last] = 1.0;
                    return;
                }
                let w = 1.0 / toks.len() as f64;
                for tok in &toks {
                    out[text_bucket(tok, *buckets)] += w;
                }
            }
            _ => out[last] = 1.0,
        }
    }
}
