use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One evaluation record. `wall_ms` is only filled when wall-clock logging
/// is enabled, so that logs of identical runs are byte-identical by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub split: String,
    pub metric_name: String,
    pub value: f64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.step <= row.step), "steps must not decrease");
        self.rows.push(row);
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).expect("metrics rows serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map_err(std::io::Error::other)?;
        Ok(Self { rows })
    }

    /// Rows of one split, in order.
    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a MetricsRow> + 'a {
        self.rows.iter().filter(move |r| r.split == split)
    }
}
