//! Prediction task manifests, labeled examples and temporal splits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::graph::NodeId;
use crate::store::{Cell, Database, KeyIndex, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("unknown table `{0}` in task manifest")]
    UnknownTable(String),
    #[error("unknown split `{0}` (expected train, val or test)")]
    UnknownSplit(String),
    #[error("label row {row}: {reason}")]
    InvalidLabel { row: usize, reason: String },
    #[error("invalid task manifest: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStrategy {
    PlainText,
    TokenDistribution,
    MlpHead,
}

/// Where labels come from. A label file has the header `entity,seed_time,label`
/// with `entity` a primary key of the target table. A label column yields one
/// example per row, anchored at the row's entity time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    File(PathBuf),
    Column(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task_id: String,
    pub target_table: String,
    pub labels: LabelSource,
    pub kind: TaskKind,
    /// Seed times `< val_cutoff` are train, `< test_cutoff` val, the rest test.
    pub val_cutoff: Timestamp,
    pub test_cutoff: Timestamp,
    pub strategy: AnswerStrategy,
    /// Overrides the registered description template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Overrides the registered question template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, TaskError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(TaskError::UnknownSplit(s.to_string())),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One labeled `(entity, seed time)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Example {
    pub entity: NodeId,
    pub seed_time: Timestamp,
    pub label: f64,
}

impl TaskManifest {
    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let m: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), TaskError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.val_cutoff > self.test_cutoff {
            return Err(TaskError::Config(format!(
                "val_cutoff {} is after test_cutoff {}",
                self.val_cutoff, self.test_cutoff
            )));
        }
        let ok = match self.kind {
            TaskKind::Classification => self.strategy != AnswerStrategy::MlpHead,
            TaskKind::Regression => self.strategy == AnswerStrategy::MlpHead,
        };
        if !ok {
            return Err(TaskError::Config(format!("strategy {:?} does not fit a {:?} task", self.strategy, self.kind)));
        }
        Ok(())
    }

    pub fn split_of(&self, t: Timestamp) -> Split {
        if t < self.val_cutoff {
            Split::Train
        } else if t < self.test_cutoff {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// All labeled examples, sorted by `(seed_time, entity)`. Relative label
    /// paths resolve against `base`.
    pub fn examples(&self, db: &Database, index: &KeyIndex, base: &Path) -> Result<Vec<Example>, TaskError> {
        let table = db.table_id(&self.target_table).map_err(|_| TaskError::UnknownTable(self.target_table.clone()))?;
        let mut out = Vec::new();
        match &self.labels {
            LabelSource::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                let mut rdr = csv::Reader::from_path(path)?;
                for (row, rec) in rdr.deserialize::<(String, i64, f64)>().enumerate() {
                    let (key, t, label) = rec?;
                    let r = index.row_of(table, &key).ok_or_else(|| TaskError::InvalidLabel {
                        row,
                        reason: format!("unknown entity `{key}`"),
                    })?;
                    if !label.is_finite() {
                        return Err(TaskError::InvalidLabel { row, reason: "label is not finite".into() });
                    }
                    out.push(Example { entity: NodeId::new(table, r), seed_time: Timestamp(t), label });
                }
            }
            LabelSource::Column(col) => {
                let t = db.table(table);
                let c = t.spec.column_index(col).ok_or_else(|| TaskError::Config(format!("no label column `{col}`")))?;
                for (row, e) in t.entities.iter().enumerate() {
                    if let Cell::Num(label) = e.attrs[c] {
                        out.push(Example { entity: NodeId::new(table, row), seed_time: e.time, label });
                    }
                }
            }
        }
        out.sort_by(|a, b| a.seed_time.cmp(&b.seed_time).then(a.entity.cmp(&b.entity)));
        Ok(out)
    }

    pub fn split<'a>(&self, examples: &'a [Example], split: Split) -> Vec<&'a Example> {
        examples.iter().filter(|e| self.split_of(e.seed_time) == split).collect()
    }
}

/// Write a label file in the format read by [`TaskManifest::examples`].
pub fn write_label_file(path: &Path, db: &Database, examples: &[Example]) -> Result<(), TaskError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["entity", "seed_time", "label"])?;
    for e in examples {
        let key = &db.entity(e.entity.table(), e.entity.row()).pkey;
        w.write_record([key.as_str(), &e.seed_time.0.to_string(), &e.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
