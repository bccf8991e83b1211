use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::store::{
    write_database, Cell, ColumnKind, ColumnSpec, Database, Entity, ForeignKey, LoadReport, TableId, TableSpec, Timestamp,
};
use crate::task::{write_label_file, AnswerStrategy, Example, LabelSource, TaskKind, TaskManifest};

const DAY: i64 = 86_400;

pub const CHURN_TASK: &str = "synth/churn";
pub const COUNT_TASK: &str = "synth/event-count";

/// Event kinds; `kinds[churn_kind]` is the kind the churn label watches.
pub const EVENT_KINDS: [&str; 4] = ["purchase", "view", "review", "return"];
const COUNTRIES: [&str; 6] = ["de", "fr", "jp", "us", "br", "in"];
const CATEGORIES: [&str; 5] = ["books", "games", "garden", "music", "tools"];

/// Generator settings for the users/items/events benchmark.
///
/// A user churns at seed time `t` when it has no event of kind
/// `EVENT_KINDS[churn_kind]` in `[t - window, t)`. Seed times are spaced
/// further apart than the window, and the churned set at each seed time has
/// exactly `round(positive_rate * users)` members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub seed_times: usize,
    /// Seed times before this index are train; the rest up to `test_from` val.
    pub val_from: usize,
    pub test_from: usize,
    pub start: Timestamp,
    pub window_days: i64,
    pub spacing_days: i64,
    pub churn_kind: usize,
    /// Target fraction of churned users per seed time.
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            items: 50,
            events: 20_000,
            seed_times: 8,
            val_from: 5,
            test_from: 7,
            start: Timestamp(1_600_000_000),
            window_days: 30,
            spacing_days: 45,
            churn_kind: 0,
            positive_rate: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Named presets: `churn` (balanced), `driver-dnf-like` (11.96% positive)
    /// and `tiny` (small and balanced, for tests and demos).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "churn" => Ok(Self::default()),
            "driver-dnf-like" => Ok(Self { positive_rate: 0.1196, ..Self::default() }),
            "tiny" => Ok(Self { users: 120, items: 12, events: 2400, ..Self::default() }),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected churn, driver-dnf-like or tiny)"))),
        }
    }

    pub fn window(&self) -> i64 {
        self.window_days * DAY
    }

    /// `t_k = start + 90 days + k * spacing`.
    pub fn seed_time(&self, k: usize) -> Timestamp {
        Timestamp(self.start.0 + 90 * DAY + k as i64 * self.spacing_days * DAY)
    }

    pub fn all_seed_times(&self) -> Vec<Timestamp> {
        (0..self.seed_times).map(|k| self.seed_time(k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.users == 0 || self.items == 0 || self.seed_times == 0 {
            return bad("users, items and seed_times must be positive".into());
        }
        if !(0 < self.val_from && self.val_from < self.test_from && self.test_from < self.seed_times) {
            return bad(format!(
                "need 0 < val_from ({}) < test_from ({}) < seed_times ({})",
                self.val_from, self.test_from, self.seed_times
            ));
        }
        if self.window_days <= 0 || self.spacing_days <= self.window_days {
            return bad("windows must be positive and shorter than the seed-time spacing".into());
        }
        if self.churn_kind >= EVENT_KINDS.len() {
            return bad(format!("churn_kind {} out of range", self.churn_kind));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return bad(format!("positive_rate {} outside [0, 1]", self.positive_rate));
        }
        let active = self.users - self.churned_per_seed();
        if self.events < active * self.seed_times {
            return bad(format!("{} events cannot cover {} active user windows", self.events, active * self.seed_times));
        }
        Ok(())
    }

    fn churned_per_seed(&self) -> usize {
        (self.positive_rate * self.users as f64).round() as usize
    }
}

/// A generated benchmark: database, task manifests and their examples.
#[derive(Debug, Clone)]
pub struct SynthBench {
    pub config: SynthConfig,
    pub db: Database,
    pub churn: TaskManifest,
    pub churn_examples: Vec<Example>,
    pub count: TaskManifest,
    pub count_examples: Vec<Example>,
}

/// Deterministic benchmark for `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBench> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = cfg.all_seed_times();
    let w = cfg.window();
    let horizon = seeds[seeds.len() - 1].0 + DAY;

    let mut users = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let t = Timestamp(cfg.start.0 + rng.gen_range(0..60 * DAY));
        users.push(Entity {
            pkey: format!("u{u}"),
            fkeys: vec![],
            attrs: vec![
                Cell::Cat(format!("u{u}")),
                Cell::Time(t),
                Cell::Cat(COUNTRIES[rng.gen_range(0..COUNTRIES.len())].into()),
                Cell::Num(rng.gen_range(18..70) as f64),
            ],
            time: t,
        });
    }
    let items: Vec<Entity> = (0..cfg.items)
        .map(|i| Entity {
            pkey: format!("i{i}"),
            fkeys: vec![],
            attrs: vec![
                Cell::Cat(format!("i{i}")),
                Cell::Cat(CATEGORIES[rng.gen_range(0..CATEGORIES.len())].into()),
                Cell::Num((rng.gen_range(100..10_000) as f64) / 100.0),
            ],
            time: Timestamp::NEG_INF,
        })
        .collect();

    // (user, time, kind)
    let mut raw: Vec<(usize, i64, usize)> = Vec::with_capacity(cfg.events);
    let in_window = |t: i64| seeds.iter().any(|s| s.0 - w <= t && t < s.0);
    let n_churn = cfg.churned_per_seed();
    for s in &seeds {
        let mut order: Vec<usize> = (0..cfg.users).collect();
        order.shuffle(&mut rng);
        for &u in &order[n_churn..] {
            raw.push((u, rng.gen_range(s.0 - w..s.0), cfg.churn_kind));
        }
    }
    while raw.len() < cfg.events {
        let u = rng.gen_range(0..cfg.users);
        let t = rng.gen_range(users[u].time.0 + 1..horizon);
        if seeds.iter().any(|s| s.0 == t) {
            continue;
        }
        let mut kind = rng.gen_range(0..EVENT_KINDS.len());
        if kind == cfg.churn_kind && in_window(t) {
            // Window activity of the watched kind is fixed above.
            kind = (kind + 1 + rng.gen_range(0..EVENT_KINDS.len() - 1)) % EVENT_KINDS.len();
        }
        raw.push((u, t, kind));
    }
    raw.sort_by_key(|&(u, t, k)| (t, u, k));
    let events: Vec<Entity> = raw
        .iter()
        .enumerate()
        .map(|(i, &(u, t, k))| {
            let item = format!("i{}", rng.gen_range(0..cfg.items));
            let user = format!("u{u}");
            Entity {
                pkey: format!("e{i}"),
                fkeys: vec![Some(user.clone()), Some(item.clone())],
                attrs: vec![
                    Cell::Cat(format!("e{i}")),
                    Cell::Cat(user),
                    Cell::Cat(item),
                    Cell::Time(Timestamp(t)),
                    Cell::Cat(EVENT_KINDS[k].into()),
                    Cell::Num((rng.gen_range(100..20_000) as f64) / 100.0),
                ],
                time: Timestamp(t),
            }
        })
        .collect();

    let col = |name: &str, kind: ColumnKind, nullable: bool| ColumnSpec { name: name.into(), kind, nullable };
    let users_spec = TableSpec {
        name: "users".into(),
        file: "users.csv".into(),
        primary_key: "user_id".into(),
        time_column: Some("signup".into()),
        columns: vec![
            col("user_id", ColumnKind::Categorical, false),
            col("signup", ColumnKind::Timestamp, false),
            col("country", ColumnKind::Categorical, true),
            col("age", ColumnKind::Numeric, true),
        ],
        foreign_keys: vec![],
    };
    let items_spec = TableSpec {
        name: "items".into(),
        file: "items.csv".into(),
        primary_key: "item_id".into(),
        time_column: None,
        columns: vec![
            col("item_id", ColumnKind::Categorical, false),
            col("category", ColumnKind::Categorical, true),
            col("price", ColumnKind::Numeric, true),
        ],
        foreign_keys: vec![],
    };
    let events_spec = TableSpec {
        name: "events".into(),
        file: "events.csv".into(),
        primary_key: "event_id".into(),
        time_column: Some("ts".into()),
        columns: vec![
            col("event_id", ColumnKind::Categorical, false),
            col("user_id", ColumnKind::Categorical, false),
            col("item_id", ColumnKind::Categorical, false),
            col("ts", ColumnKind::Timestamp, false),
            col("kind", ColumnKind::Categorical, false),
            col("amount", ColumnKind::Numeric, true),
        ],
        foreign_keys: vec![
            ForeignKey { column: "user_id".into(), target_table: "users".into() },
            ForeignKey { column: "item_id".into(), target_table: "items".into() },
        ],
    };
    let db = Database::from_tables(
        vec![(users_spec, users), (items_spec, items), (events_spec, events)],
        LoadReport::default(),
    )?;

    let (churn_examples, count_examples) = derive_labels(&db, cfg);
    let task = |id: &str, file: &str, kind, strategy| TaskManifest {
        task_id: id.into(),
        target_table: "users".into(),
        labels: LabelSource::File(PathBuf::from(file)),
        kind,
        val_cutoff: seeds[cfg.val_from],
        test_cutoff: seeds[cfg.test_from],
        strategy,
        description: None,
        question: None,
    };
    Ok(SynthBench {
        config: cfg.clone(),
        churn: task(CHURN_TASK, "churn_labels.csv", TaskKind::Classification, AnswerStrategy::TokenDistribution),
        count: task(COUNT_TASK, "event_count_labels.csv", TaskKind::Regression, AnswerStrategy::MlpHead),
        db,
        churn_examples,
        count_examples,
    })
}

/// Churn and trailing-window event-count labels of every user at every seed
/// time, computed from the events table. Sorted by `(seed_time, entity)`.
pub fn derive_labels(db: &Database, cfg: &SynthConfig) -> (Vec<Example>, Vec<Example>) {
    let users = db.table_id("users").expect("users table");
    let events = db.table(db.table_id("events").expect("events table"));
    let n = db.table(users).len();
    let user_col = events.spec.column_index("user_id").expect("user_id column");
    let kind_col = events.spec.column_index("kind").expect("kind column");
    let watched = EVENT_KINDS[cfg.churn_kind];
    let w = cfg.window();
    let (mut churn, mut count) = (Vec::new(), Vec::new());
    for s in cfg.all_seed_times() {
        let mut watched_hits = vec![0usize; n];
        let mut all_hits = vec![0usize; n];
        for e in &events.entities {
            if !(s.0 - w <= e.time.0 && e.time < s) {
                continue;
            }
            let Cell::Cat(user) = &e.attrs[user_col] else { continue };
            let u: usize = user[1..].parse().expect("user keys are u<index>");
            all_hits[u] += 1;
            if matches!(&e.attrs[kind_col], Cell::Cat(k) if k == watched) {
                watched_hits[u] += 1;
            }
        }
        for u in 0..n {
            let entity = NodeId::new(users, u);
            churn.push(Example { entity, seed_time: s, label: f64::from(u8::from(watched_hits[u] == 0)) });
            count.push(Example { entity, seed_time: s, label: all_hits[u] as f64 });
        }
    }
    (churn, count)
}

impl SynthBench {
    /// Write the database, both task manifests and their label files under
    /// `dir`; manifests go to `dir/tasks/{churn,event-count}.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_database(&self.db, dir)?;
        let tasks = dir.join("tasks");
        std::fs::create_dir_all(&tasks)?;
        for (name, task, examples) in
            [("churn", &self.churn, &self.churn_examples), ("event-count", &self.count, &self.count_examples)]
        {
            task.save(&tasks.join(format!("{name}.json")))?;
            let LabelSource::File(file) = &task.labels else { unreachable!("synthetic tasks use label files") };
            write_label_file(&tasks.join(file), &self.db, examples)?;
        }
        std::fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(())
    }

    /// Positive fraction among the churn examples of one split.
    pub fn positive_rate(&self, split: crate::task::Split) -> f64 {
        let ex = self.churn.split(&self.churn_examples, split);
        ex.iter().filter(|e| e.label > 0.5).count() as f64 / ex.len().max(1) as f64
    }
}

/// The users table id of a generated database.
pub fn users_table(db: &Database) -> TableId {
    db.table_id("users").expect("synthetic databases have a users table")
}

/// A single-table database of `n` people with distinct signup times and
/// three attributes, used to check that pretraining can memorize.
pub fn people_db(n: usize, seed: u64) -> Database {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = TableSpec {
        name: "people".into(),
        file: "people.csv".into(),
        primary_key: "person_id".into(),
        time_column: Some("joined".into()),
        columns: vec![
            ColumnSpec { name: "person_id".into(), kind: ColumnKind::Categorical, nullable: false },
            ColumnSpec { name: "joined".into(), kind: ColumnKind::Timestamp, nullable: false },
            ColumnSpec { name: "city".into(), kind: ColumnKind::Categorical, nullable: true },
            ColumnSpec { name: "tier".into(), kind: ColumnKind::Categorical, nullable: true },
            ColumnSpec { name: "age".into(), kind: ColumnKind::Numeric, nullable: true },
        ],
        foreign_keys: vec![],
    };
    const CITIES: [&str; 5] = ["berlin", "lima", "oslo", "pune", "kyoto"];
    const TIERS: [&str; 3] = ["gold", "silver", "basic"];
    let rows = (0..n)
        .map(|i| {
            let t = Timestamp(1_600_000_000 + i as i64 * DAY);
            Entity {
                pkey: format!("p{i}"),
                fkeys: vec![],
                attrs: vec![
                    Cell::Cat(format!("p{i}")),
                    Cell::Time(t),
                    Cell::Cat(CITIES[rng.gen_range(0..CITIES.len())].into()),
                    Cell::Cat(TIERS[rng.gen_range(0..TIERS.len())].into()),
                    Cell::Num(rng.gen_range(18..80) as f64),
                ],
                time: t,
            }
        })
        .collect();
    Database::from_tables(vec![(spec, rows)], LoadReport::default()).expect("people schema is valid")
}
