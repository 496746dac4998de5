//! Interaction profiles: loading, per-round train/test splitting and click feedback.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type UserId = u32;
pub type ItemId = u32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("no interactions")]
    Empty,
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("user {user} or item {item} outside the {n}x{m} catalog")]
    OutOfRange {
        user: UserId,
        item: ItemId,
        n: usize,
        m: usize,
    },
    #[error("interaction value must be positive, got {0}")]
    NonPositiveValue(f64),
    #[error("click interactions need round >= 1")]
    ClickRound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Original,
    Click,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    /// Original interaction strength; modelling only uses presence.
    pub value: f64,
    pub round_added: u32,
    pub source: Source,
}

impl Interaction {
    pub fn original(user: UserId, item: ItemId, value: f64) -> Self {
        Interaction {
            user,
            item,
            value,
            round_added: 0,
            source: Source::Original,
        }
    }

    pub fn click(user: UserId, item: ItemId, round: u32) -> Self {
        Interaction {
            user,
            item,
            value: 1.0,
            round_added: round,
            source: Source::Click,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub value: f64,
    pub round_added: u32,
    pub source: Source,
}

/// Dense re-indexing of raw identifiers in first-appearance order.
#[derive(Clone, Debug, Default)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn encode_or_insert(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        let id = self.raw.len() as u32;
        self.raw.push(raw.to_owned());
        self.index.insert(raw.to_owned(), id);
        id
    }

    pub fn encode(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.raw.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Identity map `0..n` used for synthetic stores.
    pub fn identity(n: usize) -> Self {
        let mut map = IdMap::default();
        for i in 0..n {
            map.encode_or_insert(&i.to_string());
        }
        map
    }
}

/// User profiles over a fixed `n x m` catalog, at most one entry per pair.
#[derive(Clone, Debug)]
pub struct InteractionStore {
    profiles: Vec<BTreeMap<ItemId, Entry>>,
    m: usize,
    len: usize,
    users: Arc<IdMap>,
    items: Arc<IdMap>,
}

impl InteractionStore {
    pub fn new(n: usize, m: usize) -> Self {
        Self::with_maps(Arc::new(IdMap::identity(n)), Arc::new(IdMap::identity(m)))
    }

    fn with_maps(users: Arc<IdMap>, items: Arc<IdMap>) -> Self {
        InteractionStore {
            profiles: vec![BTreeMap::new(); users.len()],
            m: items.len(),
            len: 0,
            users,
            items,
        }
    }

    /// Empty store sharing this store's catalog and id maps.
    pub fn empty_like(&self) -> Self {
        Self::with_maps(self.users.clone(), self.items.clone())
    }

    pub fn n(&self) -> usize {
        self.profiles.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.users
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.items
    }

    fn check(&self, user: UserId, item: ItemId) -> Result<(), DatasetError> {
        if (user as usize) < self.n() && (item as usize) < self.m {
            Ok(())
        } else {
            Err(DatasetError::OutOfRange {
                user,
                item,
                n: self.n(),
                m: self.m,
            })
        }
    }

    /// Inserts or replaces the entry for `(user, item)`. Returns true if the pair was new.
    pub fn insert(&mut self, it: Interaction) -> Result<bool, DatasetError> {
        self.check(it.user, it.item)?;
        if !(it.value > 0.0) {
            return Err(DatasetError::NonPositiveValue(it.value));
        }
        if (it.source == Source::Click) != (it.round_added >= 1) {
            return Err(DatasetError::ClickRound);
        }
        let entry = Entry {
            value: it.value,
            round_added: it.round_added,
            source: it.source,
        };
        let fresh = self.profiles[it.user as usize]
            .insert(it.item, entry)
            .is_none();
        if fresh {
            self.len += 1;
        }
        Ok(fresh)
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.profiles
            .get(user as usize)
            .is_some_and(|p| p.contains_key(&item))
    }

    pub fn get(&self, user: UserId, item: ItemId) -> Option<&Entry> {
        self.profiles.get(user as usize)?.get(&item)
    }

    pub fn profile(&self, user: UserId) -> &BTreeMap<ItemId, Entry> {
        &self.profiles[user as usize]
    }

    pub fn profile_len(&self, user: UserId) -> usize {
        self.profiles[user as usize].len()
    }

    /// All interactions ordered by `(user, item)`.
    pub fn interactions(&self) -> impl Iterator<Item = Interaction> + '_ {
        self.profiles.iter().enumerate().flat_map(|(u, p)| {
            p.iter().map(move |(&item, e)| Interaction {
                user: u as UserId,
                item,
                value: e.value,
                round_added: e.round_added,
                source: e.source,
            })
        })
    }

    pub fn click_count(&self) -> usize {
        self.profiles
            .iter()
            .flat_map(|p| p.values())
            .filter(|e| e.source == Source::Click)
            .count()
    }

    /// Appends simulated clicks as `value = 1` interactions tagged with `round`.
    ///
    /// Pairs already in a profile are skipped and counted; applying the same
    /// click set twice therefore leaves the store unchanged the second time.
    pub fn apply_clicks(
        &mut self,
        clicks: &[(UserId, ItemId)],
        round: u32,
    ) -> Result<ClickApplyReport, DatasetError> {
        if round == 0 {
            return Err(DatasetError::ClickRound);
        }
        let mut report = ClickApplyReport::default();
        for &(user, item) in clicks {
            self.check(user, item)?;
            if self.contains(user, item) {
                report.skipped += 1;
                continue;
            }
            self.insert(Interaction::click(user, item, round))?;
            report.added += 1;
        }
        Ok(report)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClickApplyReport {
    pub added: usize,
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    /// `user<sep>item<sep>value[<sep>timestamp]`, no header.
    MovielensDelimited,
    /// Comma separated, header row, first three columns are user, item, value.
    Csv,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: DataFormat,
    pub separator: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            format: DataFormat::MovielensDelimited,
            separator: "::".to_owned(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub duplicates_dropped: usize,
}

pub fn load_dataset(
    path: &Path,
    opts: &LoadOptions,
) -> Result<(InteractionStore, LoadReport), DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    load_from_reader(file, opts).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.to_owned(),
            source,
        },
        other => other,
    })
}

pub fn load_from_reader<R: Read>(
    reader: R,
    opts: &LoadOptions,
) -> Result<(InteractionStore, LoadReport), DatasetError> {
    let records = match opts.format {
        DataFormat::MovielensDelimited => read_delimited(reader, &opts.separator)?,
        DataFormat::Csv => read_csv(reader)?,
    };
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }

    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut latest: HashMap<(u32, u32), f64> = HashMap::new();
    let mut order = Vec::new();
    let mut duplicates = 0;
    for (user, item, value) in &records {
        let key = (users.encode_or_insert(user), items.encode_or_insert(item));
        if latest.insert(key, *value).is_some() {
            duplicates += 1;
        } else {
            order.push(key);
        }
    }

    let mut store = InteractionStore::with_maps(Arc::new(users), Arc::new(items));
    for (u, i) in order {
        store.insert(Interaction::original(u, i, latest[&(u, i)]))?;
    }
    let report = LoadReport {
        users: store.n(),
        items: store.m(),
        interactions: store.len(),
        duplicates_dropped: duplicates,
    };
    Ok((store, report))
}

type RawRecord = (String, String, f64);

fn parse_value(raw: &str, line: usize) -> Result<f64, DatasetError> {
    let value: f64 = raw.trim().parse().map_err(|_| DatasetError::Malformed {
        line,
        reason: format!("value {raw:?} is not a number"),
    })?;
    if !(value > 0.0) || !value.is_finite() {
        return Err(DatasetError::Malformed {
            line,
            reason: format!("value {value} must be positive"),
        });
    }
    Ok(value)
}

fn read_delimited<R: Read>(reader: R, sep: &str) -> Result<Vec<RawRecord>, DatasetError> {
    if sep.is_empty() {
        return Err(DatasetError::Malformed {
            line: 0,
            reason: "empty separator".into(),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() < 3 {
            return Err(DatasetError::Malformed {
                line: lineno,
                reason: format!("expected at least 3 fields, found {}", fields.len()),
            });
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(DatasetError::Malformed {
                line: lineno,
                reason: "empty user or item id".into(),
            });
        }
        out.push((user.to_owned(), item.to_owned(), parse_value(fields[2], lineno)?));
    }
    Ok(out)
}

fn read_csv<R: Read>(reader: R) -> Result<Vec<RawRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        // header is line 1
        let lineno = idx + 2;
        let rec = rec.map_err(|e| DatasetError::Malformed {
            line: e.position().map_or(lineno, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        if rec.len() < 3 {
            return Err(DatasetError::Malformed {
                line: lineno,
                reason: format!("expected at least 3 columns, found {}", rec.len()),
            });
        }
        let (user, item) = (rec[0].trim(), rec[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(DatasetError::Malformed {
                line: lineno,
                reason: "empty user or item id".into(),
            });
        }
        out.push((user.to_owned(), item.to_owned(), parse_value(&rec[2], lineno)?));
    }
    Ok(out)
}

/// Disjoint per-user partition of a store.
#[derive(Clone, Debug)]
pub struct SplitPair {
    pub train: InteractionStore,
    pub test: InteractionStore,
}

/// Number of training interactions for a profile of `size`.
pub fn train_size(size: usize, ratio: f64) -> usize {
    if size <= 1 {
        return size;
    }
    let k = (ratio * size as f64 + 1e-9).floor() as usize;
    k.clamp(1, size - 1)
}

/// Randomly partitions every profile into train and test parts.
///
/// Each user keeps `floor(ratio * |profile|)` items for training (at least one
/// when the profile has two or more items); single-item profiles go entirely
/// to train.
pub fn split(store: &InteractionStore, ratio: f64, seed: u64) -> Result<SplitPair, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = store.empty_like();
    let mut test = store.empty_like();
    for (u, profile) in store.profiles.iter().enumerate() {
        let mut entries: Vec<(ItemId, Entry)> = profile.iter().map(|(&i, &e)| (i, e)).collect();
        entries.shuffle(&mut rng);
        let cut = train_size(entries.len(), ratio);
        for (k, (item, e)) in entries.into_iter().enumerate() {
            let target = if k < cut { &mut train } else { &mut test };
            target.profiles[u].insert(item, e);
            target.len += 1;
        }
    }
    Ok(SplitPair { train, test })
}

impl SplitPair {
    /// Partition against a fixed test set: every current interaction not in
    /// `frozen_test` is training data.
    pub fn with_frozen_test(store: &InteractionStore, frozen_test: &InteractionStore) -> Self {
        let mut train = store.empty_like();
        let mut test = store.empty_like();
        for it in store.interactions() {
            let target = if frozen_test.contains(it.user, it.item) {
                &mut test
            } else {
                &mut train
            };
            target.profiles[it.user as usize].insert(
                it.item,
                Entry {
                    value: it.value,
                    round_added: it.round_added,
                    source: it.source,
                },
            );
            target.len += 1;
        }
        SplitPair { train, test }
    }
}
