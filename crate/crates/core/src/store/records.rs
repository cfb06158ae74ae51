use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{StoreError, StoreOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Model,
    Job,
    Dataset,
    User,
    /// Token digest -> user id.
    Token,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Model => "model",
            EntityKind::Job => "job",
            EntityKind::Dataset => "dataset",
            EntityKind::User => "user",
            EntityKind::Token => "token",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub kind: EntityKind,
    pub id: String,
    pub version: u64,
    pub payload: serde_json::Value,
}

impl Record {
    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, StoreError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| StoreError::Decode {
            kind: self.kind,
            id: self.id.clone(),
            message: e.to_string(),
        })
    }
}

/// Matches payload fields `owner` and `visibility` when set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ListFilter {
    pub owner: Option<String>,
    pub visibility: Option<String>,
}

impl ListFilter {
    pub fn owner(owner: &str) -> Self {
        Self {
            owner: Some(owner.to_owned()),
            visibility: None,
        }
    }

    pub fn visibility(visibility: &str) -> Self {
        Self {
            owner: None,
            visibility: Some(visibility.to_owned()),
        }
    }

    fn matches(&self, payload: &serde_json::Value) -> bool {
        let field = |name: &str, want: &Option<String>| match want {
            None => true,
            Some(w) => payload.get(name).and_then(|v| v.as_str()) == Some(w.as_str()),
        };
        field("owner", &self.owner) && field("visibility", &self.visibility)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `expected`: `None` writes unconditionally, `Some(0)` requires absence,
    /// `Some(v)` requires current version `v`.
    Put {
        kind: EntityKind,
        id: String,
        expected: Option<u64>,
        payload: serde_json::Value,
    },
    Get {
        kind: EntityKind,
        id: String,
    },
    Delete {
        kind: EntityKind,
        id: String,
        expected: Option<u64>,
    },
    List {
        kind: EntityKind,
        filter: ListFilter,
    },
}

impl Op {
    pub fn put<T: Serialize>(kind: EntityKind, id: &str, expected: Option<u64>, value: &T) -> Self {
        Op::Put {
            kind,
            id: id.to_owned(),
            expected,
            payload: serde_json::to_value(value).expect("entity serializes"),
        }
    }

    pub fn get(kind: EntityKind, id: &str) -> Self {
        Op::Get { kind, id: id.to_owned() }
    }

    pub fn delete(kind: EntityKind, id: &str) -> Self {
        Op::Delete {
            kind,
            id: id.to_owned(),
            expected: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpResult {
    Put { version: u64 },
    Get(Record),
    Deleted,
    List(Vec<Record>),
}

/// One state-setting mutation; replaying it twice is harmless.
#[derive(Serialize, Deserialize)]
struct Mutation(EntityKind, String, u64, Option<serde_json::Value>);

#[derive(Serialize, Deserialize)]
struct Snapshot {
    records: Vec<Record>,
}

type Key = (EntityKind, String);

pub(super) struct RecordState {
    dir: PathBuf,
    options: StoreOptions,
    map: BTreeMap<Key, (u64, serde_json::Value)>,
    journal: File,
    journal_lines: usize,
}

impl RecordState {
    pub(super) fn open(dir: &Path, options: StoreOptions) -> Result<Self, StoreError> {
        let mut map = BTreeMap::new();
        let snap_path = dir.join("snapshot.json");
        if snap_path.exists() {
            let snap: Snapshot = serde_json::from_slice(&std::fs::read(&snap_path)?).map_err(|e| {
                StoreError::Journal {
                    line: 0,
                    message: format!("snapshot: {e}"),
                }
            })?;
            for r in snap.records {
                map.insert((r.kind, r.id), (r.version, r.payload));
            }
        }
        let journal_path = dir.join("journal.jsonl");
        let mut lines = 0;
        if journal_path.exists() {
            let reader = BufReader::new(File::open(&journal_path)?);
            let mut good_len = 0u64;
            let mut torn = false;
            for (i, line) in reader.split(b'\n').enumerate() {
                let line = line?;
                if torn {
                    return Err(StoreError::Journal {
                        line: i,
                        message: "undecodable line followed by more data".into(),
                    });
                }
                match serde_json::from_slice::<Vec<Mutation>>(&line) {
                    Ok(muts) => {
                        for m in muts {
                            apply(&mut map, m);
                        }
                        good_len += line.len() as u64 + 1;
                        lines += 1;
                    }
                    // A crash mid-append leaves at most one partial last line.
                    Err(_) => torn = true,
                }
            }
            if torn {
                tracing::warn!("dropping torn trailing journal line");
                OpenOptions::new().write(true).open(&journal_path)?.set_len(good_len)?;
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        let mut state = Self {
            dir: dir.to_path_buf(),
            options,
            map,
            journal,
            journal_lines: lines,
        };
        if state.journal_lines >= options.compact_after {
            state.compact()?;
        }
        Ok(state)
    }

    pub(super) fn get(&self, kind: EntityKind, id: &str) -> Result<Record, StoreError> {
        self.map
            .get(&(kind, id.to_owned()))
            .map(|(v, p)| Record {
                kind,
                id: id.to_owned(),
                version: *v,
                payload: p.clone(),
            })
            .ok_or_else(|| StoreError::NotFound {
                kind,
                id: id.to_owned(),
            })
    }

    pub(super) fn list(&self, kind: EntityKind, filter: &ListFilter) -> Vec<Record> {
        self.map
            .range((kind, String::new())..)
            .take_while(|((k, _), _)| *k == kind)
            .filter(|(_, (_, p))| filter.matches(p))
            .map(|((k, id), (v, p))| Record {
                kind: *k,
                id: id.clone(),
                version: *v,
                payload: p.clone(),
            })
            .collect()
    }

    pub(super) fn all(&self) -> impl Iterator<Item = Record> + '_ {
        self.map.iter().map(|((k, id), (v, p))| Record {
            kind: *k,
            id: id.clone(),
            version: *v,
            payload: p.clone(),
        })
    }

    pub(super) fn transact(&mut self, ops: Vec<Op>) -> Result<Vec<OpResult>, StoreError> {
        // Evaluate against an overlay so a failing op leaves no trace.
        let mut overlay: BTreeMap<Key, Option<(u64, serde_json::Value)>> = BTreeMap::new();
        let mut results = Vec::with_capacity(ops.len());
        let current = |overlay: &BTreeMap<Key, Option<(u64, serde_json::Value)>>, key: &Key| match overlay.get(key) {
            Some(v) => v.clone(),
            None => self.map.get(key).cloned(),
        };
        for op in ops {
            match op {
                Op::Put {
                    kind,
                    id,
                    expected,
                    payload,
                } => {
                    let key = (kind, id);
                    let found = current(&overlay, &key).map_or(0, |(v, _)| v);
                    if let Some(exp) = expected {
                        if exp != found {
                            return Err(StoreError::VersionConflict {
                                kind,
                                id: key.1,
                                expected: exp,
                                found,
                            });
                        }
                    }
                    let version = found + 1;
                    overlay.insert(key, Some((version, payload)));
                    results.push(OpResult::Put { version });
                }
                Op::Get { kind, id } => {
                    let key = (kind, id);
                    match current(&overlay, &key) {
                        Some((version, payload)) => results.push(OpResult::Get(Record {
                            kind,
                            id: key.1,
                            version,
                            payload,
                        })),
                        None => return Err(StoreError::NotFound { kind, id: key.1 }),
                    }
                }
                Op::Delete { kind, id, expected } => {
                    let key = (kind, id);
                    let Some((found, _)) = current(&overlay, &key) else {
                        return Err(StoreError::NotFound { kind, id: key.1 });
                    };
                    if let Some(exp) = expected {
                        if exp != found {
                            return Err(StoreError::VersionConflict {
                                kind,
                                id: key.1,
                                expected: exp,
                                found,
                            });
                        }
                    }
                    overlay.insert(key, None);
                    results.push(OpResult::Deleted);
                }
                Op::List { kind, filter } => {
                    let mut merged: BTreeMap<String, Record> =
                        self.list(kind, &filter).into_iter().map(|r| (r.id.clone(), r)).collect();
                    for ((k, id), v) in &overlay {
                        if *k != kind {
                            continue;
                        }
                        match v {
                            Some((version, payload)) if filter.matches(payload) => {
                                merged.insert(
                                    id.clone(),
                                    Record {
                                        kind,
                                        id: id.clone(),
                                        version: *version,
                                        payload: payload.clone(),
                                    },
                                );
                            }
                            _ => {
                                merged.remove(id);
                            }
                        }
                    }
                    results.push(OpResult::List(merged.into_values().collect()));
                }
            }
        }
        if overlay.is_empty() {
            return Ok(results);
        }
        let muts: Vec<Mutation> = overlay
            .into_iter()
            .map(|((k, id), v)| match v {
                Some((version, payload)) => Mutation(k, id, version, Some(payload)),
                None => Mutation(k, id, 0, None),
            })
            .collect();
        let mut line = serde_json::to_vec(&muts).expect("mutations serialize");
        line.push(b'\n');
        self.journal.write_all(&line)?;
        if self.options.fsync {
            self.journal.sync_data()?;
        }
        self.journal_lines += 1;
        for m in muts {
            apply(&mut self.map, m);
        }
        if self.journal_lines >= self.options.compact_after {
            self.compact()?;
        }
        Ok(results)
    }

    /// Writes the full state to the snapshot and empties the journal.
    fn compact(&mut self) -> Result<(), StoreError> {
        let snap = Snapshot {
            records: self.all().collect(),
        };
        let tmp = self.dir.join("snapshot.json.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(&snap).expect("snapshot serializes"))?;
            if self.options.fsync {
                f.sync_all()?;
            }
        }
        std::fs::rename(&tmp, self.dir.join("snapshot.json"))?;
        if self.options.fsync {
            File::open(&self.dir)?.sync_all()?;
        }
        // Replaying the old journal over the new snapshot would be harmless,
        // so a crash between rename and truncate is safe.
        self.journal.set_len(0)?;
        self.journal_lines = 0;
        Ok(())
    }
}

fn apply(map: &mut BTreeMap<Key, (u64, serde_json::Value)>, m: Mutation) {
    let Mutation(kind, id, version, payload) = m;
    match payload {
        Some(p) => {
            map.insert((kind, id), (version, p));
        }
        None => {
            map.remove(&(kind, id));
        }
    }
}
