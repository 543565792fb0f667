//! In-memory parameter store for the pool M and the current learning models.
//!
//! Records are immutable `Arc` snapshots: a write swaps the `Arc` under a write lock, so
//! readers see either the old or the new record and never a mixture. A store runs as a
//! primary (assigns creation order and versions, forwards every write to its followers) or
//! as a follower (applies forwarded records verbatim).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::ModelPoolApi;
use crate::error::{Error, Result};
use crate::policy::ParamBlob;
use crate::proto::{self, Message, Payload, MAX_FRAME_SIZE};
use crate::rl::HyperParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub key: String,
    pub params: ParamBlob,
    pub hyperparams: HyperParams,
    pub parent_key: Option<String>,
    /// Logical creation sequence number within the pool.
    pub created_at: u64,
    pub frozen: bool,
    /// Bumped on every accepted write.
    pub version: u64,
}

impl ModelRecord {
    pub fn new(key: &str, params: ParamBlob, hyperparams: HyperParams) -> Self {
        ModelRecord {
            key: key.to_string(),
            params,
            hyperparams,
            parent_key: None,
            created_at: 0,
            frozen: false,
            version: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInfo {
    pub key: String,
    pub frozen: bool,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolRole {
    Primary,
    Follower,
}

#[derive(Default)]
struct PoolState {
    records: HashMap<String, Arc<ModelRecord>>,
    order: BTreeMap<u64, String>,
    next_created: u64,
    next_version: u64,
}

pub struct ModelPool {
    role: PoolRole,
    state: RwLock<PoolState>,
    followers: RwLock<Vec<Arc<dyn ModelPoolApi>>>,
    // Serializes writes so followers receive them in the order they were applied.
    write_lock: Mutex<()>,
}

impl Default for ModelPool {
    fn default() -> Self {
        ModelPool::new(PoolRole::Primary)
    }
}

impl ModelPool {
    pub fn new(role: PoolRole) -> Self {
        ModelPool {
            role,
            state: RwLock::new(PoolState::default()),
            followers: RwLock::new(Vec::new()),
            write_lock: Mutex::new(()),
        }
    }

    pub fn role(&self) -> PoolRole {
        self.role
    }

    pub fn add_follower(&self, follower: Arc<dyn ModelPoolApi>) {
        self.followers.write().unwrap().push(follower);
    }

    fn forward(&self, record: &Arc<ModelRecord>) {
        for f in self.followers.read().unwrap().iter() {
            if let Err(e) = f.put_model((**record).clone()) {
                log::warn!("replica forward of {} failed: {e}", record.key);
            }
        }
    }

    fn check_size(record: &ModelRecord) -> Result<()> {
        let size = record.params.values.len() * 8;
        if size > MAX_FRAME_SIZE {
            return Err(Error::FrameTooLarge {
                size,
                max: MAX_FRAME_SIZE,
            });
        }
        Ok(())
    }

    /// Stores a record. The primary assigns `created_at` (kept across overwrites) and a fresh
    /// `version`; a follower stores forwarded records as given, ignoring stale versions.
    pub fn put(&self, mut record: ModelRecord) -> Result<Arc<ModelRecord>> {
        Self::check_size(&record)?;
        let _w = self.write_lock.lock().unwrap();
        let stored = {
            let mut st = self.state.write().unwrap();
            match self.role {
                PoolRole::Primary => {
                    if let Some(old) = st.records.get(&record.key) {
                        if old.frozen {
                            return Err(Error::ModelFrozen(record.key));
                        }
                        record.created_at = old.created_at;
                    } else {
                        record.created_at = st.next_created;
                        st.next_created += 1;
                    }
                    st.next_version += 1;
                    record.version = st.next_version;
                }
                PoolRole::Follower => {
                    if let Some(old) = st.records.get(&record.key) {
                        if old.version >= record.version {
                            return Ok(old.clone());
                        }
                    }
                    st.next_created = st.next_created.max(record.created_at + 1);
                    st.next_version = st.next_version.max(record.version);
                }
            }
            let rec = Arc::new(record);
            st.order.insert(rec.created_at, rec.key.clone());
            st.records.insert(rec.key.clone(), rec.clone());
            rec
        };
        if self.role == PoolRole::Primary {
            self.forward(&stored);
        }
        Ok(stored)
    }

    pub fn get(&self, key: &str) -> Result<Arc<ModelRecord>> {
        self.state
            .read()
            .unwrap()
            .records
            .get(key)
            .cloned()
            .ok_or_else(|| Error::ModelNotFound(key.to_string()))
    }

    /// Marks a record frozen. Idempotent.
    pub fn freeze(&self, key: &str) -> Result<Arc<ModelRecord>> {
        if self.role == PoolRole::Follower {
            return Err(Error::Protocol(
                "freeze must be sent to the primary replica".into(),
            ));
        }
        let _w = self.write_lock.lock().unwrap();
        let frozen = {
            let mut st = self.state.write().unwrap();
            let old = st
                .records
                .get(key)
                .cloned()
                .ok_or_else(|| Error::ModelNotFound(key.to_string()))?;
            if old.frozen {
                return Ok(old);
            }
            st.next_version += 1;
            let mut rec = (*old).clone();
            rec.frozen = true;
            rec.version = st.next_version;
            let rec = Arc::new(rec);
            st.records.insert(key.to_string(), rec.clone());
            rec
        };
        self.forward(&frozen);
        Ok(frozen)
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        let st = self.state.read().unwrap();
        st.order
            .values()
            .filter_map(|k| st.records.get(k))
            .map(|r| ModelInfo {
                key: r.key.clone(),
                frozen: r.frozen,
                created_at: r.created_at,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes every (optionally only frozen) record to `dir` as model files.
    pub fn snapshot_to_dir(&self, dir: &Path, frozen_only: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for info in self.list() {
            if frozen_only && !info.frozen {
                continue;
            }
            let rec = self.get(&info.key)?;
            let path = dir.join(model_file_name(&rec.key));
            save_model_file(&rec, &path)?;
            out.push(path);
        }
        Ok(out)
    }
}

impl ModelPoolApi for ModelPool {
    fn put_model(&self, record: ModelRecord) -> Result<()> {
        self.put(record).map(|_| ())
    }
    fn get_model(&self, key: &str) -> Result<Arc<ModelRecord>> {
        self.get(key)
    }
    fn freeze_model(&self, key: &str) -> Result<()> {
        self.freeze(key).map(|_| ())
    }
    fn list_models(&self) -> Result<Vec<ModelInfo>> {
        Ok(self.list())
    }
}

/// Client-side view of M_M replicas: writes go to replica 0, reads to a random replica.
pub struct ReplicatedPool {
    replicas: Vec<Arc<dyn ModelPoolApi>>,
    rng: Mutex<ChaCha8Rng>,
}

impl ReplicatedPool {
    pub fn new(replicas: Vec<Arc<dyn ModelPoolApi>>, seed: u64) -> Result<Self> {
        if replicas.is_empty() {
            return Err(Error::InvalidArgument("at least one replica required".into()));
        }
        Ok(ReplicatedPool {
            replicas,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    fn reader(&self) -> &Arc<dyn ModelPoolApi> {
        if self.replicas.len() == 1 {
            return &self.replicas[0];
        }
        let i = self.rng.lock().unwrap().gen_range(0..self.replicas.len());
        &self.replicas[i]
    }
}

impl ModelPoolApi for ReplicatedPool {
    fn put_model(&self, record: ModelRecord) -> Result<()> {
        self.replicas[0].put_model(record)
    }
    fn get_model(&self, key: &str) -> Result<Arc<ModelRecord>> {
        self.reader().get_model(key)
    }
    fn freeze_model(&self, key: &str) -> Result<()> {
        self.replicas[0].freeze_model(key)
    }
    fn list_models(&self) -> Result<Vec<ModelInfo>> {
        self.reader().list_models()
    }
}

pub fn model_file_name(key: &str) -> String {
    format!("{}.model", key.replace([':', '/'], "_"))
}

/// Model files hold one encoded `ParamPut` frame.
pub fn save_model_file(record: &ModelRecord, path: &Path) -> Result<()> {
    let bytes = proto::encode(&Message::new(0, Payload::ParamPut(record.clone())))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model_file(path: &Path) -> Result<ModelRecord> {
    let bytes = fs::read(path)?;
    match proto::decode(&bytes)?.payload {
        Payload::ParamPut(r) | Payload::ParamReply(r) => Ok(r),
        other => Err(Error::Malformed(format!(
            "{} holds a {:?} message, not a model",
            path.display(),
            other.kind()
        ))),
    }
}
