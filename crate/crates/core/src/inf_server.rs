//! Batched inference: requests from many actors are queued, evaluated together against one
//! blob snapshot, and answered individually.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::api::{InferenceApi, InferenceResult, ModelPoolApi};
use crate::error::{Error, Result};
use crate::model_pool::ModelRecord;
use crate::policy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchPolicy {
    pub max_batch: usize,
    pub flush_timeout: Duration,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        BatchPolicy {
            max_batch: 32,
            flush_timeout: Duration::from_millis(2),
        }
    }
}

impl BatchPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_batch == 0 || self.flush_timeout.is_zero() {
            return Err(Error::InvalidArgument("max_batch and flush_timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Which pool entry the server tracks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    /// The most recently created key of a lineage, e.g. `latest:main`.
    Latest(String),
    Explicit(String),
}

impl ModelRef {
    pub fn parse(s: &str) -> ModelRef {
        match s.strip_prefix("latest:") {
            Some(l) => ModelRef::Latest(l.to_string()),
            None => ModelRef::Explicit(s.to_string()),
        }
    }

    pub fn resolve(&self, pool: &dyn ModelPoolApi) -> Result<String> {
        match self {
            ModelRef::Explicit(k) => Ok(k.clone()),
            ModelRef::Latest(lineage) => {
                let prefix = format!("{lineage}:");
                pool.list_models()?
                    .into_iter()
                    .rev()
                    .find(|m| m.key.starts_with(&prefix))
                    .map(|m| m.key)
                    .ok_or(Error::NoModel)
            }
        }
    }
}

struct Pending {
    obs: Vec<f64>,
    reply: SyncSender<Result<InferenceResult>>,
}

struct Inner {
    policy: BatchPolicy,
    model: RwLock<Option<Arc<ModelRecord>>>,
    queue: Mutex<VecDeque<Pending>>,
    cv: Condvar,
    stop: AtomicBool,
    batches: AtomicU64,
    served: AtomicU64,
}

impl Inner {
    fn snapshot(&self) -> Option<Arc<ModelRecord>> {
        self.model.read().unwrap().clone()
    }

    /// Swaps in `rec` unless the current blob is the same key at an equal or newer version.
    fn offer(&self, rec: Arc<ModelRecord>) -> bool {
        let mut cur = self.model.write().unwrap();
        let newer = match cur.as_ref() {
            Some(c) => rec.version > c.version,
            None => true,
        };
        if newer {
            *cur = Some(rec);
        }
        newer
    }
}

pub struct InfServer {
    inner: Arc<Inner>,
    worker: Option<JoinHandle<()>>,
    refresher: Option<JoinHandle<()>>,
}

impl InfServer {
    /// Starts the batching worker. With a pool, a refresh thread polls `model` every
    /// `refresh_interval`.
    pub fn start(
        policy: BatchPolicy,
        pool: Option<(Arc<dyn ModelPoolApi>, ModelRef, Duration)>,
    ) -> Result<InfServer> {
        policy.validate()?;
        let inner = Arc::new(Inner {
            policy,
            model: RwLock::new(None),
            queue: Mutex::new(VecDeque::new()),
            cv: Condvar::new(),
            stop: AtomicBool::new(false),
            batches: AtomicU64::new(0),
            served: AtomicU64::new(0),
        });
        let w = inner.clone();
        let worker = thread::Builder::new()
            .name("inf-batch".into())
            .spawn(move || batch_loop(&w))?;
        let refresher = match pool {
            Some((pool, mref, every)) => {
                let _ = refresh_once(&inner, pool.as_ref(), &mref);
                let r = inner.clone();
                Some(thread::Builder::new().name("inf-refresh".into()).spawn(move || {
                    while !r.stop.load(Ordering::SeqCst) {
                        let mut slept = Duration::ZERO;
                        while slept < every && !r.stop.load(Ordering::SeqCst) {
                            let d = (every - slept).min(Duration::from_millis(10));
                            thread::sleep(d);
                            slept += d;
                        }
                        if let Err(e) = refresh_once(&r, pool.as_ref(), &mref) {
                            log::debug!("inference refresh failed, keeping current blob: {e}");
                        }
                    }
                })?)
            }
            None => None,
        };
        Ok(InfServer {
            inner,
            worker: Some(worker),
            refresher,
        })
    }

    /// Installs a blob directly; ignored if not newer than the current one.
    pub fn set_model(&self, rec: Arc<ModelRecord>) -> bool {
        self.inner.offer(rec)
    }

    pub fn refresh_from(&self, pool: &dyn ModelPoolApi, mref: &ModelRef) -> Result<bool> {
        refresh_once(&self.inner, pool, mref)
    }

    pub fn current_version(&self) -> Option<u64> {
        self.inner.snapshot().map(|r| r.version)
    }

    pub fn current_key(&self) -> Option<String> {
        self.inner.snapshot().map(|r| r.key.clone())
    }

    /// Number of batch evaluations performed so far.
    pub fn batches(&self) -> u64 {
        self.inner.batches.load(Ordering::SeqCst)
    }

    pub fn served(&self) -> u64 {
        self.inner.served.load(Ordering::SeqCst)
    }

    pub fn shutdown(&mut self) {
        self.inner.stop.store(true, Ordering::SeqCst);
        self.inner.cv.notify_all();
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
        if let Some(h) = self.refresher.take() {
            let _ = h.join();
        }
    }
}

impl Drop for InfServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn refresh_once(inner: &Inner, pool: &dyn ModelPoolApi, mref: &ModelRef) -> Result<bool> {
    let key = mref.resolve(pool)?;
    let rec = pool.get_model(&key)?;
    Ok(inner.offer(rec))
}

fn batch_loop(inner: &Inner) {
    let BatchPolicy {
        max_batch,
        flush_timeout,
    } = inner.policy;
    loop {
        let batch: Vec<Pending> = {
            let mut q = inner.queue.lock().unwrap();
            while q.is_empty() && !inner.stop.load(Ordering::SeqCst) {
                q = inner.cv.wait(q).unwrap();
            }
            if inner.stop.load(Ordering::SeqCst) {
                for p in q.drain(..) {
                    let _ = p.reply.send(Err(Error::Shutdown));
                }
                return;
            }
            let deadline = Instant::now() + flush_timeout;
            while q.len() < max_batch && !inner.stop.load(Ordering::SeqCst) {
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                q = inner.cv.wait_timeout(q, deadline - now).unwrap().0;
            }
            let n = q.len().min(max_batch);
            q.drain(..n).collect()
        };
        // One snapshot per batch: a concurrent swap never mixes versions inside a batch.
        let model = inner.snapshot();
        inner.batches.fetch_add(1, Ordering::SeqCst);
        for p in batch {
            let res = match &model {
                None => Err(Error::NoModel),
                Some(m) => policy::evaluate(&m.params, &p.obs).map(|(dist, value)| InferenceResult {
                    dist,
                    model_version: m.version,
                    value,
                }),
            };
            inner.served.fetch_add(1, Ordering::SeqCst);
            let _ = p.reply.send(res);
        }
    }
}

impl InferenceApi for InfServer {
    fn infer(&self, _actor_id: u32, obs: &[f64]) -> Result<InferenceResult> {
        let (tx, rx) = sync_channel(1);
        {
            let mut q = self.inner.queue.lock().unwrap();
            if self.inner.stop.load(Ordering::SeqCst) {
                return Err(Error::Shutdown);
            }
            q.push_back(Pending {
                obs: obs.to_vec(),
                reply: tx,
            });
        }
        self.inner.cv.notify_all();
        rx.recv().map_err(|_| Error::Shutdown)?
    }
}
