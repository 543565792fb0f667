//! Segment ring with a reuse bound and blocking sampling.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learner::stats::Counters;
use crate::segment::TrajectorySegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestStatus {
    Stored,
    Stale,
    Duplicate,
}

struct Entry {
    seg: Arc<TrajectorySegment>,
    uses: u32,
    epoch: u64,
    frames: u64,
}

struct Inner {
    ring: VecDeque<Entry>,
    current_key: Option<String>,
    last_seq: HashMap<u32, u64>,
    counters: Counters,
    epoch: u64,
    busy: bool,
    shutdown: bool,
    /// Per-segment use counts of everything ever sampled, when auditing.
    audit: Option<HashMap<(u32, u64), u32>>,
}

pub struct ReplayMem {
    capacity: usize,
    max_reuse: u32,
    inner: Mutex<Inner>,
    cv: Condvar,
}

impl ReplayMem {
    pub fn new(capacity: usize, max_reuse: u32) -> Result<Self> {
        if capacity == 0 || max_reuse == 0 {
            return Err(Error::InvalidArgument(
                "replay capacity and max_reuse must be >= 1".into(),
            ));
        }
        Ok(ReplayMem {
            capacity,
            max_reuse,
            inner: Mutex::new(Inner {
                ring: VecDeque::new(),
                current_key: None,
                last_seq: HashMap::new(),
                counters: Counters::default(),
                epoch: 0,
                busy: false,
                shutdown: false,
                audit: None,
            }),
            cv: Condvar::new(),
        })
    }

    pub fn max_reuse(&self) -> u32 {
        self.max_reuse
    }

    pub fn enable_audit(&self) {
        self.inner.lock().unwrap().audit = Some(HashMap::new());
    }

    /// Highest use count any segment reached (audit mode only).
    pub fn audit_max_uses(&self) -> Option<u32> {
        let st = self.inner.lock().unwrap();
        st.audit.as_ref().map(|a| a.values().copied().max().unwrap_or(0))
    }

    /// Sets the learning key; entries for any other key are purged.
    pub fn set_current_key(&self, key: &str) {
        let mut st = self.inner.lock().unwrap();
        st.current_key = Some(key.to_string());
        st.ring.retain(|e| e.seg.model_key == key);
        self.cv.notify_all();
    }

    pub fn current_key(&self) -> Option<String> {
        self.inner.lock().unwrap().current_key.clone()
    }

    fn validate(seg: &TrajectorySegment) -> Result<()> {
        if seg.steps.is_empty() {
            return Err(Error::Malformed("segment has no steps".into()));
        }
        let dim = seg.steps[0].obs.len();
        let mut seen_pad = false;
        for s in &seg.steps {
            if s.obs.len() != dim {
                return Err(Error::Malformed("observation length varies in segment".into()));
            }
            if s.valid && seen_pad {
                return Err(Error::Malformed("valid step after padding".into()));
            }
            seen_pad |= !s.valid;
            if s.valid
                && (!s.reward.is_finite() || !s.behavior_logp.is_finite() || !s.value_est.is_finite())
            {
                return Err(Error::Malformed("non-finite step field".into()));
            }
        }
        if !seg.bootstrap_value.is_finite() {
            return Err(Error::Malformed("non-finite bootstrap value".into()));
        }
        Ok(())
    }

    /// Stores a segment. Blocks while no learning key is known yet. Stale and duplicate
    /// segments are counted and dropped without error.
    pub fn ingest(&self, seg: TrajectorySegment) -> Result<IngestStatus> {
        Self::validate(&seg)?;
        let mut st = self.inner.lock().unwrap();
        while st.current_key.is_none() && !st.shutdown {
            st = self.cv.wait(st).unwrap();
        }
        if st.shutdown {
            return Err(Error::Shutdown);
        }
        if st.current_key.as_deref() != Some(seg.model_key.as_str()) {
            st.counters.stale_dropped += 1;
            return Ok(IngestStatus::Stale);
        }
        if let Some(&last) = st.last_seq.get(&seg.actor_id) {
            if seg.segment_seq <= last {
                st.counters.duplicates_dropped += 1;
                return Ok(IngestStatus::Duplicate);
            }
        }
        st.last_seq.insert(seg.actor_id, seg.segment_seq);
        let frames = seg.valid_len() as u64;
        st.counters.received_frames += frames;
        st.counters.received_epoch_frames += frames;
        if st.ring.len() == self.capacity {
            st.ring.pop_front();
            st.counters.evicted += 1;
        }
        let epoch = st.epoch;
        st.ring.push_back(Entry {
            seg: Arc::new(seg),
            uses: 0,
            epoch,
            frames,
        });
        self.cv.notify_all();
        Ok(IngestStatus::Stored)
    }

    fn eligible(&self, st: &Inner) -> usize {
        st.ring.iter().filter(|e| e.uses < self.max_reuse).count()
    }

    /// Draws `batch_size` distinct eligible segments uniformly, blocking until enough exist.
    /// The batch keeps ring order. Marks the memory busy until `finish_step`.
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Arc<TrajectorySegment>>> {
        self.sample_timeout(batch_size, rng, None)?
            .ok_or_else(|| Error::Protocol("sample timed out".into()))
    }

    /// Like `sample`, but gives up after `timeout` with `Ok(None)`.
    pub fn sample_timeout(
        &self,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
        timeout: Option<Duration>,
    ) -> Result<Option<Vec<Arc<TrajectorySegment>>>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let deadline = timeout.map(|t| std::time::Instant::now() + t);
        let mut st = self.inner.lock().unwrap();
        loop {
            if st.shutdown {
                return Err(Error::Shutdown);
            }
            if self.eligible(&st) >= batch_size {
                break;
            }
            match deadline {
                None => st = self.cv.wait(st).unwrap(),
                Some(d) => {
                    let now = std::time::Instant::now();
                    if now >= d {
                        return Ok(None);
                    }
                    st = self.cv.wait_timeout(st, d - now).unwrap().0;
                }
            }
        }
        let mut idx: Vec<usize> = (0..st.ring.len())
            .filter(|&i| st.ring[i].uses < self.max_reuse)
            .collect();
        // partial Fisher-Yates, then restore ring order
        for i in 0..batch_size {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        let mut chosen = idx[..batch_size].to_vec();
        chosen.sort_unstable();

        let epoch = st.epoch;
        let mut batch = Vec::with_capacity(batch_size);
        for &i in &chosen {
            let e = &mut st.ring[i];
            e.uses += 1;
            let (frames, same_epoch, uses) = (e.frames, e.epoch == epoch, e.uses);
            let seg = e.seg.clone();
            st.counters.consumed_frames += frames;
            if same_epoch {
                st.counters.consumed_epoch_frames += frames;
            }
            if let Some(a) = st.audit.as_mut() {
                let c = a.entry((seg.actor_id, seg.segment_seq)).or_insert(0);
                *c = (*c).max(uses);
            }
            batch.push(seg);
        }
        let max_reuse = self.max_reuse;
        st.ring.retain(|e| e.uses < max_reuse);
        st.busy = true;
        Ok(Some(batch))
    }

    /// Marks the end of a train step (including any publish or period rollover).
    pub fn finish_step(&self, update_steps: u64) {
        let mut st = self.inner.lock().unwrap();
        st.busy = false;
        st.counters.update_steps = update_steps;
        self.cv.notify_all();
    }

    /// Blocks until no train step is running and no further one can start with the data
    /// already stored. Used for lock-step pushes.
    pub fn wait_idle(&self, batch_size: usize) -> Result<()> {
        let mut st = self.inner.lock().unwrap();
        loop {
            if st.shutdown {
                return Err(Error::Shutdown);
            }
            if !st.busy && self.eligible(&st) < batch_size {
                return Ok(());
            }
            st = self.cv.wait(st).unwrap();
        }
    }

    pub fn shutdown(&self) {
        let mut st = self.inner.lock().unwrap();
        st.shutdown = true;
        self.cv.notify_all();
    }

    pub fn is_shutdown(&self) -> bool {
        self.inner.lock().unwrap().shutdown
    }

    pub fn counters(&self) -> Counters {
        self.inner.lock().unwrap().counters
    }

    /// Starts a new measurement epoch and zeroes the epoch counters.
    pub fn new_epoch(&self) {
        let mut st = self.inner.lock().unwrap();
        st.epoch += 1;
        st.counters.received_epoch_frames = 0;
        st.counters.consumed_epoch_frames = 0;
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Model keys of every stored entry (for staleness checks in tests).
    pub fn stored_keys(&self) -> Vec<String> {
        let st = self.inner.lock().unwrap();
        st.ring.iter().map(|e| e.seg.model_key.clone()).collect()
    }
}
