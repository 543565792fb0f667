//! In-process collective for the shards of one learner group.

use std::sync::{Arc, Condvar, Mutex};

use crate::error::{Error, Result};

struct Round<T> {
    id: u64,
    arrived: usize,
    slots: Vec<Option<T>>,
    done: Option<(u64, Arc<Vec<T>>)>,
    aborted: Option<String>,
}

/// Lock-step all-gather among `n` ranks. Every call is a barrier; round `r` completes only
/// when all ranks have contributed, so results of round `r` are never overwritten before
/// every rank has read them.
pub struct Collective<T> {
    n: usize,
    state: Mutex<Round<T>>,
    cv: Condvar,
}

impl<T: Clone + Send> Collective<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "collective needs at least one rank");
        Collective {
            n,
            state: Mutex::new(Round {
                id: 0,
                arrived: 0,
                slots: (0..n).map(|_| None).collect(),
                done: None,
                aborted: None,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Contributes `value` for `rank` and returns all contributions in rank order.
    pub fn all_gather(&self, rank: usize, value: T) -> Result<Arc<Vec<T>>> {
        let mut st = self.state.lock().unwrap();
        if let Some(r) = &st.aborted {
            return Err(Error::Aborted(r.clone()));
        }
        if st.slots[rank].is_some() {
            return Err(Error::Protocol(format!("rank {rank} contributed twice")));
        }
        let my_round = st.id;
        st.slots[rank] = Some(value);
        st.arrived += 1;
        if st.arrived == self.n {
            let values: Vec<T> = st.slots.iter_mut().map(|s| s.take().unwrap()).collect();
            let out = Arc::new(values);
            st.done = Some((my_round, out.clone()));
            st.arrived = 0;
            st.id += 1;
            self.cv.notify_all();
            return Ok(out);
        }
        loop {
            st = self.cv.wait(st).unwrap();
            if let Some((id, v)) = &st.done {
                if *id == my_round {
                    return Ok(v.clone());
                }
            }
            if let Some(r) = &st.aborted {
                return Err(Error::Aborted(r.clone()));
            }
        }
    }

    /// Fail-stop: wakes every waiter with an error; later calls fail immediately.
    pub fn abort(&self, reason: &str) {
        let mut st = self.state.lock().unwrap();
        if st.aborted.is_none() {
            st.aborted = Some(reason.to_string());
        }
        self.cv.notify_all();
    }

    pub fn is_aborted(&self) -> bool {
        self.state.lock().unwrap().aborted.is_some()
    }
}

/// Element-wise mean, summing in slice order and dividing once.
pub fn mean_in_order(grads: &[Vec<f64>]) -> Vec<f64> {
    let n = grads.len();
    let mut out = grads[0].clone();
    for g in &grads[1..] {
        for (o, x) in out.iter_mut().zip(g) {
            *o += x;
        }
    }
    if n > 1 {
        let inv = n as f64;
        for o in out.iter_mut() {
            *o /= inv;
        }
    }
    out
}

/// Gradient allreduce: every rank receives the bit-identical mean.
pub fn allreduce_mean(c: &Collective<Vec<f64>>, rank: usize, grad: Vec<f64>) -> Result<Vec<f64>> {
    let len = grad.len();
    let all = c.all_gather(rank, grad)?;
    if all.iter().any(|g| g.len() != len) {
        return Err(Error::LengthMismatch("shards disagree on gradient length".into()));
    }
    Ok(mean_in_order(&all))
}
