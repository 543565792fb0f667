//! League manager: task issuing, outcome bookkeeping and learning-period rollover.

pub mod hyper_mgr;
pub mod payoff;
pub mod sampling;

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{LeagueApi, ModelPoolApi};
use crate::env::Outcome;
use crate::error::{Error, Result};
use crate::model_pool::ModelRecord;
use crate::policy::ParamBlob;
use crate::rl::HyperParams;

pub use hyper_mgr::{perturb_hyper, HyperMgr};
pub use payoff::{elo_update, PayoffMatrix, DEFAULT_INITIAL_ELO, DEFAULT_K_FACTOR};
pub use sampling::{
    draw_weighted, opponent_weights, pfsp_weight, sample_opponent, GameMgr, SamplingScheme,
    SchemeGameMgr, SchemeKind,
};

/// Assignment binding one episode (or one learning period) to model keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: u64,
    pub learner_group: u32,
    pub learning_model_key: String,
    pub opponent_model_keys: Vec<String>,
    pub hyperparams: HyperParams,
}

pub fn model_key(lineage: &str, generation: u32) -> String {
    format!("{lineage}:{generation:04}")
}

/// Lineage name of learner group `g`: `main` for group 0, `g{g}` otherwise.
pub fn default_lineage(group: u32) -> String {
    if group == 0 {
        "main".to_string()
    } else {
        format!("g{group}")
    }
}

#[derive(Debug, Clone)]
pub struct GroupConfig {
    pub lineage: String,
    pub scheme: SamplingScheme,
    pub hyper: HyperParams,
    pub seed_params: ParamBlob,
    /// Plays only against the current model of this group (exploiter role).
    pub opponent_group: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct LeagueConfig {
    pub groups: Vec<GroupConfig>,
    pub k_factor: f64,
    pub initial_elo: f64,
    pub perturb_hyper: bool,
    pub seed: u64,
    /// Opponent slots per game (n_agents − 1).
    pub n_opponents: usize,
    /// League summaries are appended here after every period rollover.
    pub summary_path: Option<PathBuf>,
}

impl LeagueConfig {
    pub fn single(group: GroupConfig, seed: u64) -> Self {
        LeagueConfig {
            groups: vec![group],
            k_factor: DEFAULT_K_FACTOR,
            initial_elo: DEFAULT_INITIAL_ELO,
            perturb_hyper: false,
            seed,
            n_opponents: 1,
            summary_path: None,
        }
    }
}

struct GroupState {
    cfg: GroupConfig,
    game_mgr: Box<dyn GameMgr>,
    generation: u32,
    current: Option<String>,
    learner_task_id: u64,
}

struct Pending {
    learning_key: String,
    opponents: Vec<String>,
}

struct State {
    groups: Vec<GroupState>,
    payoff: PayoffMatrix,
    frozen: Vec<String>,
    pending: HashMap<u64, Pending>,
    next_task_id: u64,
    rng: ChaCha8Rng,
    hyper: HyperMgr,
    summaries_written: u64,
    periods_ended: u64,
    tasks_issued: u64,
    outcomes_reported: u64,
}

pub struct LeagueMgr {
    state: Mutex<State>,
    pool: Arc<dyn ModelPoolApi>,
    initial_elo: f64,
    n_opponents: usize,
    summary_path: Option<PathBuf>,
}

impl LeagueMgr {
    pub fn new(cfg: LeagueConfig, pool: Arc<dyn ModelPoolApi>) -> Result<Self> {
        if cfg.groups.is_empty() {
            return Err(Error::InvalidArgument("at least one learner group".into()));
        }
        if cfg.n_opponents == 0 {
            return Err(Error::InvalidArgument("n_opponents must be >= 1".into()));
        }
        let n = cfg.groups.len() as u32;
        for (i, g) in cfg.groups.iter().enumerate() {
            g.scheme.validate()?;
            g.hyper.validate()?;
            if let Some(o) = g.opponent_group {
                if o >= n || o == i as u32 {
                    return Err(Error::InvalidArgument(format!(
                        "group {i}: invalid opponent_group {o}"
                    )));
                }
            }
        }
        let groups = cfg
            .groups
            .into_iter()
            .map(|g| GroupState {
                game_mgr: Box::new(SchemeGameMgr(g.scheme)),
                cfg: g,
                generation: 0,
                current: None,
                learner_task_id: 0,
            })
            .collect();
        Ok(LeagueMgr {
            state: Mutex::new(State {
                groups,
                payoff: PayoffMatrix::new(cfg.k_factor),
                frozen: Vec::new(),
                pending: HashMap::new(),
                next_task_id: 1,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed),
                hyper: HyperMgr::new(cfg.perturb_hyper),
                summaries_written: 0,
                periods_ended: 0,
                tasks_issued: 0,
                outcomes_reported: 0,
            }),
            pool,
            initial_elo: cfg.initial_elo,
            n_opponents: cfg.n_opponents,
            summary_path: cfg.summary_path,
        })
    }

    /// Replaces the opponent-selection policy of one group.
    pub fn set_game_mgr(&self, group: u32, game_mgr: Box<dyn GameMgr>) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        let g = st
            .groups
            .get_mut(group as usize)
            .ok_or(Error::UnknownGroup(group))?;
        g.game_mgr = game_mgr;
        Ok(())
    }

    pub fn payoff(&self) -> PayoffMatrix {
        self.state.lock().unwrap().payoff.clone()
    }

    pub fn frozen_keys(&self) -> Vec<String> {
        self.state.lock().unwrap().frozen.clone()
    }

    pub fn current_key(&self, group: u32) -> Option<String> {
        let st = self.state.lock().unwrap();
        st.groups.get(group as usize).and_then(|g| g.current.clone())
    }

    pub fn periods_ended(&self) -> u64 {
        self.state.lock().unwrap().periods_ended
    }

    fn take_task_id(st: &mut State) -> u64 {
        let id = st.next_task_id;
        st.next_task_id += 1;
        id
    }

    fn hyper_for(st: &State, group: usize, key: &str) -> HyperParams {
        st.hyper.get(key).unwrap_or(st.groups[group].cfg.hyper)
    }

    fn learner_task(st: &State, group: usize) -> Result<Task> {
        let g = &st.groups[group];
        let key = g.current.clone().ok_or(Error::NoPeriod(group as u32))?;
        Ok(Task {
            task_id: g.learner_task_id,
            learner_group: group as u32,
            hyperparams: Self::hyper_for(st, group, &key),
            learning_model_key: key,
            opponent_model_keys: Vec::new(),
        })
    }

    /// Deterministic, line-oriented league summary (payoff matrix and Elo table).
    pub fn summary(&self) -> String {
        let st = self.state.lock().unwrap();
        Self::render_summary(&st)
    }

    fn render_summary(st: &State) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "periods_ended: {}\ntasks_issued: {}\noutcomes_reported: {}\n",
            st.periods_ended, st.tasks_issued, st.outcomes_reported
        ));
        for (i, g) in st.groups.iter().enumerate() {
            s.push_str(&format!(
                "group {i}: lineage={} scheme={} current={}\n",
                g.cfg.lineage,
                g.game_mgr.name(),
                g.current.as_deref().unwrap_or("-")
            ));
        }
        s.push_str(&st.payoff.render());
        s
    }

    fn append_summary(&self, st: &mut State) {
        let Some(path) = &self.summary_path else {
            return;
        };
        st.summaries_written += 1;
        let text = format!(
            "# league summary {}\n{}# end\n",
            st.summaries_written,
            Self::render_summary(st)
        );
        let res = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(text.as_bytes()));
        if let Err(e) = res {
            log::warn!("writing league summary to {}: {e}", path.display());
        }
    }

    /// Writes a final summary block (used at shutdown).
    pub fn flush_summary(&self) {
        let mut st = self.state.lock().unwrap();
        self.append_summary(&mut st);
    }
}

impl LeagueApi for LeagueMgr {
    fn request_actor_task(&self, _actor_id: u32, group: u32) -> Result<Task> {
        let mut st = self.state.lock().unwrap();
        let gi = group as usize;
        if gi >= st.groups.len() {
            return Err(Error::UnknownGroup(group));
        }
        let current = st.groups[gi].current.clone().ok_or(Error::NoActiveGroup)?;
        let mut opponents = Vec::with_capacity(self.n_opponents);
        if let Some(og) = st.groups[gi].cfg.opponent_group {
            let target = st.groups[og as usize]
                .current
                .clone()
                .ok_or(Error::NoActiveGroup)?;
            opponents.resize(self.n_opponents, target);
        } else {
            let State {
                groups,
                payoff,
                frozen,
                rng,
                ..
            } = &mut *st;
            for _ in 0..self.n_opponents {
                let key = if frozen.is_empty() {
                    current.clone()
                } else {
                    groups[gi].game_mgr.sample(payoff, &current, frozen, rng)?
                };
                opponents.push(key);
            }
        }
        let task_id = Self::take_task_id(&mut st);
        st.pending.insert(
            task_id,
            Pending {
                learning_key: current.clone(),
                opponents: opponents.clone(),
            },
        );
        st.tasks_issued += 1;
        Ok(Task {
            task_id,
            learner_group: group,
            hyperparams: Self::hyper_for(&st, gi, &current),
            learning_model_key: current,
            opponent_model_keys: opponents,
        })
    }

    fn report_outcome(&self, task_id: u64, outcomes: &[Outcome]) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        let Some(p) = st.pending.get(&task_id) else {
            return Err(if task_id < st.next_task_id && task_id > 0 {
                Error::DuplicateReport(task_id)
            } else {
                Error::UnknownTask(task_id)
            });
        };
        if outcomes.len() != p.opponents.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "task {task_id} has {} slots, got {} outcomes",
                p.opponents.len() + 1,
                outcomes.len()
            )));
        }
        let p = st.pending.remove(&task_id).unwrap();
        for opp in &p.opponents {
            st.payoff.record(&p.learning_key, opp, outcomes[0])?;
        }
        st.outcomes_reported += 1;
        Ok(())
    }

    fn request_learner_task(&self, group: u32, rank: u32) -> Result<Task> {
        let mut st = self.state.lock().unwrap();
        let gi = group as usize;
        if gi >= st.groups.len() {
            return Err(Error::UnknownGroup(group));
        }
        if rank != 0 {
            return Err(Error::Protocol(format!(
                "only rank 0 requests learner tasks (got rank {rank})"
            )));
        }
        if st.groups[gi].current.is_none() {
            let key = model_key(&st.groups[gi].cfg.lineage, 0);
            let hp = st.groups[gi].cfg.hyper;
            let record = ModelRecord::new(&key, st.groups[gi].cfg.seed_params.clone(), hp);
            match self.pool.put_model(record) {
                Ok(()) => {}
                // a restarted league finds its seed model already in the pool
                Err(Error::ModelFrozen(_)) => {}
                Err(e) => return Err(e),
            }
            st.hyper.set(&key, hp);
            st.payoff.add_key(&key, self.initial_elo);
            let id = Self::take_task_id(&mut st);
            let g = &mut st.groups[gi];
            g.current = Some(key);
            g.learner_task_id = id;
            self.append_summary(&mut st);
        }
        Self::learner_task(&st, gi)
    }

    fn end_learning_period(&self, group: u32) -> Result<Task> {
        let mut st = self.state.lock().unwrap();
        let gi = group as usize;
        if gi >= st.groups.len() {
            return Err(Error::UnknownGroup(group));
        }
        let old_key = st.groups[gi].current.clone().ok_or(Error::NoPeriod(group))?;
        self.pool.freeze_model(&old_key)?;
        let frozen = self.pool.get_model(&old_key)?;

        let old_hp = Self::hyper_for(&st, gi, &old_key);
        let State { hyper, rng, .. } = &mut *st;
        let new_hp = hyper.successor(&old_hp, rng);
        let generation = st.groups[gi].generation + 1;
        let new_key = model_key(&st.groups[gi].cfg.lineage, generation);
        let mut record = ModelRecord::new(&new_key, frozen.params.clone(), new_hp);
        record.parent_key = Some(old_key.clone());
        self.pool.put_model(record)?;

        let elo = st.payoff.elo(&old_key).unwrap_or(self.initial_elo);
        st.payoff.add_key(&new_key, elo);
        st.hyper.set(&new_key, new_hp);
        st.frozen.push(old_key);
        st.periods_ended += 1;
        let id = Self::take_task_id(&mut st);
        let g = &mut st.groups[gi];
        g.generation = generation;
        g.current = Some(new_key);
        g.learner_task_id = id;
        self.append_summary(&mut st);
        Self::learner_task(&st, gi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_pool::ModelPool;
    use crate::policy::{PolicyFamily, PolicyShape};

    fn league(kind: SchemeKind) -> (LeagueMgr, Arc<ModelPool>) {
        let pool = Arc::new(ModelPool::default());
        let seed = ParamBlob::zeros(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 3)).unwrap();
        let cfg = LeagueConfig::single(
            GroupConfig {
                lineage: "main".into(),
                scheme: SamplingScheme::of(kind),
                hyper: HyperParams::default(),
                seed_params: seed,
                opponent_group: None,
            },
            1,
        );
        (LeagueMgr::new(cfg, pool.clone()).unwrap(), pool)
    }

    #[test]
    fn actor_before_learner_has_no_group() {
        let (l, _) = league(SchemeKind::SelfPlayLatest);
        assert!(matches!(l.request_actor_task(0, 0), Err(Error::NoActiveGroup)));
        assert!(matches!(l.request_actor_task(0, 3), Err(Error::UnknownGroup(3))));
        assert!(matches!(l.end_learning_period(0), Err(Error::NoPeriod(0))));
    }

    #[test]
    fn singleton_pool_is_self_play() {
        let (l, _) = league(SchemeKind::UniformRecentK);
        let lt = l.request_learner_task(0, 0).unwrap();
        assert_eq!(lt.learning_model_key, "main:0000");
        let t = l.request_actor_task(0, 0).unwrap();
        assert_eq!(t.learning_model_key, "main:0000");
        assert_eq!(t.opponent_model_keys, vec!["main:0000"]);
        assert_eq!(l.payoff().len(), 1);
    }

    #[test]
    fn rank_nonzero_rejected() {
        let (l, _) = league(SchemeKind::SelfPlayLatest);
        assert!(matches!(l.request_learner_task(0, 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn outcome_reports_and_duplicates() {
        let (l, _) = league(SchemeKind::SelfPlayLatest);
        l.request_learner_task(0, 0).unwrap();
        l.end_learning_period(0).unwrap();
        let t = l.request_actor_task(0, 0).unwrap();
        assert_eq!(t.learning_model_key, "main:0001");
        assert_eq!(t.opponent_model_keys, vec!["main:0001"]);
        l.report_outcome(t.task_id, &[Outcome::Win, Outcome::Loss]).unwrap();
        let before = l.payoff();
        assert!(matches!(
            l.report_outcome(t.task_id, &[Outcome::Win, Outcome::Loss]),
            Err(Error::DuplicateReport(_))
        ));
        assert_eq!(l.payoff(), before);
        assert!(matches!(
            l.report_outcome(999, &[Outcome::Win, Outcome::Loss]),
            Err(Error::UnknownTask(999))
        ));
    }

    #[test]
    fn periods_grow_the_pool_with_lineage() {
        let (l, pool) = league(SchemeKind::Pfsp);
        l.request_learner_task(0, 0).unwrap();
        for g in 1..=5u32 {
            let before = pool.len();
            let t = l.end_learning_period(0).unwrap();
            assert_eq!(t.learning_model_key, model_key("main", g));
            assert_eq!(pool.len(), before + 1);
            let rec = pool.get(&t.learning_model_key).unwrap();
            assert_eq!(rec.parent_key, Some(model_key("main", g - 1)));
            assert!(pool.get(&model_key("main", g - 1)).unwrap().frozen);
        }
        assert_eq!(l.payoff().len(), 6);
        let t = l.request_actor_task(0, 0).unwrap();
        assert!(l.frozen_keys().contains(&t.opponent_model_keys[0]));
    }
}
