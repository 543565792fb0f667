//! Rollout worker.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{InferenceApi, LeagueApi, ModelPoolApi, SegmentSink};
use crate::env::{make_env, EnvSpec, MultiAgentEnv, Outcome};
use crate::error::{Error, Result};
use crate::league::Task;
use crate::model_pool::ModelRecord;
use crate::policy::{self, ActionDistribution, ParamBlob};
use crate::rpc::with_backoff;
use crate::segment::{segment_episode, Step, TrajectorySegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    Local,
    Remote,
}

impl InferenceMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(InferenceMode::Local),
            "remote" => Ok(InferenceMode::Remote),
            _ => Err(Error::InvalidArgument(format!("unknown inference mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActorConfig {
    pub actor_id: u32,
    pub group: u32,
    pub env: EnvSpec,
    pub unroll_len: usize,
    /// Pull fresh parameters every this many episodes.
    pub param_refresh_interval: u64,
    pub inference: InferenceMode,
    pub seed: u64,
    pub max_episodes: Option<u64>,
    /// First segment_seq; a restarted actor must continue above its predecessor.
    pub seq_base: u64,
    /// Simulated environment cost per step.
    pub env_step_delay: Duration,
    pub retry_attempts: u32,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig {
            actor_id: 0,
            group: 0,
            env: EnvSpec::named("rps", 0),
            unroll_len: 1,
            param_refresh_interval: 1,
            inference: InferenceMode::Local,
            seed: 0,
            max_episodes: None,
            seq_base: 0,
            env_step_delay: Duration::ZERO,
            retry_attempts: 12,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unroll_len == 0 {
            return Err(Error::InvalidArgument("unroll_len must be >= 1".into()));
        }
        if self.param_refresh_interval == 0 {
            return Err(Error::InvalidArgument("param_refresh_interval must be >= 1".into()));
        }
        self.env.validate()
    }
}

/// Live counters, readable while the actor runs.
#[derive(Debug, Default)]
pub struct ActorStats {
    pub episodes: AtomicU64,
    pub segments: AtomicU64,
    pub frames: AtomicU64,
    pub reports: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActorReport {
    pub episodes: u64,
    pub segments: u64,
    pub frames: u64,
    pub reports: u64,
    pub next_seq: u64,
}

pub struct Actor {
    cfg: ActorConfig,
    league: Arc<dyn LeagueApi>,
    pool: Arc<dyn ModelPoolApi>,
    sink: Arc<dyn SegmentSink>,
    infer: Option<Arc<dyn InferenceApi>>,
    stop: Arc<AtomicBool>,
    stats: Arc<ActorStats>,
    env: Box<dyn MultiAgentEnv>,
    rng: ChaCha8Rng,
    cache: HashMap<String, Arc<ModelRecord>>,
    next_seq: u64,
}

/// What the learning agent did at one step, before the reward is known.
struct Acted {
    action: usize,
    logp: f64,
    value: f64,
    version: u64,
}

impl Actor {
    pub fn new(
        cfg: ActorConfig,
        league: Arc<dyn LeagueApi>,
        pool: Arc<dyn ModelPoolApi>,
        sink: Arc<dyn SegmentSink>,
        infer: Option<Arc<dyn InferenceApi>>,
    ) -> Result<Actor> {
        cfg.validate()?;
        if cfg.inference == InferenceMode::Remote && infer.is_none() {
            return Err(Error::InvalidArgument("remote inference needs an inference endpoint".into()));
        }
        let mut env_spec = cfg.env.clone();
        env_spec.seed = cfg.env.seed ^ (cfg.actor_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let env = make_env(&env_spec)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((cfg.actor_id as u64) << 20) ^ 0xAC70);
        Ok(Actor {
            next_seq: cfg.seq_base,
            cfg,
            league,
            pool,
            sink,
            infer,
            stop: Arc::new(AtomicBool::new(false)),
            stats: Arc::new(ActorStats::default()),
            env,
            rng,
            cache: HashMap::new(),
        })
    }

    /// Flag checked between episodes; setting it ends `run` after the current episode.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn set_stop_handle(&mut self, stop: Arc<AtomicBool>) {
        self.stop = stop;
    }

    pub fn stats(&self) -> Arc<ActorStats> {
        self.stats.clone()
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn retry<T>(&self, f: impl FnMut() -> Result<T>) -> Result<T> {
        with_backoff(self.cfg.retry_attempts, Duration::from_millis(20), f)
    }

    /// Waits for a task; `None` once stopped.
    fn next_task(&self) -> Result<Option<Task>> {
        loop {
            if self.stopped() {
                return Ok(None);
            }
            match self.retry(|| self.league.request_actor_task(self.cfg.actor_id, self.cfg.group)) {
                Ok(t) => return Ok(Some(t)),
                // No learner has started the group yet.
                Err(Error::NoActiveGroup) => thread::sleep(Duration::from_millis(10)),
                Err(Error::Shutdown) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    }

    fn model(&mut self, key: &str, refresh: bool) -> Result<Arc<ModelRecord>> {
        if let Some(r) = self.cache.get(key) {
            if r.frozen || !refresh {
                return Ok(r.clone());
            }
        }
        let r = self.retry(|| self.pool.get_model(key))?;
        self.cache.insert(key.to_string(), r.clone());
        Ok(r)
    }

    fn act_learner(&mut self, theta: &ModelRecord, obs: &[f64]) -> Result<Acted> {
        let (dist, value, version) = match self.cfg.inference {
            InferenceMode::Local => {
                let (d, v) = policy::evaluate(&theta.params, obs)?;
                (d, v, theta.version)
            }
            InferenceMode::Remote => {
                let inf = self.infer.as_ref().expect("checked in new");
                let r = self.retry(|| inf.infer(self.cfg.actor_id, obs))?;
                (r.dist, r.value, r.model_version)
            }
        };
        let (action, logp) = policy::sample_action(&dist, &mut self.rng);
        Ok(Acted {
            action,
            logp,
            value,
            version,
        })
    }

    fn push(&self, seg: TrajectorySegment) -> Result<()> {
        self.retry(|| self.sink.push_segment(seg.clone()))
    }

    /// Runs one episode. Returns `false` if the actor should stop.
    pub fn run_episode(&mut self) -> Result<bool> {
        let Some(task) = self.next_task()? else {
            return Ok(false);
        };
        let episode = self.stats.episodes.load(Ordering::SeqCst);
        let refresh = episode % self.cfg.param_refresh_interval == 0;
        let theta = self.model(&task.learning_model_key, refresh)?;
        let mut phis = Vec::with_capacity(task.opponent_model_keys.len());
        for k in &task.opponent_model_keys {
            phis.push(self.model(k, refresh)?);
        }
        let n_agents = self.env.n_agents();
        if phis.len() + 1 != n_agents {
            return Err(Error::ShapeMismatch(format!(
                "task has {} opponents for a {n_agents}-agent env",
                phis.len()
            )));
        }
        // Seats alternate by episode parity; `slot_of_seat[s]` is 0 for the learner.
        let learner_seat = (episode % n_agents as u64) as usize;
        let slot_of_seat: Vec<usize> = (0..n_agents)
            .map(|s| (s + n_agents - learner_seat) % n_agents)
            .collect();

        let mut obs = self.env.reset();
        let mut steps: Vec<Step> = Vec::new();
        let mut version;
        let outcomes_by_seat: Vec<Outcome> = loop {
            let mut actions = vec![0usize; n_agents];
            let mut acted = None;
            for seat in 0..n_agents {
                let slot = slot_of_seat[seat];
                if slot == 0 {
                    let a = self.act_learner(&theta, &obs[seat])?;
                    actions[seat] = a.action;
                    acted = Some(a);
                } else {
                    let d: ActionDistribution = policy::action_distribution(&phis[slot - 1].params, &obs[seat])?;
                    actions[seat] = policy::sample_action(&d, &mut self.rng).0;
                }
            }
            if !self.cfg.env_step_delay.is_zero() {
                thread::sleep(self.cfg.env_step_delay);
            }
            let res = self.env.step(&actions)?;
            let a = acted.expect("learner seat acted");
            version = a.version;
            steps.push(Step {
                obs: std::mem::take(&mut obs[learner_seat]),
                action: a.action as u32,
                reward: res.rewards[learner_seat],
                behavior_logp: a.logp,
                value_est: a.value,
                done: res.done,
                valid: true,
            });
            if res.done {
                break res
                    .info
                    .outcome
                    .ok_or_else(|| Error::Protocol("episode ended without an outcome".into()))?;
            }
            obs = res.observations;
        };

        let windows = segment_episode(&steps, self.cfg.unroll_len, 0.0);
        for w in windows {
            let seg = TrajectorySegment {
                actor_id: self.cfg.actor_id,
                model_key: task.learning_model_key.clone(),
                model_version: version,
                segment_seq: self.next_seq,
                steps: w.steps,
                bootstrap_value: w.bootstrap_value,
            };
            let frames = seg.valid_len() as u64;
            match self.push(seg) {
                Ok(()) => {}
                Err(Error::Shutdown) => return Ok(false),
                Err(e) => return Err(e),
            }
            self.next_seq += 1;
            self.stats.segments.fetch_add(1, Ordering::SeqCst);
            self.stats.frames.fetch_add(frames, Ordering::SeqCst);
        }

        let mut by_slot = vec![Outcome::Tie; n_agents];
        for (seat, o) in outcomes_by_seat.into_iter().enumerate() {
            by_slot[slot_of_seat[seat]] = o;
        }
        match self.retry(|| self.league.report_outcome(task.task_id, &by_slot)) {
            Ok(()) => {
                self.stats.reports.fetch_add(1, Ordering::SeqCst);
            }
            Err(Error::Shutdown) => return Ok(false),
            Err(e @ (Error::DuplicateReport(_) | Error::UnknownTask(_))) => {
                log::warn!("actor {}: outcome report rejected: {e}", self.cfg.actor_id);
            }
            Err(e) => return Err(e),
        }
        self.stats.episodes.fetch_add(1, Ordering::SeqCst);
        Ok(true)
    }

    /// Episode loop until stopped, `max_episodes` is reached or a service shuts down.
    pub fn run(&mut self) -> Result<ActorReport> {
        while !self.stopped() {
            if let Some(max) = self.cfg.max_episodes {
                if self.stats.episodes.load(Ordering::SeqCst) >= max {
                    break;
                }
            }
            if !self.run_episode()? {
                break;
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> ActorReport {
        ActorReport {
            episodes: self.stats.episodes.load(Ordering::SeqCst),
            segments: self.stats.segments.load(Ordering::SeqCst),
            frames: self.stats.frames.load(Ordering::SeqCst),
            reports: self.stats.reports.load(Ordering::SeqCst),
            next_seq: self.next_seq,
        }
    }
}

/// Evaluates one parameter set per agent slot and samples a joint action.
pub fn act<R: rand::Rng + ?Sized>(
    params: &[&ParamBlob],
    observations: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<(usize, f64)>> {
    if params.len() != observations.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter sets for {} agents",
            params.len(),
            observations.len()
        )));
    }
    let mut out = Vec::with_capacity(params.len());
    for (p, o) in params.iter().zip(observations) {
        let d = policy::action_distribution(p, o)?;
        out.push(policy::sample_action(&d, rng));
    }
    Ok(out)
}
