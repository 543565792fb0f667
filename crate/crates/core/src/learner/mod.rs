//! Learner group: M_L shards sharing one task, each with its own replay memory, stepping in
//! lock-step through an in-process allreduce. Rank 0 talks to the league and publishes.

pub mod collective;
pub mod replay;
pub mod stats;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{LeagueApi, ModelPoolApi, SegmentSink};
use crate::error::{Error, Result};
use crate::league::Task;
use crate::model_pool::ModelRecord;
use crate::policy::{self, ParamBlob};
use crate::rl::{self, Algo, HyperParams, LossSample, LossStats, PolicyObjective};
use crate::rpc::with_backoff;
use crate::segment::TrajectorySegment;

pub use collective::{allreduce_mean, mean_in_order, Collective};
pub use replay::{IngestStatus, ReplayMem};
pub use stats::{Counters, MetricsLine, ThroughputStats};

/// Advantages and value targets for the valid prefix of one segment.
pub fn segment_targets(
    seg: &TrajectorySegment,
    params: &ParamBlob,
    hp: &HyperParams,
    algo: Algo,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = seg.valid_len();
    let steps = &seg.steps[..n];
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = steps.iter().map(|s| s.value_est).collect();
    let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
    match algo {
        Algo::Ppo => {
            let adv = rl::gae_advantages(&rewards, &values, seg.bootstrap_value, &dones, hp.gamma, hp.lam)?;
            let targets = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
            Ok((adv, targets))
        }
        Algo::VTrace => {
            let behavior: Vec<f64> = steps.iter().map(|s| s.behavior_logp).collect();
            let mut target = Vec::with_capacity(n);
            for s in steps {
                let d = policy::action_distribution(params, &s.obs)?;
                target.push(d.log_prob(s.action as usize));
            }
            let out = rl::vtrace_targets(
                &behavior,
                &target,
                &rewards,
                &values,
                seg.bootstrap_value,
                &dones,
                hp.gamma,
                hp.rho_bar,
                hp.c_bar,
            )?;
            Ok((out.pg_adv, out.vs))
        }
    }
}

/// Loss gradient over the valid steps of a minibatch of segments.
pub fn minibatch_grad(
    params: &ParamBlob,
    teacher: Option<&ParamBlob>,
    batch: &[Arc<TrajectorySegment>],
    hp: &HyperParams,
    algo: Algo,
) -> Result<(Vec<f64>, LossStats)> {
    let mut targets = Vec::with_capacity(batch.len());
    for seg in batch {
        targets.push(segment_targets(seg, params, hp, algo)?);
    }
    let mut samples = Vec::new();
    for (seg, (adv, vt)) in batch.iter().zip(&targets) {
        for (i, s) in seg.steps[..seg.valid_len()].iter().enumerate() {
            samples.push(LossSample {
                obs: &s.obs,
                action: s.action as usize,
                behavior_logp: s.behavior_logp,
                advantage: adv[i],
                value_target: vt[i],
            });
        }
    }
    let objective = match algo {
        Algo::Ppo => PolicyObjective::Clipped,
        Algo::VTrace => PolicyObjective::ImportanceWeighted,
    };
    let (_, grad, stats) = rl::loss_and_grad(params, teacher, &samples, hp, objective)?;
    Ok((grad, stats))
}

/// Single-shard update: gradient then SGD.
pub fn train_step(
    params: &ParamBlob,
    teacher: Option<&ParamBlob>,
    batch: &[Arc<TrajectorySegment>],
    hp: &HyperParams,
    algo: Algo,
) -> Result<(ParamBlob, LossStats)> {
    let (grad, stats) = minibatch_grad(params, teacher, batch, hp, algo)?;
    Ok((rl::sgd_step(params, &grad, hp.learning_rate)?, stats))
}

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub group: u32,
    pub num_shards: usize,
    pub algo: Algo,
    /// Segments per shard per update step.
    pub batch_size: usize,
    pub max_reuse: u32,
    pub replay_capacity: usize,
    pub publish_interval: u64,
    pub period_steps: u64,
    /// Stop after this many learning periods have ended.
    pub total_periods: Option<u64>,
    /// Pushes return only once the step they enable has finished (lock-step mode).
    pub sync_push: bool,
    pub seed: u64,
    /// Artificial extra time per update step.
    pub train_delay: Duration,
    pub teacher_key: Option<String>,
    pub metrics_path: Option<PathBuf>,
    pub metrics_interval: Duration,
    /// Record every published blob checksum and sampled batch (rank 0).
    pub audit: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            group: 0,
            num_shards: 1,
            algo: Algo::Ppo,
            batch_size: 32,
            max_reuse: 1,
            replay_capacity: 4096,
            publish_interval: 10,
            period_steps: 1000,
            total_periods: None,
            sync_push: false,
            seed: 0,
            train_delay: Duration::ZERO,
            teacher_key: None,
            metrics_path: None,
            metrics_interval: Duration::from_secs(1),
            audit: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.num_shards == 0 {
            return bad("num_shards must be >= 1");
        }
        if self.batch_size == 0 || self.max_reuse == 0 || self.replay_capacity == 0 {
            return bad("batch_size, max_reuse and replay_capacity must be >= 1");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity must be >= batch_size");
        }
        if self.publish_interval == 0 || self.period_steps == 0 {
            return bad("publish_interval and period_steps must be >= 1");
        }
        if self.sync_push && self.max_reuse != 1 {
            return bad("sync_push requires max_reuse = 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Ctrl {
    Continue,
    NewTask(Box<Task>),
    Stop,
}

/// One shard's input to one update step.
#[derive(Debug, Clone)]
pub struct AuditStep {
    pub rank: usize,
    pub step: u64,
    pub key: String,
    pub hyper: HyperParams,
    pub batch: Vec<Arc<TrajectorySegment>>,
}

/// Audit trail kept when `LearnerConfig::audit` is set.
#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    /// (update step, blob) for every publish.
    pub published: Vec<(u64, ParamBlob)>,
    /// Every shard's sampled batch; order across ranks within a step is arbitrary.
    pub steps: Vec<AuditStep>,
}

impl AuditLog {
    /// Batches of `step` ordered by rank.
    pub fn batches_at(&self, step: u64) -> Vec<&AuditStep> {
        let mut v: Vec<&AuditStep> = self.steps.iter().filter(|s| s.step == step).collect();
        v.sort_by_key(|s| s.rank);
        v
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LearnerSummary {
    pub update_steps: u64,
    pub periods: u64,
    pub publishes: u64,
    pub counters: Counters,
}

struct Shared {
    cfg: LearnerConfig,
    league: Arc<dyn LeagueApi>,
    pool: Arc<dyn ModelPoolApi>,
    replays: Vec<Arc<ReplayMem>>,
    grads: Collective<Vec<f64>>,
    ctrl: Collective<Ctrl>,
    steps: AtomicU64,
    periods: AtomicU64,
    publishes: AtomicU64,
    stop: AtomicBool,
    audit: Mutex<AuditLog>,
    loss: Mutex<Option<LossStats>>,
}

impl Shared {
    fn shutdown(&self, reason: Option<&str>) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(r) = reason {
            self.grads.abort(r);
            self.ctrl.abort(r);
        }
        for r in &self.replays {
            r.shutdown();
        }
    }

    fn publish(&self, template: &ModelRecord, params: &ParamBlob, step: u64) -> Result<()> {
        let mut rec = template.clone();
        rec.params = params.clone();
        with_backoff(8, Duration::from_millis(20), || self.pool.put_model(rec.clone()))?;
        self.publishes.fetch_add(1, Ordering::SeqCst);
        if self.cfg.audit {
            self.audit.lock().unwrap().published.push((step, params.clone()));
        }
        Ok(())
    }
}

/// Sink feeding one shard's replay memory.
pub struct ShardSink {
    replay: Arc<ReplayMem>,
    sync: bool,
    batch_size: usize,
}

impl SegmentSink for ShardSink {
    fn push_segment(&self, segment: TrajectorySegment) -> Result<()> {
        let status = self.replay.ingest(segment)?;
        if self.sync && status == IngestStatus::Stored {
            self.replay.wait_idle(self.batch_size)?;
        }
        Ok(())
    }
}

pub struct LearnerGroup {
    shared: Arc<Shared>,
    handles: Vec<JoinHandle<Result<()>>>,
    metrics: Option<JoinHandle<()>>,
}

impl LearnerGroup {
    pub fn start(
        cfg: LearnerConfig,
        league: Arc<dyn LeagueApi>,
        pool: Arc<dyn ModelPoolApi>,
    ) -> Result<LearnerGroup> {
        cfg.validate()?;
        let mut replays = Vec::new();
        for _ in 0..cfg.num_shards {
            let r = ReplayMem::new(cfg.replay_capacity, cfg.max_reuse)?;
            if cfg.audit {
                r.enable_audit();
            }
            replays.push(Arc::new(r));
        }
        let shared = Arc::new(Shared {
            grads: Collective::new(cfg.num_shards),
            ctrl: Collective::new(cfg.num_shards),
            cfg,
            league,
            pool,
            replays,
            steps: AtomicU64::new(0),
            periods: AtomicU64::new(0),
            publishes: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            audit: Mutex::new(AuditLog::default()),
            loss: Mutex::new(None),
        });
        let mut handles = Vec::new();
        for rank in 0..shared.cfg.num_shards {
            let sh = shared.clone();
            let h = thread::Builder::new()
                .name(format!("learner-g{}-r{rank}", sh.cfg.group))
                .spawn(move || {
                    let res = run_shard(rank, &sh);
                    match &res {
                        Ok(()) => sh.shutdown(None),
                        Err(e) => {
                            log::error!("learner group {} rank {rank}: {e}", sh.cfg.group);
                            sh.shutdown(Some(&format!("rank {rank}: {e}")));
                        }
                    }
                    res
                })?;
            handles.push(h);
        }
        let metrics = match shared.cfg.metrics_path.clone() {
            Some(path) => {
                let sh = shared.clone();
                Some(thread::spawn(move || metrics_loop(&sh, path)))
            }
            None => None,
        };
        Ok(LearnerGroup {
            shared,
            handles,
            metrics,
        })
    }

    pub fn sink(&self, rank: usize) -> Arc<dyn SegmentSink> {
        Arc::new(ShardSink {
            replay: self.shared.replays[rank].clone(),
            sync: self.shared.cfg.sync_push,
            batch_size: self.shared.cfg.batch_size,
        })
    }

    pub fn replay(&self, rank: usize) -> Arc<ReplayMem> {
        self.shared.replays[rank].clone()
    }

    pub fn num_shards(&self) -> usize {
        self.shared.cfg.num_shards
    }

    pub fn counters(&self) -> Counters {
        let mut c = Counters::default();
        for r in &self.shared.replays {
            c.add(&r.counters());
        }
        c.update_steps = self.shared.steps.load(Ordering::SeqCst);
        c
    }

    /// Starts a new measurement epoch on every shard.
    pub fn new_epoch(&self) {
        for r in &self.shared.replays {
            r.new_epoch();
        }
    }

    pub fn update_steps(&self) -> u64 {
        self.shared.steps.load(Ordering::SeqCst)
    }

    pub fn periods(&self) -> u64 {
        self.shared.periods.load(Ordering::SeqCst)
    }

    pub fn last_loss(&self) -> Option<LossStats> {
        *self.shared.loss.lock().unwrap()
    }

    pub fn audit(&self) -> AuditLog {
        self.shared.audit.lock().unwrap().clone()
    }

    pub fn is_finished(&self) -> bool {
        self.handles.iter().all(|h| h.is_finished())
    }

    /// Requests shutdown; running steps finish, blocked calls return `Shutdown`.
    pub fn stop(&self) {
        self.shared.shutdown(None);
    }

    /// Waits for every shard; returns the first shard error, if any.
    pub fn join(mut self) -> Result<LearnerSummary> {
        let mut first_err = None;
        for h in self.handles.drain(..) {
            match h.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
                Err(_) => {
                    if first_err.is_none() {
                        first_err = Some(Error::Aborted("learner shard panicked".into()));
                    }
                }
            }
        }
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(m) = self.metrics.take() {
            let _ = m.join();
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok(LearnerSummary {
            update_steps: self.shared.steps.load(Ordering::SeqCst),
            periods: self.shared.periods.load(Ordering::SeqCst),
            publishes: self.shared.publishes.load(Ordering::SeqCst),
            counters: self.counters(),
        })
    }
}

fn metrics_loop(sh: &Shared, path: PathBuf) {
    let file = OpenOptions::new().create(true).append(true).open(&path);
    let mut file = match file {
        Ok(f) => f,
        Err(e) => {
            log::warn!("cannot open metrics log {}: {e}", path.display());
            return;
        }
    };
    let snapshot = || {
        let mut c = Counters::default();
        for r in &sh.replays {
            c.add(&r.counters());
        }
        c.update_steps = sh.steps.load(Ordering::SeqCst);
        c
    };
    let mut prev = snapshot();
    let mut t0 = Instant::now();
    let tick = Duration::from_millis(20);
    loop {
        let mut waited = Duration::ZERO;
        while waited < sh.cfg.metrics_interval && !sh.stop.load(Ordering::SeqCst) {
            thread::sleep(tick);
            waited += tick;
        }
        let now = snapshot();
        let stats = ThroughputStats::between(&prev, &now, t0.elapsed());
        let line = MetricsLine::now(sh.cfg.group, &stats);
        let _ = writeln!(file, "{line}");
        prev = now;
        t0 = Instant::now();
        if sh.stop.load(Ordering::SeqCst) {
            return;
        }
    }
}

fn run_shard(rank: usize, sh: &Shared) -> Result<()> {
    let cfg = &sh.cfg;
    let replay = &sh.replays[rank];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((rank as u64 + 1) << 32) ^ cfg.group as u64);

    // Rank 0 fetches the task and shares it.
    let first = if rank == 0 {
        let t = with_backoff(50, Duration::from_millis(20), || {
            sh.league.request_learner_task(cfg.group, 0)
        })?;
        Ctrl::NewTask(Box::new(t))
    } else {
        Ctrl::Continue
    };
    let Ctrl::NewTask(mut task) = sh.ctrl.all_gather(rank, first)?[0].clone() else {
        return Err(Error::Protocol("rank 0 did not share a task".into()));
    };
    let mut template = (*with_backoff(50, Duration::from_millis(20), || {
        sh.pool.get_model(&task.learning_model_key)
    })?)
    .clone();
    let mut params = template.params.clone();
    let mut hp = task.hyperparams;
    let teacher = match &cfg.teacher_key {
        Some(k) => Some(sh.pool.get_model(k)?.params.clone()),
        None => None,
    };
    replay.set_current_key(&task.learning_model_key);

    let mut step: u64 = 0;
    let mut in_period: u64 = 0;
    let mut last_published: Option<u64> = None;
    loop {
        let batch = match replay.sample(cfg.batch_size, &mut rng) {
            Ok(b) => b,
            Err(Error::Shutdown) => return Ok(()),
            Err(e) => return Err(e),
        };
        if !cfg.train_delay.is_zero() {
            thread::sleep(cfg.train_delay);
        }
        let (grad, loss) = minibatch_grad(&params, teacher.as_ref(), &batch, &hp, cfg.algo)
            .map_err(|e| Error::Aborted(format!("train step {} on {}: {e}", step + 1, task.learning_model_key)))?;
        let avg = match allreduce_mean(&sh.grads, rank, grad) {
            Ok(g) => g,
            Err(Error::Aborted(_)) if sh.stop.load(Ordering::SeqCst) => return Ok(()),
            Err(e) => return Err(e),
        };
        params = rl::sgd_step(&params, &avg, hp.learning_rate)?;
        step += 1;
        in_period += 1;
        if cfg.audit {
            sh.audit.lock().unwrap().steps.push(AuditStep {
                rank,
                step,
                key: task.learning_model_key.clone(),
                hyper: hp,
                batch: batch.clone(),
            });
        }
        if rank == 0 {
            sh.steps.store(step, Ordering::SeqCst);
            *sh.loss.lock().unwrap() = Some(loss);
            if step % cfg.publish_interval == 0 {
                sh.publish(&template, &params, step)?;
                last_published = Some(step);
            }
        }

        if in_period == cfg.period_steps {
            let ctrl = if rank == 0 {
                if last_published != Some(step) {
                    sh.publish(&template, &params, step)?;
                }
                let next = sh.league.end_learning_period(cfg.group)?;
                let periods = sh.periods.fetch_add(1, Ordering::SeqCst) + 1;
                log::info!(
                    "group {} ended period {periods} at step {step}; next model {}",
                    cfg.group,
                    next.learning_model_key
                );
                if cfg.total_periods.is_some_and(|t| periods >= t) {
                    Ctrl::Stop
                } else {
                    Ctrl::NewTask(Box::new(next))
                }
            } else {
                Ctrl::Continue
            };
            let decided = match sh.ctrl.all_gather(rank, ctrl) {
                Ok(v) => v[0].clone(),
                Err(Error::Aborted(_)) if sh.stop.load(Ordering::SeqCst) => return Ok(()),
                Err(e) => return Err(e),
            };
            match decided {
                Ctrl::Stop => {
                    // Shut down before releasing the step so a lock-step push that triggered
                    // it fails instead of letting its actor play past the last period.
                    sh.shutdown(None);
                    replay.finish_step(step);
                    return Ok(());
                }
                Ctrl::NewTask(t) => {
                    task = t;
                    template = (*sh.pool.get_model(&task.learning_model_key)?).clone();
                    hp = task.hyperparams;
                    replay.set_current_key(&task.learning_model_key);
                    in_period = 0;
                }
                Ctrl::Continue => return Err(Error::Protocol("period end without a task".into())),
            }
        }
        replay.finish_step(step);
    }
}
