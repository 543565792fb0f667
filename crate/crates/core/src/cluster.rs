//! Whole-league runner inside one process: every service and worker is a thread, wired
//! through the in-process implementations of the service traits. Used by tests, the bench
//! and `league run --in-process`.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::actor::{Actor, ActorConfig, ActorReport, ActorStats, InferenceMode};
use crate::api::{InferenceApi, ModelPoolApi};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inf_server::{BatchPolicy, InfServer, ModelRef};
use crate::learner::{Counters, LearnerGroup, LearnerSummary, MetricsLine, ThroughputStats};
use crate::league::LeagueMgr;
use crate::model_pool::{ModelPool, PoolRole, ReplicatedPool};

/// Seed of actor `index` (global index over all groups and shards).
pub fn actor_seed(run_seed: u64, index: usize) -> u64 {
    run_seed.wrapping_mul(31).wrapping_add(index as u64 + 1)
}

/// Global actor index of actor `a` on shard `r` of group `g`.
pub fn actor_index(cfg: &RunConfig, g: u32, r: usize, a: usize) -> usize {
    (g as usize * cfg.shards + r) * cfg.actors + a
}

pub fn actor_config(cfg: &RunConfig, g: u32, index: usize) -> ActorConfig {
    ActorConfig {
        actor_id: index as u32,
        group: g,
        env: cfg.env.clone(),
        unroll_len: cfg.unroll_len,
        param_refresh_interval: cfg.refresh_interval,
        inference: cfg.inference,
        seed: actor_seed(cfg.seed, index),
        max_episodes: None,
        seq_base: 0,
        env_step_delay: cfg.env_step_delay,
        retry_attempts: 12,
    }
}

struct ActorThread {
    stop: Arc<AtomicBool>,
    stats: Arc<ActorStats>,
    handle: JoinHandle<Result<ActorReport>>,
}

pub struct Cluster {
    cfg: RunConfig,
    pub primary: Arc<ModelPool>,
    pub replicas: Vec<Arc<ModelPool>>,
    pub pool: Arc<dyn ModelPoolApi>,
    pub league: Arc<LeagueMgr>,
    learners: Vec<LearnerGroup>,
    infs: Vec<Arc<InfServer>>,
    actors: Vec<ActorThread>,
    started: Instant,
}

#[derive(Debug, Clone, Default)]
pub struct ClusterSummary {
    pub learners: Vec<LearnerSummary>,
    pub actors: Vec<ActorReport>,
    pub elapsed: Duration,
    pub league_summary: String,
}

impl Cluster {
    pub fn start(cfg: &RunConfig) -> Result<Cluster> {
        fs::create_dir_all(&cfg.run_dir)?;
        let primary = Arc::new(ModelPool::new(PoolRole::Primary));
        let mut replicas = vec![primary.clone()];
        for _ in 1..cfg.pool_replicas {
            let f = Arc::new(ModelPool::new(PoolRole::Follower));
            primary.add_follower(f.clone());
            replicas.push(f);
        }
        let pool: Arc<dyn ModelPoolApi> = Arc::new(ReplicatedPool::new(
            replicas.iter().map(|r| r.clone() as Arc<dyn ModelPoolApi>).collect(),
            cfg.seed ^ 0x9001,
        )?);
        let league = Arc::new(LeagueMgr::new(cfg.league_config()?, pool.clone())?);

        let mut learners = Vec::new();
        for g in 0..cfg.groups {
            learners.push(LearnerGroup::start(cfg.learner_config(g), league.clone(), pool.clone())?);
        }

        let mut infs = Vec::new();
        for g in 0..cfg.groups {
            for _ in 0..cfg.inf_servers {
                let mref = ModelRef::Latest(cfg.group_cfg[g as usize].lineage.clone());
                infs.push(Arc::new(InfServer::start(
                    BatchPolicy {
                        max_batch: cfg.max_batch,
                        flush_timeout: cfg.flush_timeout,
                    },
                    Some((pool.clone(), mref, cfg.inf_refresh)),
                )?));
            }
        }

        let mut actors = Vec::new();
        for g in 0..cfg.groups {
            for r in 0..cfg.shards {
                for a in 0..cfg.actors {
                    let index = actor_index(cfg, g, r, a);
                    let infer: Option<Arc<dyn InferenceApi>> = match cfg.inference {
                        InferenceMode::Local => None,
                        InferenceMode::Remote => {
                            let i = g as usize * cfg.inf_servers + index % cfg.inf_servers;
                            Some(infs[i].clone())
                        }
                    };
                    let mut actor = Actor::new(
                        actor_config(cfg, g, index),
                        league.clone(),
                        pool.clone(),
                        learners[g as usize].sink(r),
                        infer,
                    )?;
                    let stop = actor.stop_handle();
                    let stats = actor.stats();
                    let handle = thread::Builder::new()
                        .name(format!("actor-{index}"))
                        .spawn(move || actor.run())?;
                    actors.push(ActorThread { stop, stats, handle });
                }
            }
        }
        Ok(Cluster {
            cfg: cfg.clone(),
            primary,
            replicas,
            pool,
            league,
            learners,
            infs,
            actors,
            started: Instant::now(),
        })
    }

    pub fn learner(&self, group: u32) -> &LearnerGroup {
        &self.learners[group as usize]
    }

    pub fn learners_finished(&self) -> bool {
        self.learners.iter().all(|l| l.is_finished())
    }

    pub fn actor_frames(&self) -> u64 {
        self.actors.iter().map(|a| a.stats.frames.load(Ordering::SeqCst)).sum()
    }

    /// Asks every worker to stop; learners end after their current step.
    pub fn stop(&self) {
        for a in &self.actors {
            a.stop.store(true, Ordering::SeqCst);
        }
        for l in &self.learners {
            l.stop();
        }
    }

    /// Waits for the learners to finish their periods (or for `deadline`), then stops the
    /// actors and writes run artifacts: frozen models, league log and throughput files.
    pub fn wait(self, deadline: Option<Duration>) -> Result<ClusterSummary> {
        let t0 = Instant::now();
        let mut timed_out = false;
        while !self.learners_finished() {
            if deadline.is_some_and(|d| t0.elapsed() >= d) {
                timed_out = true;
                break;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.shutdown(timed_out)
    }

    fn shutdown(self, timed_out: bool) -> Result<ClusterSummary> {
        self.stop();
        let elapsed = self.started.elapsed();
        let mut first_err = None;
        let mut learner_summaries = Vec::new();
        for (g, l) in self.learners.into_iter().enumerate() {
            let counters = l.counters();
            write_throughput(&self.cfg.run_dir, g as u32, &counters, elapsed)?;
            match l.join() {
                Ok(s) => learner_summaries.push(s),
                Err(e) => {
                    log::error!("learner group {g} failed: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        let mut actor_reports = Vec::new();
        for a in self.actors {
            match a.handle.join() {
                Ok(Ok(r)) => actor_reports.push(r),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(Error::Aborted("actor panicked".into()));
                }
            }
        }
        drop(self.infs);
        self.league.flush_summary();
        self.primary
            .snapshot_to_dir(&self.cfg.run_dir.join("models"), true)?;
        if let Some(e) = first_err {
            return Err(e);
        }
        if timed_out {
            log::warn!("run stopped at the deadline before all periods finished");
        }
        Ok(ClusterSummary {
            learners: learner_summaries,
            actors: actor_reports,
            elapsed,
            league_summary: self.league.summary(),
        })
    }
}

/// Runs a config to completion (all `total_periods`) in-process.
pub fn run_in_process(cfg: &RunConfig, deadline: Option<Duration>) -> Result<ClusterSummary> {
    Cluster::start(cfg)?.wait(deadline)
}

/// Whole-run throughput of one learner group, written when the group stops.
pub fn write_throughput(dir: &Path, group: u32, c: &Counters, elapsed: Duration) -> Result<()> {
    let s = ThroughputStats::between(&Counters::default(), c, elapsed);
    let text = format!(
        "group={group} received_frames={} consumed_frames={} update_steps={} stale_dropped={} elapsed={:.3} rfps={:.2} cfps={:.2}\n",
        c.received_frames,
        c.consumed_frames,
        c.update_steps,
        c.stale_dropped,
        elapsed.as_secs_f64(),
        s.rfps,
        s.cfps
    );
    fs::write(dir.join(format!("throughput-g{group}.txt")), text)?;
    Ok(())
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// Text report of a run directory: the latest league summary (payoff matrix and Elo table)
/// and per-group throughput.
pub fn league_report(run_dir: &Path) -> Result<String> {
    let log_path = run_dir.join("league.log");
    let log = fs::read_to_string(&log_path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", log_path.display())))?;
    let last = log
        .rsplit("# league summary ")
        .next()
        .filter(|s| !s.is_empty() && s != &log)
        .ok_or_else(|| Error::Malformed(format!("{} has no summary block", log_path.display())))?;
    let body: String = last
        .lines()
        .skip(1)
        .take_while(|l| *l != "# end")
        .map(|l| format!("{l}\n"))
        .collect();
    let mut out = String::from("== league ==\n");
    out.push_str(&body);
    out.push_str("== throughput ==\n");
    out.push_str(&format!("{:>6} {:>12} {:>12} {:>8} {:>10}\n", "group", "rfps", "cfps", "reuse", "steps"));
    let mut groups: Vec<_> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("throughput-g") && n.ends_with(".txt"))
        .collect();
    groups.sort();
    for name in groups {
        let text = fs::read_to_string(run_dir.join(&name))?;
        let line = text.lines().next().unwrap_or("");
        let get = |k| field(line, k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
        let (rfps, cfps) = (get("rfps"), get("cfps"));
        let reuse = if rfps > 0.0 { cfps / rfps } else { 0.0 };
        out.push_str(&format!(
            "{:>6} {:>12.2} {:>12.2} {:>8.3} {:>10}\n",
            field(line, "group").unwrap_or("?"),
            rfps,
            cfps,
            reuse,
            get("update_steps") as u64
        ));
    }
    Ok(out)
}

/// Parses every metrics line in a file, skipping malformed ones.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsLine>> {
    Ok(fs::read_to_string(path)?.lines().filter_map(MetricsLine::parse).collect())
}
