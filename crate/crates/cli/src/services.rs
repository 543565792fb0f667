//! Single-service process roles. Each one serves until its work is done or it receives
//! SIGTERM/SIGINT, then writes its artifacts and exits.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::Args;
use league_core::actor::{Actor, ActorConfig, InferenceMode};
use league_core::api::{InferenceApi, LeagueApi, ModelPoolApi, SegmentSink};
use league_core::cluster::{actor_config, write_throughput};
use league_core::config::RunConfig;
use league_core::env::EnvSpec;
use league_core::inf_server::{BatchPolicy, InfServer, ModelRef};
use league_core::league::LeagueMgr;
use league_core::learner::LearnerGroup;
use league_core::model_pool::{ModelPool, PoolRole, ReplicatedPool};
use league_core::rl::Algo;
use league_core::rpc::{RpcClient, Server, Services};

static TERM: AtomicBool = AtomicBool::new(false);

extern "C" fn on_term(_sig: libc::c_int) {
    TERM.store(true, Ordering::SeqCst);
}

pub fn install_term_handler() {
    let handler = on_term as extern "C" fn(libc::c_int) as libc::sighandler_t;
    // SAFETY: the handler only stores to an atomic.
    unsafe {
        libc::signal(libc::SIGTERM, handler);
        libc::signal(libc::SIGINT, handler);
    }
}

pub fn terminated() -> bool {
    TERM.load(Ordering::SeqCst)
}

fn wait_for_term(mut done: impl FnMut() -> bool) {
    while !terminated() && !done() {
        thread::sleep(Duration::from_millis(20));
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::parse("")?,
    })
}

fn client(addr: &str) -> Arc<RpcClient> {
    Arc::new(RpcClient::new(addr).with_retry(10, Duration::from_millis(25)))
}

fn pool_client(addrs: &[String], seed: u64) -> Result<Arc<dyn ModelPoolApi>> {
    if addrs.is_empty() {
        bail!("at least one --model-pool endpoint is required");
    }
    let replicas = addrs.iter().map(|a| client(a) as Arc<dyn ModelPoolApi>).collect();
    Ok(Arc::new(ReplicatedPool::new(replicas, seed)?))
}

fn serve(listen: &str, services: Services) -> Result<Server> {
    let s = Server::bind(listen, services).with_context(|| format!("binding {listen}"))?;
    log::info!("listening on {}", s.local_addr());
    Ok(s)
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    #[arg(long)]
    pub listen: String,
    /// Run as a follower replica that only accepts forwarded records.
    #[arg(long)]
    pub follower_mode: bool,
    /// Follower endpoint to forward every write to (primary only, repeatable).
    #[arg(long = "follower")]
    pub followers: Vec<String>,
    /// Write frozen models here on shutdown.
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
}

pub fn run_pool(a: PoolArgs) -> Result<()> {
    let role = if a.follower_mode { PoolRole::Follower } else { PoolRole::Primary };
    let pool = Arc::new(ModelPool::new(role));
    for f in &a.followers {
        pool.add_follower(client(f));
    }
    let _server = serve(
        &a.listen,
        Services {
            pool: Some(pool.clone()),
            ..Services::default()
        },
    )?;
    wait_for_term(|| false);
    if let Some(dir) = &a.snapshot_dir {
        let files = pool.snapshot_to_dir(dir, true)?;
        log::info!("wrote {} frozen models to {}", files.len(), dir.display());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct LeagueArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: String,
    #[arg(long = "model-pool")]
    pub model_pool: Vec<String>,
}

pub fn run_league(a: LeagueArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    std::fs::create_dir_all(&cfg.run_dir)?;
    let pool = pool_client(&a.model_pool, cfg.seed ^ 0x1ea6)?;
    let league = Arc::new(LeagueMgr::new(cfg.league_config()?, pool)?);
    let _server = serve(
        &a.listen,
        Services {
            league: Some(league.clone()),
            ..Services::default()
        },
    )?;
    wait_for_term(|| false);
    league.flush_summary();
    Ok(())
}

#[derive(Args, Debug)]
pub struct LearnerArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub group: u32,
    /// Only 0: one process hosts every shard of its group.
    #[arg(long, default_value_t = 0)]
    pub rank: u32,
    #[arg(long)]
    pub num_shards: Option<usize>,
    #[arg(long)]
    pub league: String,
    #[arg(long = "model-pool")]
    pub model_pool: Vec<String>,
    /// Segment ingest endpoint, one per shard in rank order.
    #[arg(long = "listen")]
    pub listen: Vec<String>,
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_reuse: Option<u32>,
    #[arg(long)]
    pub publish_interval: Option<u64>,
    #[arg(long)]
    pub period_steps: Option<u64>,
    #[arg(long)]
    pub total_periods: Option<u64>,
}

pub fn run_learner(a: LearnerArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    if a.rank != 0 {
        bail!("a learner process hosts all shards of its group; start it with --rank 0");
    }
    let mut lc = cfg.learner_config(a.group);
    if let Some(n) = a.num_shards {
        lc.num_shards = n;
    }
    if let Some(s) = &a.algo {
        lc.algo = Algo::parse(s)?;
    }
    lc.batch_size = a.batch_size.unwrap_or(lc.batch_size);
    lc.max_reuse = a.max_reuse.unwrap_or(lc.max_reuse);
    lc.publish_interval = a.publish_interval.unwrap_or(lc.publish_interval);
    lc.period_steps = a.period_steps.unwrap_or(lc.period_steps);
    if a.total_periods.is_some() {
        lc.total_periods = a.total_periods;
    }
    if a.listen.len() != lc.num_shards {
        bail!("{} --listen endpoints for {} shards", a.listen.len(), lc.num_shards);
    }
    std::fs::create_dir_all(&cfg.run_dir)?;
    let league: Arc<dyn LeagueApi> = client(&a.league);
    let pool = pool_client(&a.model_pool, cfg.seed ^ (0x1ea7 + a.group as u64))?;
    let group = LearnerGroup::start(lc, league, pool)?;
    let started = Instant::now();
    let mut servers = Vec::new();
    for (rank, addr) in a.listen.iter().enumerate() {
        servers.push(serve(
            addr,
            Services {
                sink: Some(group.sink(rank)),
                ..Services::default()
            },
        )?);
    }
    wait_for_term(|| group.is_finished());
    group.stop();
    let counters = group.counters();
    write_throughput(&cfg.run_dir, a.group, &counters, started.elapsed())?;
    drop(servers);
    let summary = group.join()?;
    log::info!(
        "group {} finished: {} steps, {} periods, {} publishes",
        a.group,
        summary.update_steps,
        summary.periods,
        summary.publishes
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct InfArgs {
    #[arg(long)]
    pub listen: String,
    #[arg(long = "model-pool")]
    pub model_pool: Vec<String>,
    /// `latest:<lineage>` or an explicit model key.
    #[arg(long, default_value = "latest:main")]
    pub model_key: String,
    #[arg(long, default_value_t = 32)]
    pub max_batch: usize,
    #[arg(long, default_value_t = 2.0)]
    pub flush_timeout_ms: f64,
    #[arg(long, default_value_t = 100)]
    pub refresh_ms: u64,
}

pub fn run_inf(a: InfArgs) -> Result<()> {
    let pool = pool_client(&a.model_pool, 0x1f)?;
    let server = Arc::new(InfServer::start(
        BatchPolicy {
            max_batch: a.max_batch,
            flush_timeout: Duration::from_secs_f64(a.flush_timeout_ms / 1000.0),
        },
        Some((pool, ModelRef::parse(&a.model_key), Duration::from_millis(a.refresh_ms))),
    )?);
    let _server = serve(
        &a.listen,
        Services {
            infer: Some(server.clone()),
            ..Services::default()
        },
    )?;
    wait_for_term(|| false);
    Ok(())
}

#[derive(Args, Debug)]
pub struct ActorArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub group: u32,
    /// Global actor index; also the actor id.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Segment ingest endpoint of this actor's learner shard.
    #[arg(long)]
    pub learner: String,
    #[arg(long)]
    pub league: String,
    #[arg(long = "model-pool")]
    pub model_pool: Vec<String>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub unroll_len: Option<usize>,
    #[arg(long)]
    pub inference: Option<String>,
    /// Inference server endpoint for remote inference.
    #[arg(long)]
    pub inf: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// First segment sequence number (set by the supervisor on restarts).
    #[arg(long, default_value_t = 0)]
    pub seq_base: u64,
    #[arg(long)]
    pub max_episodes: Option<u64>,
}

pub fn actor_settings(cfg: &RunConfig, a: &ActorArgs) -> Result<ActorConfig> {
    let mut ac = actor_config(cfg, a.group, a.index);
    if let Some(e) = &a.env {
        ac.env = EnvSpec::named(e, cfg.seed);
    }
    ac.unroll_len = a.unroll_len.unwrap_or(ac.unroll_len);
    if let Some(m) = &a.inference {
        ac.inference = InferenceMode::parse(m)?;
    }
    ac.seed = a.seed.unwrap_or(ac.seed);
    ac.seq_base = a.seq_base;
    ac.max_episodes = a.max_episodes;
    Ok(ac)
}

pub fn run_actor(a: ActorArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let ac = actor_settings(&cfg, &a)?;
    let infer: Option<Arc<dyn InferenceApi>> = match (ac.inference, &a.inf) {
        (InferenceMode::Remote, Some(addr)) => Some(client(addr)),
        (InferenceMode::Remote, None) => bail!("remote inference needs --inf"),
        (InferenceMode::Local, _) => None,
    };
    let league: Arc<dyn LeagueApi> = client(&a.league);
    let sink: Arc<dyn SegmentSink> = client(&a.learner);
    let pool = pool_client(&a.model_pool, ac.seed)?;
    let mut actor = Actor::new(ac, league, pool, sink, infer)?;
    let stop = actor.stop_handle();
    thread::spawn(move || {
        wait_for_term(|| false);
        stop.store(true, Ordering::SeqCst);
    });
    let report = actor.run()?;
    log::info!(
        "actor {} done: {} episodes, {} segments, {} frames",
        a.index,
        report.episodes,
        report.segments,
        report.frames
    );
    Ok(())
}
