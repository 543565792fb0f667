//! Throughput benchmarks over the in-process cluster.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use crate::cluster::Cluster;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::learner::{MetricsLine, ThroughputStats};

pub const DEFAULT_SCENARIOS: [&str; 3] = ["rps-1x1x4", "rps-1x2x8", "grid-1x2x8"];

/// `{env}-{M_G}x{M_L}x{M_A}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub env: String,
    pub groups: u32,
    pub shards: usize,
    pub actors: usize,
}

impl Scenario {
    pub fn parse(name: &str) -> Result<Scenario> {
        let bad = || Error::InvalidArgument(format!("scenario '{name}' is not <env>-<G>x<L>x<A>"));
        let (env, topo) = name.rsplit_once('-').ok_or_else(bad)?;
        let parts: Vec<&str> = topo.split('x').collect();
        let [g, l, a] = parts.as_slice() else {
            return Err(bad());
        };
        let env = match env {
            "grid" => "grid_duel",
            other => other,
        };
        let s = Scenario {
            name: name.to_string(),
            env: env.to_string(),
            groups: g.parse().map_err(|_| bad())?,
            shards: l.parse().map_err(|_| bad())?,
            actors: a.parse().map_err(|_| bad())?,
        };
        if s.groups == 0 || s.shards == 0 || s.actors == 0 {
            return Err(bad());
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub warmup: Duration,
    pub window: Duration,
    pub max_reuse: u32,
    pub batch_size: usize,
    pub train_delay: Duration,
    pub env_step_delay: Duration,
    pub seed: u64,
    pub run_dir: PathBuf,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmup: Duration::from_secs(5),
            window: Duration::from_secs(30),
            max_reuse: 1,
            batch_size: 32,
            train_delay: Duration::ZERO,
            env_step_delay: Duration::from_micros(500),
            seed: 1,
            run_dir: std::env::temp_dir().join("league-bench"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub scenario: String,
    pub m_a: usize,
    pub m_l: usize,
    pub m_g: u32,
    pub rfps: f64,
    pub cfps: f64,
    pub duration: Duration,
    pub update_steps: u64,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "scenario,m_g,m_l,m_a,rfps,cfps,duration_s,update_steps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.2},{:.2},{:.3},{}",
            self.scenario,
            self.m_g,
            self.m_l,
            self.m_a,
            self.rfps,
            self.cfps,
            self.duration.as_secs_f64(),
            self.update_steps
        )
    }

    /// The result as a metrics-log line (group field carries M_G).
    pub fn metrics_line(&self) -> MetricsLine {
        MetricsLine::now(
            self.m_g,
            &ThroughputStats {
                rfps: self.rfps,
                cfps: self.cfps,
                reuse_ratio: if self.rfps > 0.0 { self.cfps / self.rfps } else { 0.0 },
                update_steps: self.update_steps,
            },
        )
    }
}

impl fmt::Display for BenchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: rfps={:.1} cfps={:.1} reuse={:.3} steps={} window={:.1}s",
            self.scenario,
            self.rfps,
            self.cfps,
            if self.rfps > 0.0 { self.cfps / self.rfps } else { 0.0 },
            self.update_steps,
            self.duration.as_secs_f64()
        )
    }
}

pub fn scenario_config(s: &Scenario, o: &BenchOptions) -> Result<RunConfig> {
    let text = format!(
        "[cluster]\ngroups: {}\nshards: {}\nactors: {}\nseed: {}\nrun_dir: {}\n\
         [env]\nname: {}\nunroll_len: {}\n\
         [learner]\nbatch_size: {}\nmax_reuse: {}\nperiod_steps: 1000000000\npublish_interval: 50\n\
         replay_capacity: {}\ntrain_delay_us: {}\nmetrics_interval_ms: 1000\n\
         [league]\nscheme: uniform_recent_k\n\
         [actor]\nenv_step_delay_us: {}\n",
        s.groups,
        s.shards,
        s.actors,
        o.seed,
        o.run_dir.join(&s.name).display(),
        s.env,
        if s.env == "grid_duel" { 16 } else { 1 },
        o.batch_size,
        o.max_reuse,
        (o.batch_size * 16).max(512),
        o.train_delay.as_micros(),
        o.env_step_delay.as_micros(),
    );
    RunConfig::parse(&text)
}

/// Runs the scenario for `warmup + window` and reports the window's throughput. cfps only
/// counts frames that also arrived inside the window.
pub fn run_bench(scenario: &str, o: &BenchOptions) -> Result<BenchResult> {
    let s = Scenario::parse(scenario)?;
    let cfg = scenario_config(&s, o)?;
    let cluster = Cluster::start(&cfg)?;
    thread::sleep(o.warmup);
    for g in 0..cfg.groups {
        cluster.learner(g).new_epoch();
    }
    let t0 = Instant::now();
    thread::sleep(o.window);
    let elapsed = t0.elapsed();
    let mut rfps = 0.0;
    let mut cfps = 0.0;
    let mut steps = 0;
    for g in 0..cfg.groups {
        let st = ThroughputStats::epoch(&cluster.learner(g).counters(), elapsed);
        rfps += st.rfps;
        cfps += st.cfps;
        steps += st.update_steps;
    }
    cluster.wait(Some(Duration::ZERO))?;
    Ok(BenchResult {
        scenario: s.name,
        m_a: s.actors,
        m_l: s.shards,
        m_g: s.groups,
        rfps,
        cfps,
        duration: elapsed,
        update_steps: steps,
    })
}

/// Appends a result row, writing the header first if the file is new.
pub fn append_csv(path: &Path, r: &BenchResult) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{}", BenchResult::CSV_HEADER)?;
    }
    writeln!(f, "{}", r.csv_row())?;
    Ok(())
}
