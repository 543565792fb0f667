//! Local multi-process launcher: starts every service as a child process of this binary,
//! restarts crashed actors and fail-stops on any other crash.

use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use league_core::cluster::{actor_index, actor_seed};
use league_core::config::RunConfig;

use crate::services::terminated;

/// Segment sequence numbers of the n-th restart start at `n << 40`.
pub const SEQ_RESTART_SHIFT: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Pool,
    League,
    Learner,
    Inf,
    Actor,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Pool => "pool",
            Role::League => "league",
            Role::Learner => "learner",
            Role::Inf => "inf",
            Role::Actor => "actor",
        }
    }
}

struct Proc {
    role: Role,
    index: usize,
    args: Vec<String>,
    child: Child,
    restarts: u32,
    exited: Option<ExitStatus>,
}

/// Resolved listen addresses for every service.
#[derive(Debug, Clone)]
pub struct Layout {
    pub pools: Vec<String>,
    pub league: String,
    /// `groups * shards`, group-major.
    pub learners: Vec<String>,
    /// `groups * inf_servers`, group-major.
    pub infs: Vec<String>,
}

fn free_ports(n: usize) -> Result<Vec<String>> {
    // Hold every listener until all are chosen so the ports are distinct.
    let listeners: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<_>>()?;
    listeners
        .iter()
        .map(|l| Ok(l.local_addr()?.to_string()))
        .collect()
}

pub fn layout(cfg: &RunConfig) -> Result<Layout> {
    let ep = &cfg.endpoints;
    let g = cfg.groups as usize;
    let need = [
        (ep.pools.is_empty(), cfg.pool_replicas),
        (ep.league.is_none(), 1),
        (ep.learners.is_empty(), g * cfg.shards),
        (ep.inf_servers.is_empty(), g * cfg.inf_servers),
    ];
    let mut fresh = free_ports(need.iter().filter(|(auto, _)| *auto).map(|(_, n)| n).sum())?.into_iter();
    let mut take = |given: &[String], auto: bool, n: usize| -> Vec<String> {
        if auto {
            fresh.by_ref().take(n).collect()
        } else {
            given.to_vec()
        }
    };
    let pools = take(&ep.pools, need[0].0, need[0].1);
    let league = match &ep.league {
        Some(a) => a.clone(),
        None => take(&[], true, 1).remove(0),
    };
    let learners = take(&ep.learners, need[2].0, need[2].1);
    let infs = take(&ep.inf_servers, need[3].0, need[3].1);
    Ok(Layout {
        pools,
        league,
        learners,
        infs,
    })
}

fn wait_listening(addr: &str, timeout: Duration) -> Result<()> {
    let t0 = Instant::now();
    while t0.elapsed() < timeout {
        if TcpStream::connect(addr).is_ok() {
            return Ok(());
        }
        thread::sleep(Duration::from_millis(20));
    }
    bail!("{addr} did not start listening within {timeout:?}")
}

pub struct Supervisor {
    cfg: RunConfig,
    config_path: PathBuf,
    exe: PathBuf,
    layout: Layout,
    procs: Vec<Proc>,
}

impl Supervisor {
    pub fn new(config_path: &Path) -> Result<Supervisor> {
        // Parsing rejects duplicate ports and bad fields before anything is spawned.
        let cfg = RunConfig::from_file(config_path)?;
        let layout = layout(&cfg)?;
        Ok(Supervisor {
            cfg,
            config_path: fs::canonicalize(config_path)?,
            exe: std::env::current_exe()?,
            layout,
            procs: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn pool_flags(&self) -> Vec<String> {
        self.layout
            .pools
            .iter()
            .flat_map(|p| ["--model-pool".to_string(), p.clone()])
            .collect()
    }

    fn spawn(&mut self, role: Role, index: usize, args: Vec<String>) -> Result<()> {
        let child = Command::new(&self.exe)
            .args(&args)
            .spawn()
            .with_context(|| format!("spawning {} {index}", role.name()))?;
        log::info!("started {} {index} (pid {})", role.name(), child.id());
        self.procs.push(Proc {
            role,
            index,
            args,
            child,
            restarts: 0,
            exited: None,
        });
        self.write_process_table()
    }

    fn actor_args(&self, g: u32, r: usize, a: usize, seq_base: u64) -> Vec<String> {
        let cfg = &self.cfg;
        let index = actor_index(cfg, g, r, a);
        let mut args = vec![
            "actor".to_string(),
            "--config".into(),
            self.config_path.display().to_string(),
            "--group".into(),
            g.to_string(),
            "--index".into(),
            index.to_string(),
            "--learner".into(),
            self.layout.learners[g as usize * cfg.shards + r].clone(),
            "--league".into(),
            self.layout.league.clone(),
            "--seed".into(),
            actor_seed(cfg.seed, index).to_string(),
            "--seq-base".into(),
            seq_base.to_string(),
        ];
        args.extend(self.pool_flags());
        if cfg.inf_servers > 0 && cfg.inference == league_core::actor::InferenceMode::Remote {
            let i = g as usize * cfg.inf_servers + index % cfg.inf_servers;
            args.extend(["--inference".into(), "remote".into(), "--inf".into(), self.layout.infs[i].clone()]);
        }
        args
    }

    /// Starts every service in dependency order: pools, league, learners, inference
    /// servers, actors.
    pub fn launch(&mut self) -> Result<()> {
        let cfg = self.cfg.clone();
        let config = self.config_path.display().to_string();
        let wait = Duration::from_secs(15);
        fs::create_dir_all(&cfg.run_dir)?;

        for (i, addr) in self.layout.pools.clone().iter().enumerate().skip(1) {
            self.spawn(Role::Pool, i, vec!["pool".into(), "--listen".into(), addr.clone(), "--follower-mode".into()])?;
        }
        let mut primary = vec![
            "pool".to_string(),
            "--listen".into(),
            self.layout.pools[0].clone(),
            "--snapshot-dir".into(),
            cfg.run_dir.join("models").display().to_string(),
        ];
        for f in &self.layout.pools[1..] {
            primary.extend(["--follower".into(), f.clone()]);
        }
        self.spawn(Role::Pool, 0, primary)?;
        for addr in &self.layout.pools {
            wait_listening(addr, wait)?;
        }

        let mut league = vec!["league".to_string(), "--config".into(), config.clone(), "--listen".into(), self.layout.league.clone()];
        league.extend(self.pool_flags());
        self.spawn(Role::League, 0, league)?;
        wait_listening(&self.layout.league, wait)?;

        for g in 0..cfg.groups {
            let mut args = vec![
                "learner".to_string(),
                "--config".into(),
                config.clone(),
                "--group".into(),
                g.to_string(),
                "--num-shards".into(),
                cfg.shards.to_string(),
                "--league".into(),
                self.layout.league.clone(),
            ];
            args.extend(self.pool_flags());
            let shards = &self.layout.learners[g as usize * cfg.shards..(g as usize + 1) * cfg.shards];
            for s in shards {
                args.extend(["--listen".into(), s.clone()]);
            }
            self.spawn(Role::Learner, g as usize, args)?;
        }
        for s in self.layout.learners.clone() {
            wait_listening(&s, wait)?;
        }

        for g in 0..cfg.groups as usize {
            for k in 0..cfg.inf_servers {
                let i = g * cfg.inf_servers + k;
                let mut args = vec![
                    "inf".to_string(),
                    "--listen".into(),
                    self.layout.infs[i].clone(),
                    "--model-key".into(),
                    format!("latest:{}", cfg.group_cfg[g].lineage),
                    "--max-batch".into(),
                    cfg.max_batch.to_string(),
                    "--flush-timeout-ms".into(),
                    format!("{}", cfg.flush_timeout.as_secs_f64() * 1000.0),
                    "--refresh-ms".into(),
                    cfg.inf_refresh.as_millis().to_string(),
                ];
                args.extend(self.pool_flags());
                self.spawn(Role::Inf, i, args)?;
            }
        }
        for a in self.layout.infs.clone() {
            wait_listening(&a, wait)?;
        }

        for g in 0..cfg.groups {
            for r in 0..cfg.shards {
                for a in 0..cfg.actors {
                    let args = self.actor_args(g, r, a, 0);
                    self.spawn(Role::Actor, actor_index(&cfg, g, r, a), args)?;
                }
            }
        }
        log::info!("{} processes running", self.procs.len());
        Ok(())
    }

    pub fn process_table(&self) -> String {
        self.procs
            .iter()
            .map(|p| format!("{} {} {} {}\n", p.role.name(), p.index, p.child.id(), p.restarts))
            .collect()
    }

    fn write_process_table(&self) -> Result<()> {
        let path = self.cfg.run_dir.join("processes.txt");
        let tmp = path.with_extension("txt.tmp");
        fs::create_dir_all(&self.cfg.run_dir)?;
        fs::write(&tmp, self.process_table())?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn restart_actor(&mut self, i: usize) -> Result<()> {
        let restarts = self.procs[i].restarts + 1;
        if restarts > self.cfg.max_actor_restarts {
            bail!("actor {} crashed more than {} times", self.procs[i].index, self.cfg.max_actor_restarts);
        }
        let mut args = self.procs[i].args.clone();
        let pos = args.iter().position(|a| a == "--seq-base").expect("actor args carry --seq-base");
        args[pos + 1] = ((restarts as u64) << SEQ_RESTART_SHIFT).to_string();
        let child = Command::new(&self.exe).args(&args).spawn()?;
        log::warn!("restarted actor {} as pid {} (restart {restarts})", self.procs[i].index, child.id());
        let p = &mut self.procs[i];
        p.child = child;
        p.args = args;
        p.restarts = restarts;
        p.exited = None;
        self.write_process_table()
    }

    /// Supervises until all learner groups finish, the deadline passes or a signal arrives.
    pub fn supervise(&mut self, deadline: Option<Duration>) -> Result<()> {
        let t0 = Instant::now();
        loop {
            if terminated() {
                log::info!("signal received, stopping the run");
                return Ok(());
            }
            if deadline.is_some_and(|d| t0.elapsed() >= d) {
                log::info!("deadline reached, stopping the run");
                return Ok(());
            }
            for i in 0..self.procs.len() {
                if self.procs[i].exited.is_some() {
                    continue;
                }
                let Some(status) = self.procs[i].child.try_wait()? else {
                    continue;
                };
                let (role, index) = (self.procs[i].role, self.procs[i].index);
                match role {
                    Role::Actor if status.success() => {
                        // A service it depends on is shutting down; nothing to restart.
                        log::info!("actor {index} finished");
                        self.procs[i].exited = Some(status);
                    }
                    Role::Actor => {
                        log::warn!("actor {index} exited ({status})");
                        self.restart_actor(i)?;
                    }
                    Role::Learner if status.success() => {
                        log::info!("learner group {index} finished");
                        self.procs[i].exited = Some(status);
                    }
                    _ => {
                        self.procs[i].exited = Some(status);
                        return Err(anyhow!("{} {index} exited ({status}); stopping the run", role.name()));
                    }
                }
            }
            let learners_done = self
                .procs
                .iter()
                .filter(|p| p.role == Role::Learner)
                .all(|p| p.exited.is_some());
            if learners_done {
                return Ok(());
            }
            thread::sleep(Duration::from_millis(50));
        }
    }

    /// Stops children in reverse dependency order so the league and primary pool write
    /// their artifacts last.
    pub fn shutdown(&mut self) {
        for stage in [
            &[Role::Actor][..],
            &[Role::Inf, Role::Learner][..],
            &[Role::League][..],
            &[Role::Pool][..],
        ] {
            for p in self.procs.iter_mut().filter(|p| stage.contains(&p.role) && p.exited.is_none()) {
                // SAFETY: plain kill(2) on a child we spawned.
                unsafe {
                    libc::kill(p.child.id() as libc::pid_t, libc::SIGTERM);
                }
            }
            let t0 = Instant::now();
            for p in self.procs.iter_mut().filter(|p| stage.contains(&p.role) && p.exited.is_none()) {
                loop {
                    match p.child.try_wait() {
                        Ok(Some(s)) => {
                            p.exited = Some(s);
                            break;
                        }
                        Ok(None) if t0.elapsed() < Duration::from_secs(5) => thread::sleep(Duration::from_millis(10)),
                        _ => {
                            let _ = p.child.kill();
                            p.exited = p.child.wait().ok();
                            break;
                        }
                    }
                }
            }
        }
        let _ = self.write_process_table();
    }
}

impl Drop for Supervisor {
    fn drop(&mut self) {
        for p in self.procs.iter_mut().filter(|p| p.exited.is_none()) {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}
