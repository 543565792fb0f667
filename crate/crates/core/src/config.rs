//! Run configuration: a line-oriented `key: value` file with `[section]` headers.
//!
//! ```text
//! # one-shot RPS, fictitious self-play
//! [cluster]
//! groups: 1
//! shards: 1
//! actors: 4
//! seed: 7
//!
//! [env]
//! name: rps
//!
//! [league]
//! scheme: uniform_recent_k
//! ```
//!
//! Per-group overrides go in `[group.N]`. Every error carries the offending line number.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::actor::InferenceMode;
use crate::env::{default_horizon, make_env, EnvSpec};
use crate::error::{Error, Result};
use crate::league::sampling::{SamplingScheme, SchemeKind};
use crate::league::{default_lineage, GroupConfig, LeagueConfig, DEFAULT_INITIAL_ELO, DEFAULT_K_FACTOR};
use crate::learner::LearnerConfig;
use crate::policy::{init_params, PolicyFamily, PolicyShape};
use crate::rl::{Algo, HyperParams};

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw parse: section name → key → entry. Keys outside any section go in "".
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)>,
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)> = BTreeMap::new();
        let mut current = String::new();
        sections.insert(String::new(), (0, BTreeMap::new()));
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(line, "section header missing ']'"))?
                    .trim();
                if name.is_empty() {
                    return Err(cfg_err(line, "empty section name"));
                }
                if let Some((first, _)) = sections.get(name) {
                    return Err(cfg_err(line, format!("section [{name}] repeated (first at line {first})")));
                }
                sections.insert(name.to_string(), (line, BTreeMap::new()));
                current = name.to_string();
                continue;
            }
            let (k, v) = content
                .split_once(':')
                .ok_or_else(|| cfg_err(line, format!("expected 'key: value', got '{content}'")))?;
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(cfg_err(line, format!("invalid key '{key}'")));
            }
            let sec = &mut sections.get_mut(&current).expect("current section exists").1;
            if let Some(prev) = sec.get(key) {
                return Err(cfg_err(line, format!("duplicate key '{key}' (first at line {})", prev.line)));
            }
            sec.insert(
                key.to_string(),
                Entry {
                    value: v.trim().to_string(),
                    line,
                },
            );
        }
        Ok(RawConfig { sections })
    }

    pub fn section_names(&self) -> Vec<String> {
        self.sections.keys().filter(|k| !k.is_empty()).cloned().collect()
    }
}

/// Typed reader over one section that tracks which keys were consumed.
struct Section<'a> {
    name: &'a str,
    line: usize,
    entries: Option<&'a BTreeMap<String, Entry>>,
    used: Vec<&'a str>,
}

impl<'a> Section<'a> {
    fn new(raw: &'a RawConfig, name: &'a str) -> Self {
        let s = raw.sections.get(name);
        Section {
            name,
            line: s.map_or(0, |s| s.0),
            entries: s.map(|s| &s.1),
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a Entry> {
        self.used.push(key);
        self.entries.and_then(|e| e.get(key))
    }

    fn get<T: FromStr>(&mut self, key: &'a str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => e.value.parse::<T>().map_err(|err| {
                cfg_err(e.line, format!("[{}] {key}: cannot parse '{}': {err}", self.name, e.value))
            }),
        }
    }

    fn opt<T: FromStr>(&mut self, key: &'a str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| {
                cfg_err(e.line, format!("[{}] {key}: cannot parse '{}': {err}", self.name, e.value))
            }),
        }
    }

    fn with<T>(&mut self, key: &'a str, default: T, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => f(&e.value).map_err(|err| cfg_err(e.line, format!("[{}] {key}: {err}", self.name))),
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.and_then(|e| e.get(key)).map_or(self.line, |e| e.line)
    }

    /// Fails on any key that no reader asked for.
    fn finish(self) -> Result<()> {
        if let Some(entries) = self.entries {
            for (k, e) in entries {
                if !self.used.contains(&k.as_str()) {
                    return Err(cfg_err(e.line, format!("unknown key '{k}' in [{}]", self.name)));
                }
            }
        }
        Ok(())
    }
}

fn parse_table(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("bad table entry '{x}': {e}")))
                })
                .collect()
        })
        .collect()
}

fn parse_list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

#[derive(Debug, Clone)]
pub struct GroupOverride {
    pub lineage: String,
    pub scheme: SamplingScheme,
    pub opponent_group: Option<u32>,
}

/// Listen addresses for every service; `None` means pick a free local port at launch.
#[derive(Debug, Clone, Default)]
pub struct Endpoints {
    pub league: Option<String>,
    pub pools: Vec<String>,
    /// Group-major: shard `r` of group `g` is at index `g * shards + r`.
    pub learners: Vec<String>,
    pub inf_servers: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub groups: u32,
    pub shards: usize,
    /// Actors per learner shard.
    pub actors: usize,
    pub pool_replicas: usize,
    /// Inference servers per group (0 = actors evaluate locally).
    pub inf_servers: usize,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub env: EnvSpec,
    pub unroll_len: usize,
    pub family: PolicyFamily,
    pub init_scale: f64,
    pub hyper: HyperParams,
    pub algo: Algo,
    pub batch_size: usize,
    pub max_reuse: u32,
    pub replay_capacity: usize,
    pub publish_interval: u64,
    pub period_steps: u64,
    pub total_periods: Option<u64>,
    pub sync_push: bool,
    pub train_delay: Duration,
    pub metrics_interval: Duration,
    pub group_cfg: Vec<GroupOverride>,
    pub perturb_hyper: bool,
    pub k_factor: f64,
    pub initial_elo: f64,
    pub refresh_interval: u64,
    pub inference: InferenceMode,
    pub env_step_delay: Duration,
    pub max_batch: usize,
    pub flush_timeout: Duration,
    pub inf_refresh: Duration,
    pub endpoints: Endpoints,
    /// Restart budget per actor before the run fails.
    pub max_actor_restarts: u32,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::parse(&text)?;
        if cfg.run_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.run_dir = parent.join(&cfg.run_dir);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let raw = RawConfig::parse(text)?;
        let known = ["cluster", "env", "policy", "learner", "hyper", "league", "actor", "inference", "endpoints"];
        for name in raw.section_names() {
            let ok = known.contains(&name.as_str())
                || name.strip_prefix("group.").is_some_and(|n| n.parse::<u32>().is_ok());
            if !ok {
                return Err(cfg_err(raw.sections[&name].0, format!("unknown section [{name}]")));
            }
        }
        if let Some((k, e)) = raw.sections[""].1.iter().next() {
            return Err(cfg_err(e.line, format!("key '{k}' outside of any section")));
        }

        let mut c = Section::new(&raw, "cluster");
        let groups: u32 = c.get("groups", 1)?;
        let shards: usize = c.get("shards", 1)?;
        let actors: usize = c.get("actors", 1)?;
        let pool_replicas: usize = c.get("pool_replicas", 1)?;
        let inf_servers: usize = c.get("inf_servers", 0)?;
        let seed: u64 = c.get("seed", 0)?;
        let run_dir: PathBuf = c.get("run_dir", PathBuf::from("run"))?;
        let max_actor_restarts: u32 = c.get("max_actor_restarts", 20)?;
        for (k, v) in [
            ("groups", groups as usize),
            ("shards", shards),
            ("actors", actors),
            ("pool_replicas", pool_replicas),
        ] {
            if v == 0 {
                return Err(cfg_err(c.line_of(k), format!("[cluster] {k} must be >= 1")));
            }
        }
        c.finish()?;

        let mut e = Section::new(&raw, "env");
        let name: String = e.get("name", "rps".to_string())?;
        let horizon_line = e.line_of("horizon");
        let horizon: usize = e.get("horizon", default_horizon(&name))?;
        let payoff = e.with("payoff", None, |s| parse_table(s).map(Some))?;
        let unroll_len: usize = e.get("unroll_len", 1)?;
        if unroll_len == 0 {
            return Err(cfg_err(e.line_of("unroll_len"), "[env] unroll_len must be >= 1"));
        }
        let env_line = e.line_of("name");
        e.finish()?;
        let env = EnvSpec {
            env_name: name,
            n_agents: 2,
            horizon,
            payoff_table: payoff,
            seed,
        };
        let probe = make_env(&env).map_err(|err| {
            let line = if matches!(err, Error::InvalidArgument(ref m) if m.contains("horizon")) {
                horizon_line
            } else {
                env_line
            };
            cfg_err(line, format!("[env] {err}"))
        })?;

        let mut p = Section::new(&raw, "policy");
        let family = p.with("family", default_family(probe.obs_dim()), PolicyFamily::parse)?;
        let init_scale: f64 = p.get("init_scale", 0.1)?;
        p.finish()?;

        let mut h = Section::new(&raw, "hyper");
        let d = HyperParams::default();
        let mut hyper = HyperParams {
            learning_rate: h.get("learning_rate", d.learning_rate)?,
            gamma: h.get("gamma", d.gamma)?,
            lam: h.get("lam", d.lam)?,
            clip_eps: h.get("clip_eps", d.clip_eps)?,
            vf_coef: h.get("vf_coef", d.vf_coef)?,
            ent_coef: h.get("ent_coef", d.ent_coef)?,
            kl_teacher_coef: h.get("kl_teacher_coef", d.kl_teacher_coef)?,
            rho_bar: h.get("rho_bar", d.rho_bar)?,
            c_bar: h.get("c_bar", d.c_bar)?,
            elo_sigma: h.get("elo_sigma", d.elo_sigma)?,
            normalize_advantages: h.get("normalize_advantages", d.normalize_advantages)?,
            ..d
        };
        let hyper_line = h.line;
        h.finish()?;

        let mut l = Section::new(&raw, "learner");
        let algo = l.with("algo", Algo::Ppo, Algo::parse)?;
        let batch_size: usize = l.get("batch_size", 32)?;
        let default_reuse = if algo == Algo::VTrace { 4 } else { 1 };
        let max_reuse: u32 = l.get("max_reuse", default_reuse)?;
        let replay_capacity: usize = l.get("replay_capacity", (batch_size * 8).max(256))?;
        let publish_interval: u64 = l.get("publish_interval", 10)?;
        let period_steps: u64 = l.get("period_steps", 1000)?;
        let total_periods_line = l.line_of("total_periods");
        let total_periods: Option<u64> = l.opt("total_periods")?;
        if total_periods == Some(0) {
            return Err(cfg_err(total_periods_line, "[learner] total_periods must be >= 1"));
        }
        let sync_push: bool = l.get("sync_push", false)?;
        let train_delay = Duration::from_micros(l.get("train_delay_us", 0)?);
        let metrics_interval = Duration::from_millis(l.get("metrics_interval_ms", 1000)?);
        let learner_line = l.line;
        l.finish()?;
        hyper.batch_size = batch_size as u32;
        hyper.unroll_len = unroll_len as u32;
        hyper.max_reuse = max_reuse;
        hyper.validate().map_err(|err| cfg_err(hyper_line, format!("[hyper] {err}")))?;

        let mut lg = Section::new(&raw, "league");
        let base_scheme = read_scheme(&mut lg, SchemeKind::UniformRecentK)?;
        let perturb_hyper: bool = lg.get("perturb_hyper", false)?;
        let k_factor: f64 = lg.get("k_factor", DEFAULT_K_FACTOR)?;
        let initial_elo: f64 = lg.get("initial_elo", DEFAULT_INITIAL_ELO)?;
        lg.finish()?;

        let mut group_cfg = Vec::new();
        for g in 0..groups {
            let name = format!("group.{g}");
            let mut gs = Section::new(&raw, &name);
            let scheme = if gs.entries.is_some() {
                read_scheme_over(&mut gs, base_scheme)?
            } else {
                base_scheme
            };
            let lineage: String = gs.get("lineage", default_lineage(g))?;
            let og_line = gs.line_of("opponent_group");
            let opponent_group: Option<u32> = gs.opt("opponent_group")?;
            if let Some(o) = opponent_group {
                if o >= groups || o == g {
                    return Err(cfg_err(og_line, format!("[{name}] opponent_group {o} is not another group")));
                }
            }
            gs.finish()?;
            group_cfg.push(GroupOverride {
                lineage,
                scheme,
                opponent_group,
            });
        }
        for name in raw.section_names() {
            if let Some(n) = name.strip_prefix("group.") {
                let n: u32 = n.parse().expect("checked above");
                if n >= groups {
                    return Err(cfg_err(raw.sections[&name].0, format!("[{name}] but only {groups} groups")));
                }
            }
        }

        let mut a = Section::new(&raw, "actor");
        let refresh_interval: u64 = a.get("refresh_interval", 1)?;
        let inference = a.with(
            "inference",
            if inf_servers > 0 { InferenceMode::Remote } else { InferenceMode::Local },
            InferenceMode::parse,
        )?;
        let inference_line = a.line_of("inference");
        let env_step_delay = Duration::from_micros(a.get("env_step_delay_us", 0)?);
        a.finish()?;
        if inference == InferenceMode::Remote && inf_servers == 0 {
            return Err(cfg_err(inference_line, "[actor] remote inference needs [cluster] inf_servers >= 1"));
        }

        let mut i = Section::new(&raw, "inference");
        let max_batch: usize = i.get("max_batch", 32)?;
        let flush_timeout = Duration::from_micros(i.get("flush_timeout_us", 2000)?);
        let inf_refresh = Duration::from_millis(i.get("refresh_ms", 100)?);
        i.finish()?;

        let mut ep = Section::new(&raw, "endpoints");
        let endpoints = Endpoints {
            league: ep.opt("league")?,
            pools: ep.with("pool", Vec::new(), |s| Ok(parse_list(s)))?,
            learners: ep.with("learner", Vec::new(), |s| Ok(parse_list(s)))?,
            inf_servers: ep.with("inf", Vec::new(), |s| Ok(parse_list(s)))?,
        };
        check_endpoints(&endpoints, &ep, pool_replicas, groups as usize * shards, groups as usize * inf_servers)?;
        ep.finish()?;

        let cfg = RunConfig {
            groups,
            shards,
            actors,
            pool_replicas,
            inf_servers,
            seed,
            run_dir,
            env,
            unroll_len,
            family,
            init_scale,
            hyper,
            algo,
            batch_size,
            max_reuse,
            replay_capacity,
            publish_interval,
            period_steps,
            total_periods,
            sync_push,
            train_delay,
            metrics_interval,
            group_cfg,
            perturb_hyper,
            k_factor,
            initial_elo,
            refresh_interval,
            inference,
            env_step_delay,
            max_batch,
            flush_timeout,
            inf_refresh,
            endpoints,
            max_actor_restarts,
        };
        cfg.learner_config(0)
            .validate()
            .map_err(|err| cfg_err(learner_line, format!("[learner] {err}")))?;
        Ok(cfg)
    }

    /// M_M + 1 + M_G·M_L + M_G·M_L·M_A + inference servers.
    pub fn process_count(&self) -> usize {
        let g = self.groups as usize;
        self.pool_replicas + 1 + g * self.shards + g * self.shards * self.actors + g * self.inf_servers
    }

    pub fn total_actors(&self) -> usize {
        self.groups as usize * self.shards * self.actors
    }

    pub fn policy_shape(&self) -> Result<PolicyShape> {
        let env = make_env(&self.env)?;
        Ok(PolicyShape::new(env.obs_dim(), env.n_actions()))
    }

    pub fn league_config(&self) -> Result<LeagueConfig> {
        let shape = self.policy_shape()?;
        let mut groups = Vec::new();
        for (g, o) in self.group_cfg.iter().enumerate() {
            let seed_params = init_params(self.family, shape, self.init_scale, self.seed.wrapping_add(g as u64))?;
            groups.push(GroupConfig {
                lineage: o.lineage.clone(),
                scheme: o.scheme,
                hyper: self.hyper,
                seed_params,
                opponent_group: o.opponent_group,
            });
        }
        Ok(LeagueConfig {
            groups,
            k_factor: self.k_factor,
            initial_elo: self.initial_elo,
            perturb_hyper: self.perturb_hyper,
            seed: self.seed,
            n_opponents: self.env.n_agents - 1,
            summary_path: Some(self.run_dir.join("league.log")),
        })
    }

    pub fn learner_config(&self, group: u32) -> LearnerConfig {
        LearnerConfig {
            group,
            num_shards: self.shards,
            algo: self.algo,
            batch_size: self.batch_size,
            max_reuse: self.max_reuse,
            replay_capacity: self.replay_capacity,
            publish_interval: self.publish_interval,
            period_steps: self.period_steps,
            total_periods: self.total_periods,
            sync_push: self.sync_push,
            seed: self.seed.wrapping_add(1000 + group as u64),
            train_delay: self.train_delay,
            teacher_key: None,
            metrics_path: Some(self.run_dir.join(format!("metrics-g{group}.log"))),
            metrics_interval: self.metrics_interval,
            audit: false,
        }
    }
}

fn default_family(obs_dim: usize) -> PolicyFamily {
    // Small one-hot observation spaces get a table, everything else a linear policy.
    if obs_dim <= 16 {
        PolicyFamily::TabularSoftmax
    } else {
        PolicyFamily::LinearSoftmax
    }
}

fn read_scheme(s: &mut Section<'_>, default: SchemeKind) -> Result<SamplingScheme> {
    read_scheme_over(s, SamplingScheme::of(default))
}

fn read_scheme_over(s: &mut Section<'_>, base: SamplingScheme) -> Result<SamplingScheme> {
    let line = s.line;
    let kind = s.with("scheme", base.kind, SchemeKind::parse)?;
    let mut scheme = if kind == base.kind { base } else { SamplingScheme::of(kind) };
    scheme.k = s.get("k", scheme.k)?;
    scheme.pfsp_exponent = s.get("pfsp_exponent", scheme.pfsp_exponent)?;
    scheme.mixture_self_play_weight = s.get("mixture_self_play", scheme.mixture_self_play_weight)?;
    if let Some(sigma) = s.opt::<f64>("elo_matching")? {
        scheme.elo_matching = Some(sigma);
    }
    scheme
        .validate()
        .map_err(|err| cfg_err(line, format!("[{}] {err}", s.name)))?;
    Ok(scheme)
}

fn port_of(addr: &str) -> Option<u16> {
    addr.rsplit_once(':').and_then(|(_, p)| p.parse().ok())
}

fn check_endpoints(ep: &Endpoints, sec: &Section<'_>, pools: usize, learners: usize, infs: usize) -> Result<()> {
    let lists = [
        ("pool", &ep.pools, pools),
        ("learner", &ep.learners, learners),
        ("inf", &ep.inf_servers, infs),
    ];
    for (key, list, want) in lists {
        if !list.is_empty() && list.len() != want {
            return Err(cfg_err(
                sec.line_of(key),
                format!("[endpoints] {key} lists {} addresses, topology needs {want}", list.len()),
            ));
        }
    }
    let mut seen: HashMap<u16, &str> = HashMap::new();
    let all = ep
        .league
        .iter()
        .map(|a| ("league", a))
        .chain(lists.iter().flat_map(|(k, l, _)| l.iter().map(move |a| (*k, a))));
    for (key, addr) in all {
        let line = sec.line_of(key);
        let port = port_of(addr).ok_or_else(|| cfg_err(line, format!("[endpoints] '{addr}' is not host:port")))?;
        if port == 0 {
            continue;
        }
        if let Some(prev) = seen.insert(port, key) {
            return Err(cfg_err(
                line,
                format!("[endpoints] port {port} of {key} already used by {prev}"),
            ));
        }
    }
    Ok(())
}
