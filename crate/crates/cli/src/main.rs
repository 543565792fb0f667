mod services;
mod supervisor;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use league_core::api::ModelPoolApi;
use league_core::bench::{append_csv, run_bench, BenchOptions, DEFAULT_SCENARIOS};
use league_core::cluster::{league_report, run_in_process};
use league_core::config::RunConfig;
use league_core::env::EnvSpec;
use league_core::eval::{evaluate, exploitability};
use league_core::model_pool::{load_model_file, model_file_name, save_model_file, ModelRecord};
use league_core::rpc::RpcClient;

#[derive(Parser, Debug)]
#[command(name = "league", version, about = "Self-play league training on a single machine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Launch a run described by a config file.
    Run {
        config: PathBuf,
        /// Threads in this process instead of one process per service.
        #[arg(long)]
        in_process: bool,
        /// Stop after this many seconds even if periods remain.
        #[arg(long)]
        deadline_s: Option<f64>,
    },
    /// Head-to-head evaluation of two models.
    Eval {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value = "rps")]
        env: String,
        #[arg(short = 'n', long, default_value_t = 100)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        src: ModelSource,
    },
    /// Best-response value against a model in a one-shot matrix game.
    Exploit {
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "rps")]
        env: String,
        #[command(flatten)]
        src: ModelSource,
    },
    /// Payoff matrix, Elo table and throughput of a run directory.
    Report { run_dir: PathBuf },
    /// Throughput benchmark; appends one CSV row per scenario.
    Bench {
        /// Scenarios such as rps-1x1x4; defaults to the registered set.
        scenarios: Vec<String>,
        #[arg(long, default_value_t = 5.0)]
        warmup_s: f64,
        #[arg(long, default_value_t = 30.0)]
        window_s: f64,
        #[arg(long, default_value_t = 1)]
        max_reuse: u32,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        train_delay_us: u64,
        #[arg(long, default_value_t = 500)]
        env_step_delay_us: u64,
        #[arg(long, default_value = "bench.csv")]
        csv: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a model to a file.
    Export {
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        src: ModelSource,
    },
    /// Put a model file into a running pool.
    Import {
        file: PathBuf,
        #[arg(long = "model-pool")]
        model_pool: String,
    },
    /// Model-pool replica service.
    Pool(services::PoolArgs),
    /// League manager service.
    League(services::LeagueArgs),
    /// Learner group service.
    Learner(services::LearnerArgs),
    /// Batched inference service.
    Inf(services::InfArgs),
    /// Actor worker.
    Actor(services::ActorArgs),
}

/// Where model keys are looked up when they are not file paths.
#[derive(clap::Args, Debug)]
struct ModelSource {
    /// Run directory whose `models/` holds frozen model files.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Running model-pool endpoint.
    #[arg(long = "model-pool")]
    model_pool: Option<String>,
}

impl ModelSource {
    fn load(&self, key_or_file: &str) -> Result<ModelRecord> {
        let p = Path::new(key_or_file);
        if p.is_file() {
            return load_model_file(p).with_context(|| format!("reading {}", p.display()));
        }
        if let Some(dir) = &self.run_dir {
            let f = dir.join("models").join(model_file_name(key_or_file));
            if f.is_file() {
                return Ok(load_model_file(&f)?);
            }
        }
        if let Some(addr) = &self.model_pool {
            return Ok((*RpcClient::new(addr).get_model(key_or_file)?).clone());
        }
        bail!("unknown model '{key_or_file}': not a file, and not found in --run-dir or --model-pool")
    }
}

fn run(config: &Path, in_process: bool, deadline: Option<Duration>) -> Result<()> {
    if in_process {
        let cfg = RunConfig::from_file(config)?;
        let s = run_in_process(&cfg, deadline)?;
        log::info!("run finished in {:.1}s", s.elapsed.as_secs_f64());
        print!("{}", league_report(&cfg.run_dir)?);
        return Ok(());
    }
    let mut sup = supervisor::Supervisor::new(config)?;
    let run_dir = sup.config().run_dir.clone();
    log::info!(
        "launching {} processes (topology count {})",
        sup.config().pool_replicas + 1 + sup.config().groups as usize * (1 + sup.config().inf_servers)
            + sup.config().total_actors(),
        sup.config().process_count()
    );
    let res = sup.launch().and_then(|()| sup.supervise(deadline));
    sup.shutdown();
    res?;
    print!("{}", league_report(&run_dir)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            config,
            in_process,
            deadline_s,
        } => {
            services::install_term_handler();
            run(&config, in_process, deadline_s.map(Duration::from_secs_f64))
        }
        Cmd::Eval {
            a,
            b,
            env,
            episodes,
            seed,
            src,
        } => {
            let (ra, rb) = (src.load(&a)?, src.load(&b)?);
            let r = evaluate((&ra.key, &ra.params), (&rb.key, &rb.params), &EnvSpec::named(&env, seed), episodes, seed)?;
            println!("{r}");
            Ok(())
        }
        Cmd::Exploit { model, env, src } => {
            let r = src.load(&model)?;
            println!("{} exploitability={:.6}", r.key, exploitability(&r.params, &EnvSpec::named(&env, 0))?);
            Ok(())
        }
        Cmd::Report { run_dir } => {
            print!("{}", league_report(&run_dir)?);
            Ok(())
        }
        Cmd::Bench {
            scenarios,
            warmup_s,
            window_s,
            max_reuse,
            batch_size,
            train_delay_us,
            env_step_delay_us,
            csv,
            seed,
        } => {
            let o = BenchOptions {
                warmup: Duration::from_secs_f64(warmup_s),
                window: Duration::from_secs_f64(window_s),
                max_reuse,
                batch_size,
                train_delay: Duration::from_micros(train_delay_us),
                env_step_delay: Duration::from_micros(env_step_delay_us),
                seed,
                ..BenchOptions::default()
            };
            let names: Vec<String> = if scenarios.is_empty() {
                DEFAULT_SCENARIOS.iter().map(|s| s.to_string()).collect()
            } else {
                scenarios
            };
            for name in names {
                let r = run_bench(&name, &o)?;
                println!("{r}");
                println!("{}", r.metrics_line());
                append_csv(&csv, &r)?;
            }
            Ok(())
        }
        Cmd::Export { model, out, src } => {
            let r = src.load(&model)?;
            save_model_file(&r, &out)?;
            println!("wrote {} (version {}) to {}", r.key, r.version, out.display());
            Ok(())
        }
        Cmd::Import { file, model_pool } => {
            let r = load_model_file(&file)?;
            let key = r.key.clone();
            RpcClient::new(&model_pool).put_model(r)?;
            println!("put {key} into {model_pool}");
            Ok(())
        }
        Cmd::Pool(a) => {
            services::install_term_handler();
            services::run_pool(a)
        }
        Cmd::League(a) => {
            services::install_term_handler();
            services::run_league(a)
        }
        Cmd::Learner(a) => {
            services::install_term_handler();
            services::run_learner(a)
        }
        Cmd::Inf(a) => {
            services::install_term_handler();
            services::run_inf(a)
        }
        Cmd::Actor(a) => {
            services::install_term_handler();
            services::run_actor(a)
        }
    }
}
