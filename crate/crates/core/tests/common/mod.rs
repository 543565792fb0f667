#![allow(dead_code)]

use std::path::PathBuf;

use league_core::env::Outcome;
use league_core::league::Task;
use league_core::model_pool::{ModelInfo, ModelRecord};
use league_core::policy::{ActionDistribution, ParamBlob, PolicyFamily, PolicyShape};
use league_core::proto::{Message, Payload};
use league_core::rl::{self, HyperParams, LossSample, PolicyObjective};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use league_core::segment::{Step, TrajectorySegment};
use proptest::prelude::*;

pub fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

// ---- fixed messages for golden vectors ----

pub fn sample_hyper() -> HyperParams {
    HyperParams {
        learning_rate: 0.25,
        ent_coef: 0.5,
        batch_size: 128,
        ..HyperParams::default()
    }
}

pub fn sample_blob() -> ParamBlob {
    ParamBlob::new(
        PolicyFamily::TabularSoftmax,
        PolicyShape::new(1, 3),
        vec![0.5, -0.25, 0.125, 1.0],
    )
    .unwrap()
}

pub fn golden_messages() -> Vec<(&'static str, Message)> {
    let task = Task {
        task_id: 42,
        learner_group: 0,
        learning_model_key: "main:0003".into(),
        opponent_model_keys: vec!["main:0001".into()],
        hyperparams: sample_hyper(),
    };
    let mut rec = ModelRecord::new("main:0003", sample_blob(), sample_hyper());
    rec.parent_key = Some("main:0002".into());
    rec.created_at = 3;
    rec.version = 17;
    let seg = TrajectorySegment {
        actor_id: 5,
        model_key: "main:0003".into(),
        model_version: 17,
        segment_seq: 9,
        steps: vec![
            Step {
                obs: vec![1.0],
                action: 2,
                reward: -1.0,
                behavior_logp: -1.5,
                value_est: 0.25,
                done: true,
                valid: true,
            },
            Step::padding(1),
        ],
        bootstrap_value: 0.0,
    };
    vec![
        ("ack", Message::new(0, Payload::Ack)),
        ("task_request", Message::new(1, Payload::TaskRequest { actor_id: 7, group: 0 })),
        ("task_reply", Message::new(2, Payload::TaskReply(task.clone()))),
        (
            "outcome_report",
            Message::new(3, Payload::OutcomeReport {
                task_id: 42,
                outcomes: vec![Outcome::Win, Outcome::Loss],
            }),
        ),
        ("segment_push", Message::new(4, Payload::SegmentPush(seg))),
        ("param_get", Message::new(5, Payload::ParamGet { model_key: "main:0003".into() })),
        ("param_put", Message::new(6, Payload::ParamPut(rec.clone()))),
        ("param_reply", Message::new(7, Payload::ParamReply(rec))),
        ("freeze_model", Message::new(8, Payload::FreezeModel { model_key: "main:0002".into() })),
        (
            "list_models",
            Message::new(9, Payload::ListModels(vec![ModelInfo {
                key: "main:0000".into(),
                frozen: true,
                created_at: 0,
            }])),
        ),
        (
            "inference_request",
            Message::new(10, Payload::InferenceRequest { actor_id: 3, obs: vec![1.0] }),
        ),
        (
            "inference_reply",
            Message::new(11, Payload::InferenceReply {
                model_version: 17,
                dist: ActionDistribution::from_logits(vec![0.5, -0.25, 0.125]),
                value: 1.0,
            }),
        ),
        ("learner_task_request", Message::new(12, Payload::LearnerTaskRequest { group: 0, rank: 0 })),
        ("learner_task_reply", Message::new(13, Payload::LearnerTaskReply(task))),
        ("end_learning_period", Message::new(14, Payload::EndLearningPeriod { group: 0 })),
        ("error", Message::new(15, Payload::Error { code: 2, message: "main:0001".into() })),
    ]
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn from_hex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

/// `name hex` lines from `testdata/golden_frames.txt`.
pub fn golden_file() -> Vec<(String, Vec<u8>)> {
    let text = std::fs::read_to_string(testdata("golden_frames.txt")).expect("golden file present");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (name, hex) = l.split_once(' ').unwrap();
            (name.to_string(), from_hex(hex.trim()))
        })
        .collect()
}

// ---- proptest strategies ----

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
        Just(-1e-300),
    ]
}

fn key() -> impl Strategy<Value = String> {
    "[a-z]{1,6}:[0-9]{4}"
}

pub fn arb_hyper() -> impl Strategy<Value = HyperParams> {
    (
        prop::array::uniform10(finite()),
        any::<u32>(),
        any::<u32>(),
        any::<u32>(),
        any::<bool>(),
    )
        .prop_map(|(r, b, u, m, n)| HyperParams {
            learning_rate: r[0],
            gamma: r[1],
            lam: r[2],
            clip_eps: r[3],
            vf_coef: r[4],
            ent_coef: r[5],
            kl_teacher_coef: r[6],
            rho_bar: r[7],
            c_bar: r[8],
            elo_sigma: r[9],
            batch_size: b,
            unroll_len: u,
            max_reuse: m,
            normalize_advantages: n,
        })
}

pub fn arb_blob() -> impl Strategy<Value = ParamBlob> {
    (any::<bool>(), 1usize..5, 1usize..5).prop_flat_map(|(tab, obs_dim, n_actions)| {
        let family = if tab { PolicyFamily::TabularSoftmax } else { PolicyFamily::LinearSoftmax };
        let shape = PolicyShape::new(obs_dim, n_actions);
        prop::collection::vec(finite(), shape.param_len(family))
            .prop_map(move |v| ParamBlob::new(family, shape, v).unwrap())
    })
}

pub fn arb_task() -> impl Strategy<Value = Task> {
    (any::<u64>(), any::<u32>(), key(), prop::collection::vec(key(), 0..4), arb_hyper()).prop_map(
        |(task_id, learner_group, learning_model_key, opponent_model_keys, hyperparams)| Task {
            task_id,
            learner_group,
            learning_model_key,
            opponent_model_keys,
            hyperparams,
        },
    )
}

pub fn arb_record() -> impl Strategy<Value = ModelRecord> {
    (key(), arb_blob(), arb_hyper(), prop::option::of(key()), any::<u64>(), any::<bool>(), any::<u64>())
        .prop_map(|(key, params, hyperparams, parent_key, created_at, frozen, version)| ModelRecord {
            key,
            params,
            hyperparams,
            parent_key,
            created_at,
            frozen,
            version,
        })
}

fn arb_outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![Just(Outcome::Win), Just(Outcome::Loss), Just(Outcome::Tie)]
}

pub fn arb_segment() -> impl Strategy<Value = TrajectorySegment> {
    let step = (0usize..4).prop_flat_map(|_| {
        (
            prop::collection::vec(finite(), 3),
            any::<u32>(),
            finite(),
            finite(),
            finite(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(obs, action, reward, behavior_logp, value_est, done, valid)| Step {
                obs,
                action,
                reward,
                behavior_logp,
                value_est,
                done,
                valid,
            })
    });
    (any::<u32>(), key(), any::<u64>(), any::<u64>(), prop::collection::vec(step, 0..5), finite()).prop_map(
        |(actor_id, model_key, model_version, segment_seq, steps, bootstrap_value)| TrajectorySegment {
            actor_id,
            model_key,
            model_version,
            segment_seq,
            steps,
            bootstrap_value,
        },
    )
}

pub fn arb_payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        (any::<u32>(), any::<u32>()).prop_map(|(actor_id, group)| Payload::TaskRequest { actor_id, group }),
        arb_task().prop_map(Payload::TaskReply),
        (any::<u64>(), prop::collection::vec(arb_outcome(), 0..4))
            .prop_map(|(task_id, outcomes)| Payload::OutcomeReport { task_id, outcomes }),
        arb_segment().prop_map(Payload::SegmentPush),
        key().prop_map(|model_key| Payload::ParamGet { model_key }),
        arb_record().prop_map(Payload::ParamPut),
        arb_record().prop_map(Payload::ParamReply),
        key().prop_map(|model_key| Payload::FreezeModel { model_key }),
        prop::collection::vec((key(), any::<bool>(), any::<u64>()), 0..4).prop_map(|v| Payload::ListModels(
            v.into_iter()
                .map(|(key, frozen, created_at)| ModelInfo { key, frozen, created_at })
                .collect()
        )),
        (any::<u32>(), prop::collection::vec(finite(), 0..6))
            .prop_map(|(actor_id, obs)| Payload::InferenceRequest { actor_id, obs }),
        (any::<u64>(), prop::collection::vec(-30.0f64..30.0, 1..5), finite()).prop_map(|(model_version, logits, value)| {
            Payload::InferenceReply {
                model_version,
                dist: ActionDistribution::from_logits(logits),
                value,
            }
        }),
        (any::<u32>(), any::<u32>()).prop_map(|(group, rank)| Payload::LearnerTaskRequest { group, rank }),
        arb_task().prop_map(Payload::LearnerTaskReply),
        any::<u32>().prop_map(|group| Payload::EndLearningPeriod { group }),
        Just(Payload::Ack),
        (any::<u16>(), ".{0,20}").prop_map(|(code, message)| Payload::Error { code, message }),
    ]
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    (any::<u64>(), arb_payload()).prop_map(|(id, p)| Message::new(id, p))
}

// ---- naive oracles for the return/advantage kernels ----

fn discounts(dones: &[bool], gamma: f64) -> Vec<f64> {
    dones.iter().map(|d| if *d { 0.0 } else { gamma }).collect()
}

fn value_at(values: &[f64], bootstrap: f64, i: usize) -> f64 {
    if i < values.len() { values[i] } else { bootstrap }
}

/// n-step return from `t`, truncated at the segment end.
fn n_step(rewards: &[f64], values: &[f64], bootstrap: f64, g: &[f64], t: usize, n: usize) -> f64 {
    let mut acc = 0.0;
    let mut disc = 1.0;
    for k in 0..n {
        acc += disc * rewards[t + k];
        disc *= g[t + k];
    }
    acc + disc * value_at(values, bootstrap, t + n)
}

/// λ-return as the λ-weighted mixture of n-step returns.
pub fn oracle_lambda_return(rewards: &[f64], values: &[f64], bootstrap: f64, dones: &[bool], gamma: f64, lam: f64) -> Vec<f64> {
    let l = rewards.len();
    let g = discounts(dones, gamma);
    (0..l)
        .map(|t| {
            let big_n = l - t;
            let mut acc = 0.0;
            for n in 1..big_n {
                acc += (1.0 - lam) * lam.powi(n as i32 - 1) * n_step(rewards, values, bootstrap, &g, t, n);
            }
            acc + lam.powi(big_n as i32 - 1) * n_step(rewards, values, bootstrap, &g, t, big_n)
        })
        .collect()
}

/// GAE as the explicit discounted sum of TD residuals.
pub fn oracle_gae(rewards: &[f64], values: &[f64], bootstrap: f64, dones: &[bool], gamma: f64, lam: f64) -> Vec<f64> {
    let l = rewards.len();
    let g = discounts(dones, gamma);
    let delta: Vec<f64> = (0..l)
        .map(|t| rewards[t] + g[t] * value_at(values, bootstrap, t + 1) - values[t])
        .collect();
    (0..l)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for k in t..l {
                acc += w * delta[k];
                w *= g[k] * lam;
            }
            acc
        })
        .collect()
}

/// V-trace targets from the explicit product-sum definition.
#[allow(clippy::too_many_arguments)]
pub fn oracle_vtrace(
    behavior: &[f64],
    target: &[f64],
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    dones: &[bool],
    gamma: f64,
    rho_bar: f64,
    c_bar: f64,
) -> (Vec<f64>, Vec<f64>) {
    let l = rewards.len();
    let g = discounts(dones, gamma);
    let ratio: Vec<f64> = (0..l).map(|t| (target[t] - behavior[t]).exp()).collect();
    let rho: Vec<f64> = ratio.iter().map(|r| r.min(rho_bar)).collect();
    let c: Vec<f64> = ratio.iter().map(|r| r.min(c_bar)).collect();
    let delta: Vec<f64> = (0..l)
        .map(|t| rho[t] * (rewards[t] + g[t] * value_at(values, bootstrap, t + 1) - values[t]))
        .collect();
    let vs: Vec<f64> = (0..l)
        .map(|s| {
            let mut acc = values[s];
            for t in s..l {
                let mut w = 1.0;
                for i in s..t {
                    w *= g[i] * c[i];
                }
                acc += w * delta[t];
            }
            acc
        })
        .collect();
    let pg = (0..l)
        .map(|s| {
            let next = if s + 1 < l { vs[s + 1] } else { bootstrap };
            rho[s] * (rewards[s] + g[s] * next - values[s])
        })
        .collect();
    (vs, pg)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- league fixtures ----

pub fn tabular_rps_seed() -> ParamBlob {
    ParamBlob::zeros(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 3)).unwrap()
}

/// A started league with `frozen` finished periods.
pub fn league_with_history(
    scheme: league_core::league::SamplingScheme,
    frozen: u32,
    seed: u64,
) -> (std::sync::Arc<league_core::league::LeagueMgr>, std::sync::Arc<league_core::model_pool::ModelPool>) {
    use league_core::api::LeagueApi;
    use league_core::league::{GroupConfig, LeagueConfig, LeagueMgr};
    use std::sync::Arc;
    let pool = Arc::new(league_core::model_pool::ModelPool::default());
    let cfg = LeagueConfig::single(
        GroupConfig {
            lineage: "main".into(),
            scheme,
            hyper: HyperParams::default(),
            seed_params: tabular_rps_seed(),
            opponent_group: None,
        },
        seed,
    );
    let league = Arc::new(LeagueMgr::new(cfg, pool.clone()).unwrap());
    league.request_learner_task(0, 0).unwrap();
    for _ in 0..frozen {
        league.end_learning_period(0).unwrap();
    }
    (league, pool)
}

pub struct Fidelity {
    pub draws: usize,
    pub tv: f64,
    /// Largest per-key |empirical − analytic|.
    pub max_dev: f64,
    pub analytic: Vec<(String, f64)>,
}

/// Opponent weights computed from the payoff counts alone: smoothed win rate
/// `(w + t/2 + 1)/(n + 2)`, PFSP priority `(1 − p)^e`.
pub fn analytic_weights(
    league: &league_core::league::LeagueMgr,
    scheme: &league_core::league::SamplingScheme,
) -> Vec<(String, f64)> {
    use league_core::league::SchemeKind;
    let current = league.current_key(0).unwrap();
    let frozen = league.frozen_keys();
    let payoff = league.payoff();
    let pfsp = || {
        let raw: Vec<(String, f64)> = frozen
            .iter()
            .map(|k| {
                let (w, l, t) = payoff.counts(&current, k).unwrap();
                let p = (w as f64 + t as f64 / 2.0 + 1.0) / ((w + l + t) as f64 + 2.0);
                (k.clone(), (1.0 - p).powf(scheme.pfsp_exponent))
            })
            .collect();
        let z: f64 = raw.iter().map(|(_, x)| x).sum();
        raw.into_iter().map(|(k, x)| (k, x / z)).collect::<Vec<_>>()
    };
    match scheme.kind {
        SchemeKind::SelfPlayLatest => vec![(current.clone(), 1.0)],
        SchemeKind::UniformRecentK => {
            let recent = &frozen[frozen.len().saturating_sub(scheme.k)..];
            recent.iter().map(|k| (k.clone(), 1.0 / recent.len() as f64)).collect()
        }
        SchemeKind::Pfsp => pfsp(),
        SchemeKind::Mixture => {
            let sp = scheme.mixture_self_play_weight;
            let mut w = vec![(current.clone(), sp)];
            w.extend(pfsp().into_iter().map(|(k, x)| (k, (1.0 - sp) * x)));
            w
        }
    }
}

/// Sampling fidelity of one scheme through `LeagueMgr::request_actor_task`. Win-rate based
/// schemes first get uneven payoff statistics from reported games.
pub fn sampling_fidelity(scheme: league_core::league::SamplingScheme, draws: usize, seed: u64) -> Fidelity {
    use league_core::api::LeagueApi;
    use league_core::env::Outcome;
    use league_core::league::SchemeKind;
    use rand::{Rng, SeedableRng};
    use std::collections::HashMap;

    let frozen = match scheme.kind {
        SchemeKind::UniformRecentK => 100,
        _ => 20,
    };
    let (league, _pool) = league_with_history(scheme, frozen, seed);
    if matches!(scheme.kind, SchemeKind::Pfsp | SchemeKind::Mixture) {
        // Per-opponent true win probability rises with generation.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..4000 {
            let t = league.request_actor_task(0, 0).unwrap();
            let opp = &t.opponent_model_keys[0];
            let gen: f64 = opp.rsplit(':').next().unwrap().parse::<f64>().unwrap();
            let p_win = 0.05 + 0.9 * gen / frozen as f64;
            let o = if rng.gen_bool(p_win.min(0.95)) { Outcome::Win } else { Outcome::Loss };
            league.report_outcome(t.task_id, &[o, o.flip()]).unwrap();
        }
    }
    let analytic = analytic_weights(&league, &scheme);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for _ in 0..draws {
        let t = league.request_actor_task(0, 0).unwrap();
        *counts.entry(t.opponent_model_keys[0].clone()).or_default() += 1;
    }
    let mut tv = 0.0;
    let mut max_dev: f64 = 0.0;
    for (k, w) in &analytic {
        let emp = counts.remove(k).unwrap_or(0) as f64 / draws as f64;
        tv += (emp - w).abs();
        max_dev = max_dev.max((emp - w).abs());
    }
    // Keys drawn that the oracle gives zero weight.
    for (_, c) in counts {
        let emp = c as f64 / draws as f64;
        tv += emp;
        max_dev = max_dev.max(emp);
    }
    Fidelity {
        draws,
        tv: tv / 2.0,
        max_dev,
        analytic,
    }
}

// ---- model pool stress ----

#[derive(Debug, Default, Clone)]
pub struct StressReport {
    pub reads: u64,
    pub torn_reads: u64,
    /// Reads whose checksum matches no completed put.
    pub unknown_blobs: u64,
    pub frozen_violations: u64,
    pub swaps: u64,
}

fn filled(key: &str, fill: f64) -> ModelRecord {
    let shape = PolicyShape::new(64, 15);
    let n = shape.param_len(PolicyFamily::TabularSoftmax);
    let params = ParamBlob::new(PolicyFamily::TabularSoftmax, shape, vec![fill; n]).unwrap();
    ModelRecord::new(key, params, HyperParams::default())
}

/// `readers` threads read a key while one writer swaps in `swaps` blobs whose entries all
/// equal the swap index, through a primary with `followers` replicas. The writer also
/// writes to a frozen key and races puts against a concurrent freeze.
pub fn pool_stress(readers: usize, swaps: u64, followers: usize, seed: u64) -> StressReport {
    use league_core::api::ModelPoolApi;
    use league_core::model_pool::{ModelPool, PoolRole, ReplicatedPool};
    use league_core::Error;
    use std::collections::HashSet;
    use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
    use std::sync::{Arc, Mutex};
    use std::thread;

    let primary = Arc::new(ModelPool::new(PoolRole::Primary));
    let mut replicas: Vec<Arc<dyn ModelPoolApi>> = vec![primary.clone()];
    for _ in 0..followers {
        let f = Arc::new(ModelPool::new(PoolRole::Follower));
        primary.add_follower(f.clone());
        replicas.push(f);
    }
    let pool = Arc::new(ReplicatedPool::new(replicas, seed).unwrap());
    pool.put_model(filled("main:0000", 0.0)).unwrap();
    pool.put_model(filled("frozen:0000", -1.0)).unwrap();
    pool.freeze_model("frozen:0000").unwrap();

    let completed = Arc::new(Mutex::new(HashSet::from([filled("main:0000", 0.0).params.checksum()])));
    let seen = Arc::new(Mutex::new(HashSet::new()));
    let done = Arc::new(AtomicBool::new(false));
    let reads = Arc::new(AtomicU64::new(0));
    let torn = Arc::new(AtomicU64::new(0));
    let frozen_bad = Arc::new(AtomicU64::new(0));

    let mut handles = Vec::new();
    for r in 0..readers {
        let (pool, done, reads, torn, frozen_bad, seen) =
            (pool.clone(), done.clone(), reads.clone(), torn.clone(), frozen_bad.clone(), seen.clone());
        handles.push(thread::spawn(move || {
            let mut local = HashSet::new();
            let mut i = 0u64;
            while !done.load(Ordering::Acquire) || i < 4 {
                let rec = pool.get_model("main:0000").unwrap();
                let first = rec.params.values[0];
                if rec.params.values.iter().any(|v| v.to_bits() != first.to_bits()) {
                    torn.fetch_add(1, Ordering::Relaxed);
                }
                local.insert(rec.params.checksum());
                if (i + r as u64) % 16 == 0 {
                    let f = pool.get_model("frozen:0000").unwrap();
                    if !f.frozen || f.params.values.iter().any(|v| *v != -1.0) {
                        frozen_bad.fetch_add(1, Ordering::Relaxed);
                    }
                }
                reads.fetch_add(1, Ordering::Relaxed);
                i += 1;
                if i % 8 == 0 {
                    thread::yield_now();
                }
            }
            seen.lock().unwrap().extend(local);
        }));
    }

    for k in 1..=swaps {
        let rec = filled("main:0000", k as f64);
        let sum = rec.params.checksum();
        pool.put_model(rec).unwrap();
        completed.lock().unwrap().insert(sum);
        if !matches!(pool.put_model(filled("frozen:0000", k as f64)), Err(Error::ModelFrozen(_))) {
            frozen_bad.fetch_add(1, Ordering::Relaxed);
        }
        if k % 50 == 0 {
            // Freeze/put race on a fresh key.
            let key = format!("race:{k:04}");
            pool.put_model(filled(&key, 0.0)).unwrap();
            let acked = Arc::new(AtomicBool::new(false));
            let freezer = {
                let (pool, key, acked) = (pool.clone(), key.clone(), acked.clone());
                thread::spawn(move || {
                    pool.freeze_model(&key).unwrap();
                    acked.store(true, Ordering::SeqCst);
                })
            };
            for j in 0..200 {
                let after_ack = acked.load(Ordering::SeqCst);
                let res = pool.put_model(filled(&key, j as f64));
                if after_ack && res.is_ok() {
                    frozen_bad.fetch_add(1, Ordering::Relaxed);
                }
            }
            freezer.join().unwrap();
            if pool.put_model(filled(&key, 0.5)).is_ok() {
                frozen_bad.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
    done.store(true, Ordering::Release);
    for h in handles {
        h.join().unwrap();
    }
    let completed = completed.lock().unwrap();
    let unknown = seen.lock().unwrap().iter().filter(|c| !completed.contains(*c)).count() as u64;
    StressReport {
        reads: reads.load(Ordering::Relaxed),
        torn_reads: torn.load(Ordering::Relaxed),
        unknown_blobs: unknown,
        frozen_violations: frozen_bad.load(Ordering::Relaxed),
        swaps,
    }
}

// ---- learner fixtures ----

pub fn linear_shape() -> PolicyShape {
    PolicyShape::new(4, 3)
}

pub fn linear_seed() -> ParamBlob {
    league_core::policy::init_params(PolicyFamily::LinearSoftmax, linear_shape(), 0.3, 42).unwrap()
}

/// A full-length segment of random steps whose behaviour log-probs come from `blob`.
pub fn synthetic_segment(
    blob: &ParamBlob,
    key: &str,
    actor_id: u32,
    seq: u64,
    l: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> TrajectorySegment {
    use league_core::segment::Step;
    use rand::Rng;
    let dim = blob.shape.obs_dim;
    let steps = (0..l)
        .map(|i| {
            let obs: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (d, v) = league_core::policy::evaluate(blob, &obs).unwrap();
            let (a, lp) = league_core::policy::sample_action(&d, rng);
            Step {
                obs,
                action: a as u32,
                reward: rng.gen_range(-1.0..1.0),
                behavior_logp: lp,
                value_est: v,
                done: i + 1 == l && rng.gen_bool(0.5),
                valid: true,
            }
        })
        .collect();
    TrajectorySegment {
        actor_id,
        model_key: key.to_string(),
        model_version: 1,
        segment_seq: seq,
        steps,
        bootstrap_value: rng.gen_range(-1.0..1.0),
    }
}

pub fn learner_league(
    seed_params: ParamBlob,
    hyper: HyperParams,
) -> (std::sync::Arc<league_core::league::LeagueMgr>, std::sync::Arc<league_core::model_pool::ModelPool>) {
    use league_core::league::{GroupConfig, LeagueConfig, LeagueMgr, SamplingScheme, SchemeKind};
    use std::sync::Arc;
    let pool = Arc::new(league_core::model_pool::ModelPool::default());
    let cfg = LeagueConfig::single(
        GroupConfig {
            lineage: "main".into(),
            scheme: SamplingScheme::of(SchemeKind::SelfPlayLatest),
            hyper,
            seed_params,
            opponent_group: None,
        },
        1,
    );
    (Arc::new(LeagueMgr::new(cfg, pool.clone()).unwrap()), pool)
}

/// Polls until `f` holds or `timeout` passes.
pub fn wait_until(timeout: std::time::Duration, mut f: impl FnMut() -> bool) -> bool {
    let t0 = std::time::Instant::now();
    while t0.elapsed() < timeout {
        if f() {
            return true;
        }
        std::thread::sleep(std::time::Duration::from_millis(2));
    }
    f()
}

#[derive(Debug, Clone)]
pub struct ShardEquivalence {
    pub steps: u64,
    /// Steps whose published params equal the serial replay bit for bit.
    pub bit_identical: u64,
    /// Largest difference between a sharded update and the concatenated-batch update.
    pub max_concat_diff: f64,
}

/// Runs an M_L = 2 learner group for `steps` updates on synthetic data and checks every
/// published blob against a serial replay of the audited batches.
pub fn shard_equivalence(steps: u64, algo: league_core::rl::Algo) -> ShardEquivalence {
    use league_core::learner::{mean_in_order, minibatch_grad, train_step, LearnerConfig, LearnerGroup};
    use rand::SeedableRng;
    use std::time::Duration;

    let batch = 6;
    let hp = HyperParams {
        learning_rate: 0.05,
        normalize_advantages: false,
        ..HyperParams::default()
    };
    let seed = linear_seed();
    let (league, pool) = learner_league(seed.clone(), hp);
    let cfg = LearnerConfig {
        num_shards: 2,
        algo,
        batch_size: batch,
        max_reuse: 1,
        replay_capacity: batch * steps as usize,
        publish_interval: 1,
        period_steps: 1_000_000,
        seed: 9,
        audit: true,
        ..LearnerConfig::default()
    };
    let group = LearnerGroup::start(cfg, league, pool.clone()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
    for rank in 0..2 {
        let sink = group.sink(rank);
        for i in 0..batch as u64 * steps {
            sink.push_segment(synthetic_segment(&seed, "main:0000", rank as u32, i, 4, &mut rng)).unwrap();
        }
    }
    assert!(wait_until(Duration::from_secs(60), || group.update_steps() >= steps), "learner stalled");
    assert!(wait_until(Duration::from_secs(10), || group.audit().published.len() as u64 >= steps));
    let audit = group.audit();
    group.stop();
    group.join().unwrap();

    let mut params = seed;
    let mut bit_identical = 0;
    let mut max_concat_diff: f64 = 0.0;
    for step in 1..=steps {
        let shards = audit.batches_at(step);
        assert_eq!(shards.len(), 2, "step {step}");
        let grads: Vec<Vec<f64>> = shards
            .iter()
            .map(|s| minibatch_grad(&params, None, &s.batch, &s.hyper, algo).unwrap().0)
            .collect();
        let serial = league_core::rl::sgd_step(&params, &mean_in_order(&grads), hp.learning_rate).unwrap();
        let published = &audit.published[step as usize - 1];
        assert_eq!(published.0, step);
        if serial.bit_eq(&published.1) {
            bit_identical += 1;
        }
        let concat: Vec<_> = shards.iter().flat_map(|s| s.batch.iter().cloned()).collect();
        let (whole, _) = train_step(&params, None, &concat, &hp, algo).unwrap();
        for (a, b) in whole.values.iter().zip(&published.1.values) {
            max_concat_diff = max_concat_diff.max((a - b).abs());
        }
        params = published.1.clone();
    }
    ShardEquivalence {
        steps,
        bit_identical,
        max_concat_diff,
    }
}

// ---- remote inference ----

#[derive(Debug, Clone, Default)]
pub struct InferenceEquivalence {
    pub pairs: u64,
    pub mismatches: u64,
    pub distinct_versions: usize,
    pub version_regressions: u64,
}

/// `pairs` requests over TCP from `clients` threads while a writer keeps swapping random
/// blobs into the pool; every reply is checked against local evaluation of the blob whose
/// version it reports.
pub fn remote_equivalence(pairs: u64, clients: u64, seed: u64) -> InferenceEquivalence {
    use league_core::api::InferenceApi;
    use league_core::inf_server::{BatchPolicy, InfServer, ModelRef};
    use league_core::model_pool::ModelPool;
    use league_core::rpc::{RpcClient, Server, Services};
    use rand::{Rng, SeedableRng};
    use std::collections::{HashMap, HashSet};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::{Arc, Mutex};
    use std::thread;
    use std::time::Duration;

    let shape = PolicyShape::new(8, 5);
    let blob = move |s: u64| league_core::policy::init_params(PolicyFamily::LinearSoftmax, shape, 2.0, s).unwrap();
    let pool = Arc::new(ModelPool::default());
    let first = pool.put(ModelRecord::new("main:0000", blob(seed), HyperParams::default())).unwrap();
    let blobs = Arc::new(Mutex::new(HashMap::from([(first.version, first.params.clone())])));

    let inf = Arc::new(
        InfServer::start(
            BatchPolicy {
                max_batch: 16,
                flush_timeout: Duration::from_micros(300),
            },
            Some((pool.clone(), ModelRef::Latest("main".into()), Duration::from_millis(1))),
        )
        .unwrap(),
    );
    let server = Server::bind(
        "127.0.0.1:0",
        Services {
            infer: Some(inf.clone()),
            ..Services::default()
        },
    )
    .unwrap();
    let addr = server.local_addr().to_string();

    let done = Arc::new(AtomicBool::new(false));
    let writer = {
        let (pool, blobs, done) = (pool.clone(), blobs.clone(), done.clone());
        thread::spawn(move || {
            let mut s = seed;
            while !done.load(Ordering::SeqCst) {
                s += 1;
                let r = pool.put(ModelRecord::new("main:0000", blob(s), HyperParams::default())).unwrap();
                blobs.lock().unwrap().insert(r.version, r.params.clone());
                thread::sleep(Duration::from_micros(500));
            }
        })
    };

    let per_client = pairs / clients;
    let handles: Vec<_> = (0..clients)
        .map(|c| {
            let addr = addr.clone();
            thread::spawn(move || {
                let client = RpcClient::new(&addr);
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (c + 1));
                let mut out = Vec::with_capacity(per_client as usize);
                for _ in 0..per_client {
                    let obs: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    let r = client.infer(c as u32, &obs).unwrap();
                    out.push((obs, r));
                }
                out
            })
        })
        .collect();
    let results: Vec<Vec<_>> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    done.store(true, Ordering::SeqCst);
    writer.join().unwrap();
    drop(server);

    let blobs = blobs.lock().unwrap();
    let mut report = InferenceEquivalence::default();
    let mut versions = HashSet::new();
    for per_client in &results {
        let mut last = 0;
        for (obs, r) in per_client {
            report.pairs += 1;
            versions.insert(r.model_version);
            if r.model_version < last {
                report.version_regressions += 1;
            }
            last = r.model_version;
            let Some(b) = blobs.get(&r.model_version) else {
                report.mismatches += 1;
                continue;
            };
            let (d, v) = league_core::policy::evaluate(b, obs).unwrap();
            if !d.bit_eq(&r.dist) || v.to_bits() != r.value.to_bits() {
                report.mismatches += 1;
            }
        }
    }
    report.distinct_versions = versions.len();
    report
}

// ---- in-process runs ----

/// The RPS league run used for the convergence checks; `scheme` is a config scheme name.
pub fn rps_run_config(scheme: &str, run_dir: &std::path::Path, seed: u64, periods: u64, actors: usize, sync_push: bool) -> String {
    format!(
        "[cluster]\nactors: {actors}\nseed: {seed}\nrun_dir: {}\n\
         [env]\nname: rps\n\
         [policy]\nfamily: tabular\ninit_scale: 0.1\n\
         [hyper]\nlearning_rate: 0.25\nent_coef: 0.5\nclip_eps: 10\n\
         [learner]\nbatch_size: 128\npublish_interval: 100\nperiod_steps: 400\ntotal_periods: {periods}\nsync_push: {sync_push}\n\
         [league]\nscheme: {scheme}\nk: 50\n",
        run_dir.display()
    )
}

/// Frozen models of a finished run, in key order, with their one-shot action distributions.
pub fn frozen_policies(run_dir: &std::path::Path) -> Vec<(String, Vec<f64>)> {
    let spec = league_core::env::EnvSpec::named("rps", 0);
    let mut files: Vec<PathBuf> = std::fs::read_dir(run_dir.join("models"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let r = league_core::model_pool::load_model_file(p).unwrap();
            let probs = league_core::eval::one_shot_policy(&r.params, &spec).unwrap();
            (r.key, probs)
        })
        .collect()
}

/// Exploitability by enumerating the opponent's pure replies through the env itself.
pub fn oracle_rps_exploitability(probs: &[f64]) -> f64 {
    use league_core::env::make_env;
    let mut env = make_env(&league_core::env::EnvSpec::named("rps", 0)).unwrap();
    let mut best = f64::NEG_INFINITY;
    for reply in 0..3 {
        let mut v = 0.0;
        for (a, p) in probs.iter().enumerate() {
            env.reset();
            let r = env.step(&[a, reply]).unwrap();
            v += p * r.rewards[1];
        }
        best = best.max(v);
    }
    best
}

// ---- numerical kernels ----

pub fn random_trajectory(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64, Vec<bool>) {
    let l = rng.gen_range(1..12);
    let rewards = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let values = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let dones = (0..l).map(|_| rng.gen_bool(0.15)).collect();
    (rewards, values, rng.gen_range(-2.0..2.0), dones)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KernelWorst {
    pub lambda_return: f64,
    pub gae: f64,
    pub vtrace_vs: f64,
    pub vtrace_pg: f64,
}

/// Largest deviation of the library kernels from the naive oracles over random instances.
pub fn kernel_oracle_worst(instances: usize, seed: u64) -> KernelWorst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = KernelWorst::default();
    for _ in 0..instances {
        let (r, v, b, d) = random_trajectory(&mut rng);
        let gamma = rng.gen_range(0.0..1.0);
        let lam = rng.gen_range(0.0..=1.0);
        let g = rl::lambda_return(&r, &v, b, &d, gamma, lam).unwrap();
        w.lambda_return = w.lambda_return.max(max_abs_diff(&g, &oracle_lambda_return(&r, &v, b, &d, gamma, lam)));
        let a = rl::gae_advantages(&r, &v, b, &d, gamma, lam).unwrap();
        w.gae = w.gae.max(max_abs_diff(&a, &oracle_gae(&r, &v, b, &d, gamma, lam)));

        let l = r.len();
        let mu: Vec<f64> = (0..l).map(|_| rng.gen_range(-3.0..-0.01)).collect();
        let pi: Vec<f64> = (0..l).map(|_| rng.gen_range(-3.0..-0.01)).collect();
        let rho_bar = rng.gen_range(0.5..2.0);
        let c_bar = rng.gen_range(0.1..=rho_bar);
        let out = rl::vtrace_targets(&mu, &pi, &r, &v, b, &d, gamma, rho_bar, c_bar).unwrap();
        let (vs, pg) = oracle_vtrace(&mu, &pi, &r, &v, b, &d, gamma, rho_bar, c_bar);
        w.vtrace_vs = w.vtrace_vs.max(max_abs_diff(&out.vs, &vs));
        w.vtrace_pg = w.vtrace_pg.max(max_abs_diff(&out.pg_adv, &pg));
    }
    w
}

pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub mu: Vec<f64>,
    pub adv: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn samples(&self) -> Vec<LossSample<'_>> {
        (0..self.obs.len())
            .map(|i| LossSample {
                obs: &self.obs[i],
                action: self.actions[i],
                behavior_logp: self.mu[i],
                advantage: self.adv[i],
                value_target: self.targets[i],
            })
            .collect()
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, shape: PolicyShape, family: PolicyFamily) -> Batch {
    let n = rng.gen_range(2..16);
    let obs = (0..n)
        .map(|_| match family {
            PolicyFamily::TabularSoftmax => {
                let mut o = vec![0.0; shape.obs_dim];
                o[rng.gen_range(0..shape.obs_dim)] = 1.0;
                o
            }
            PolicyFamily::LinearSoftmax => (0..shape.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    Batch {
        obs,
        actions: (0..n).map(|_| rng.gen_range(0..shape.n_actions)).collect(),
        mu: (0..n).map(|_| rng.gen_range(-2.5..-0.3)).collect(),
        adv: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        targets: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-8)
}

pub fn central_differences(params: &ParamBlob, f: impl Fn(&ParamBlob) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..params.values.len())
        .map(|i| {
            let mut plus = params.clone();
            plus.values[i] += h;
            let mut minus = params.clone();
            minus.values[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error between analytic loss gradients and central differences.
pub fn gradient_worst(objective: PolicyObjective, cases: usize, seed: u64, with_teacher: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let family = if case % 2 == 0 { PolicyFamily::TabularSoftmax } else { PolicyFamily::LinearSoftmax };
        let shape = PolicyShape::new(rng.gen_range(1..5), rng.gen_range(2..5));
        let params = league_core::policy::init_params(family, shape, 0.8, rng.gen()).unwrap();
        let teacher = league_core::policy::init_params(family, shape, 0.8, rng.gen()).unwrap();
        let batch = random_batch(&mut rng, shape, family);
        let hp = HyperParams {
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.03,
            kl_teacher_coef: if with_teacher { 0.1 } else { 0.0 },
            normalize_advantages: case % 3 == 0,
            ..HyperParams::default()
        };
        let t = with_teacher.then_some(&teacher);
        let samples = batch.samples();
        let (_, grad, _) = rl::loss_and_grad(&params, t, &samples, &hp, objective).unwrap();
        let fd = central_differences(&params, |p| rl::loss_and_grad(p, t, &samples, &hp, objective).unwrap().0);
        let e = rel_err(&grad, &fd);
        worst = worst.max(e);
    }
    worst
}

