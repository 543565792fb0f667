//! Head-to-head evaluation and the best-response oracle for one-shot matrix games.

use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{make_env, EnvSpec, Outcome};
use crate::error::{Error, Result};
use crate::policy::{self, ParamBlob};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub key_a: String,
    pub key_b: String,
    pub n_episodes: u64,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// Ties count half.
    pub win_rate: f64,
    pub exploitability: Option<f64>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} vs {}: episodes={} wins={} losses={} ties={} win_rate={:.4}",
            self.key_a, self.key_b, self.n_episodes, self.wins, self.losses, self.ties, self.win_rate
        )?;
        if let Some(e) = self.exploitability {
            write!(f, " exploitability_a={e:.6}")?;
        }
        Ok(())
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Plays `n_episodes` of `a` against `b` on a two-player env. Episodes come in pairs that
/// replay the same random streams with seats swapped, so `evaluate(b, a)` mirrors
/// `evaluate(a, b)` exactly when `n_episodes` is even.
pub fn evaluate(
    a: (&str, &ParamBlob),
    b: (&str, &ParamBlob),
    env_spec: &EnvSpec,
    n_episodes: u64,
    seed: u64,
) -> Result<EvalReport> {
    let mut env = make_env(env_spec)?;
    if env.n_agents() != 2 {
        return Err(Error::InvalidArgument("evaluation needs a two-player env".into()));
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for i in 0..n_episodes {
        let pair = i / 2;
        let a_seat = (i % 2) as usize;
        let blobs = if a_seat == 0 { [a.1, b.1] } else { [b.1, a.1] };
        env.reseed(mix(seed, pair, 7));
        let mut rngs = [
            ChaCha8Rng::seed_from_u64(mix(seed, pair, 0)),
            ChaCha8Rng::seed_from_u64(mix(seed, pair, 1)),
        ];
        let mut obs = env.reset();
        let outcome = loop {
            let mut actions = [0usize; 2];
            for seat in 0..2 {
                let d = policy::action_distribution(blobs[seat], &obs[seat])?;
                actions[seat] = policy::sample_action(&d, &mut rngs[seat]).0;
            }
            let r = env.step(&actions)?;
            if r.done {
                let o = r.info.outcome.ok_or_else(|| Error::Protocol("episode ended without an outcome".into()))?;
                break o[a_seat];
            }
            obs = r.observations;
        };
        match outcome {
            Outcome::Win => wins += 1,
            Outcome::Loss => losses += 1,
            Outcome::Tie => ties += 1,
        }
    }
    let win_rate = if n_episodes == 0 {
        0.5
    } else {
        (wins as f64 + 0.5 * ties as f64) / n_episodes as f64
    };
    let exploitability = exploitability(a.1, env_spec).ok();
    Ok(EvalReport {
        key_a: a.0.to_string(),
        key_b: b.0.to_string(),
        n_episodes,
        wins,
        losses,
        ties,
        win_rate,
        exploitability,
    })
}

/// Best-response value against mixed strategy `probs`: `max_j sum_i probs[i] * table[j][i]`.
pub fn best_response_value(probs: &[f64], table: &[Vec<f64>]) -> Result<f64> {
    if table.len() != probs.len() || table.iter().any(|r| r.len() != probs.len()) {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for a {}x{} table",
            probs.len(),
            table.len(),
            table.first().map_or(0, |r| r.len())
        )));
    }
    Ok(table
        .iter()
        .map(|row| row.iter().zip(probs).map(|(a, p)| a * p).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Action distribution of a policy in a one-shot game (its only observation).
pub fn one_shot_policy(blob: &ParamBlob, env_spec: &EnvSpec) -> Result<Vec<f64>> {
    let mut env = make_env(env_spec)?;
    if env.horizon() != 1 || env.payoff_table().is_none() {
        return Err(Error::InvalidArgument(format!(
            "{} is not a one-shot matrix game",
            env_spec.env_name
        )));
    }
    let obs = env.reset();
    Ok(policy::action_distribution(blob, &obs[0])?.probs)
}

/// Exploitability of a policy in a one-shot matrix game.
pub fn exploitability(blob: &ParamBlob, env_spec: &EnvSpec) -> Result<f64> {
    let probs = one_shot_policy(blob, env_spec)?;
    let env = make_env(env_spec)?;
    best_response_value(&probs, env.payoff_table().expect("checked above"))
}

/// Element-wise mean of several action distributions.
pub fn average_policy(policies: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = policies.first().ok_or_else(|| Error::InvalidArgument("no policies to average".into()))?;
    let mut out = vec![0.0; first.len()];
    for p in policies {
        if p.len() != out.len() {
            return Err(Error::ShapeMismatch("policies differ in action count".into()));
        }
        for (o, x) in out.iter_mut().zip(p) {
            *o += x;
        }
    }
    let n = policies.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
