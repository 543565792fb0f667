//! Opponent sampling φ ∼ Q(M).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::league::payoff::PayoffMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    SelfPlayLatest,
    UniformRecentK,
    Pfsp,
    Mixture,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::SelfPlayLatest => "self_play_latest",
            SchemeKind::UniformRecentK => "uniform_recent_K",
            SchemeKind::Pfsp => "pfsp",
            SchemeKind::Mixture => "mixture",
        }
    }

    pub fn parse(s: &str) -> Result<SchemeKind> {
        match s {
            "self_play_latest" | "self_play" => Ok(SchemeKind::SelfPlayLatest),
            "uniform_recent_K" | "uniform_recent_k" | "uniform" => Ok(SchemeKind::UniformRecentK),
            "pfsp" => Ok(SchemeKind::Pfsp),
            "mixture" => Ok(SchemeKind::Mixture),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampling scheme '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingScheme {
    pub kind: SchemeKind,
    pub k: usize,
    pub pfsp_exponent: f64,
    /// Probability of pure self-play under `Mixture`; the rest goes to PFSP.
    pub mixture_self_play_weight: f64,
    /// Gaussian Elo matching width σ, when enabled.
    pub elo_matching: Option<f64>,
}

impl Default for SamplingScheme {
    fn default() -> Self {
        SamplingScheme {
            kind: SchemeKind::SelfPlayLatest,
            k: 50,
            pfsp_exponent: 2.0,
            mixture_self_play_weight: 0.35,
            elo_matching: None,
        }
    }
}

impl SamplingScheme {
    pub fn of(kind: SchemeKind) -> Self {
        SamplingScheme {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        if !(self.pfsp_exponent > 0.0) || !self.pfsp_exponent.is_finite() {
            return Err(Error::InvalidArgument("pfsp_exponent must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mixture_self_play_weight) {
            return Err(Error::InvalidArgument(
                "mixture_self_play_weight must be in [0, 1]".into(),
            ));
        }
        if let Some(s) = self.elo_matching {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("elo sigma must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// PFSP priority `(1 − p)^exponent`.
pub fn pfsp_weight(win_rate: f64, exponent: f64) -> f64 {
    (1.0 - win_rate).powf(exponent)
}

fn elo_factor(payoff: &PayoffMatrix, current: &str, key: &str, sigma: Option<f64>) -> Result<f64> {
    match sigma {
        None => Ok(1.0),
        Some(s) if s.is_infinite() => Ok(1.0),
        Some(s) => {
            let d = payoff.elo(key)? - payoff.elo(current)?;
            Ok((-(d * d) / (2.0 * s * s)).exp())
        }
    }
}

fn normalize(mut w: Vec<(String, f64)>) -> Vec<(String, f64)> {
    let total: f64 = w.iter().map(|(_, x)| x).sum();
    if total > 0.0 && total.is_finite() {
        for (_, x) in w.iter_mut() {
            *x /= total;
        }
    } else {
        // every weight underflowed: fall back to uniform
        let n = w.len() as f64;
        for (_, x) in w.iter_mut() {
            *x = 1.0 / n;
        }
    }
    w
}

fn pfsp_weights(
    payoff: &PayoffMatrix,
    current: &str,
    candidates: &[String],
    scheme: &SamplingScheme,
) -> Result<Vec<(String, f64)>> {
    let mut w = Vec::with_capacity(candidates.len());
    for c in candidates {
        let p = payoff.win_rate(current, c)?;
        let f = pfsp_weight(p, scheme.pfsp_exponent) * elo_factor(payoff, current, c, scheme.elo_matching)?;
        w.push((c.clone(), f));
    }
    Ok(normalize(w))
}

/// Analytic opponent distribution. `candidates` are the frozen pool members in creation
/// order; the current model appears only for self-play and mixture schemes.
pub fn opponent_weights(
    payoff: &PayoffMatrix,
    current: &str,
    candidates: &[String],
    scheme: &SamplingScheme,
) -> Result<Vec<(String, f64)>> {
    scheme.validate()?;
    if scheme.kind == SchemeKind::SelfPlayLatest {
        return Ok(vec![(current.to_string(), 1.0)]);
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    match scheme.kind {
        SchemeKind::SelfPlayLatest => unreachable!(),
        SchemeKind::UniformRecentK => {
            let start = candidates.len().saturating_sub(scheme.k);
            let mut w = Vec::new();
            for c in &candidates[start..] {
                w.push((c.clone(), elo_factor(payoff, current, c, scheme.elo_matching)?));
            }
            Ok(normalize(w))
        }
        SchemeKind::Pfsp => pfsp_weights(payoff, current, candidates, scheme),
        SchemeKind::Mixture => {
            let sp = scheme.mixture_self_play_weight;
            let mut w = vec![(current.to_string(), sp)];
            for (k, x) in pfsp_weights(payoff, current, candidates, scheme)? {
                if k == current {
                    w[0].1 += (1.0 - sp) * x;
                } else {
                    w.push((k, (1.0 - sp) * x));
                }
            }
            Ok(w)
        }
    }
}

/// Inverse-CDF draw from normalized weights.
pub fn draw_weighted<'a>(weights: &'a [(String, f64)], rng: &mut ChaCha8Rng) -> &'a str {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (k, w) in weights {
        cum += w;
        if u < cum {
            return k;
        }
    }
    weights
        .iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map(|(k, _)| k.as_str())
        .unwrap_or(&weights[weights.len() - 1].0)
}

pub fn sample_opponent(
    payoff: &PayoffMatrix,
    current: &str,
    candidates: &[String],
    scheme: &SamplingScheme,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let w = opponent_weights(payoff, current, candidates, scheme)?;
    Ok(draw_weighted(&w, rng).to_string())
}

/// Opponent-selection policy of one learner group. Implement this to plug in a new scheme.
pub trait GameMgr: Send {
    fn sample(
        &mut self,
        payoff: &PayoffMatrix,
        current: &str,
        candidates: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Result<String>;

    fn name(&self) -> String;
}

/// `GameMgr` driven by a `SamplingScheme`.
#[derive(Debug, Clone)]
pub struct SchemeGameMgr(pub SamplingScheme);

impl GameMgr for SchemeGameMgr {
    fn sample(
        &mut self,
        payoff: &PayoffMatrix,
        current: &str,
        candidates: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Result<String> {
        sample_opponent(payoff, current, candidates, &self.0, rng)
    }

    fn name(&self) -> String {
        self.0.kind.as_str().to_string()
    }
}
