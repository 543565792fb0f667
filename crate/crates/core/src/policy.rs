//! Discrete-action softmax policies with an attached value head.
//!
//! Two families share one parameter layout convention:
//!
//! * `TabularSoftmax` indexes one-hot observations over `obs_dim` states. The blob is laid
//!   out state-major: for each state, `n_actions` logits followed by one value entry
//!   (`dims = [obs_dim, n_actions + 1]`).
//! * `LinearSoftmax` computes `logits = W · obs` and `value = w_v · obs`. The blob is
//!   action-major: `n_actions` rows of `W` followed by the value row
//!   (`dims = [n_actions + 1, obs_dim]`).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyFamily {
    TabularSoftmax,
    LinearSoftmax,
}

impl PolicyFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyFamily::TabularSoftmax => "tabular_softmax",
            PolicyFamily::LinearSoftmax => "linear_softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tabular_softmax" | "tabular" => Ok(PolicyFamily::TabularSoftmax),
            "linear_softmax" | "linear" => Ok(PolicyFamily::LinearSoftmax),
            other => Err(Error::InvalidArgument(format!("unknown policy family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicyShape {
    pub obs_dim: usize,
    pub n_actions: usize,
}

impl PolicyShape {
    pub fn new(obs_dim: usize, n_actions: usize) -> Self {
        PolicyShape { obs_dim, n_actions }
    }

    pub fn dims(&self, family: PolicyFamily) -> [usize; 2] {
        match family {
            PolicyFamily::TabularSoftmax => [self.obs_dim, self.n_actions + 1],
            PolicyFamily::LinearSoftmax => [self.n_actions + 1, self.obs_dim],
        }
    }

    pub fn param_len(&self, family: PolicyFamily) -> usize {
        let [a, b] = self.dims(family);
        a * b
    }

    fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.n_actions == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid policy shape obs_dim={} n_actions={}",
                self.obs_dim, self.n_actions
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector for one policy (logits and value head).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    pub family: PolicyFamily,
    pub shape: PolicyShape,
    pub values: Vec<f64>,
}

impl ParamBlob {
    pub fn new(family: PolicyFamily, shape: PolicyShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let expected = shape.param_len(family);
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} blob expects {expected} values, got {}",
                family.as_str(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", values[i])));
        }
        Ok(ParamBlob {
            family,
            shape,
            values,
        })
    }

    pub fn zeros(family: PolicyFamily, shape: PolicyShape) -> Result<Self> {
        shape.validate()?;
        Ok(ParamBlob {
            family,
            shape,
            values: vec![0.0; shape.param_len(family)],
        })
    }

    pub fn n_actions(&self) -> usize {
        self.shape.n_actions
    }

    /// Order-sensitive FNV-1a hash over the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Bit-for-bit equality (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &ParamBlob) -> bool {
        self.family == other.family
            && self.shape == other.shape
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn logit_range(&self, state_or_action: usize) -> std::ops::Range<usize> {
        match self.family {
            PolicyFamily::TabularSoftmax => {
                let stride = self.shape.n_actions + 1;
                let start = state_or_action * stride;
                start..start + self.shape.n_actions
            }
            PolicyFamily::LinearSoftmax => {
                let start = state_or_action * self.shape.obs_dim;
                start..start + self.shape.obs_dim
            }
        }
    }

    /// Mutable view of the logit block for one tabular state.
    pub fn tabular_logits_mut(&mut self, state: usize) -> Result<&mut [f64]> {
        if self.family != PolicyFamily::TabularSoftmax || state >= self.shape.obs_dim {
            return Err(Error::ShapeMismatch(format!("no tabular state {state}")));
        }
        let r = self.logit_range(state);
        Ok(&mut self.values[r])
    }
}

/// Draws every parameter i.i.d. from `U[-init_scale, init_scale]`.
pub fn init_params(
    family: PolicyFamily,
    shape: PolicyShape,
    init_scale: f64,
    seed: u64,
) -> Result<ParamBlob> {
    if !(init_scale >= 0.0) || !init_scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "init_scale must be >= 0, got {init_scale}"
        )));
    }
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..shape.param_len(family))
        .map(|_| {
            if init_scale == 0.0 {
                0.0
            } else {
                rng.gen_range(-init_scale..=init_scale)
            }
        })
        .collect();
    ParamBlob::new(family, shape, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        ActionDistribution { logits, probs }
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs[action].ln()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn bit_eq(&self, other: &ActionDistribution) -> bool {
        let same = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        same(&self.logits, &other.logits) && same(&self.probs, &other.probs)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Resolves a tabular observation to its state index: the observation must be exactly one-hot.
fn tabular_state(obs: &[f64], n_states: usize) -> Result<usize> {
    if obs.len() != n_states {
        return Err(Error::ShapeMismatch(format!(
            "tabular policy over {n_states} states got observation of length {}",
            obs.len()
        )));
    }
    let mut state = None;
    for (i, &v) in obs.iter().enumerate() {
        if v == 1.0 && state.is_none() {
            state = Some(i);
        } else if v != 0.0 {
            state = None;
            break;
        }
    }
    state.ok_or_else(|| {
        Error::ShapeMismatch("tabular observation is not in the enumerated one-hot set".into())
    })
}

fn check_linear_obs(blob: &ParamBlob, obs: &[f64]) -> Result<()> {
    if obs.len() != blob.shape.obs_dim {
        return Err(Error::ShapeMismatch(format!(
            "linear policy expects observation of length {}, got {}",
            blob.shape.obs_dim,
            obs.len()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn logits(blob: &ParamBlob, obs: &[f64]) -> Result<Vec<f64>> {
    match blob.family {
        PolicyFamily::TabularSoftmax => {
            let s = tabular_state(obs, blob.shape.obs_dim)?;
            Ok(blob.values[blob.logit_range(s)].to_vec())
        }
        PolicyFamily::LinearSoftmax => {
            check_linear_obs(blob, obs)?;
            Ok((0..blob.shape.n_actions)
                .map(|a| dot(&blob.values[blob.logit_range(a)], obs))
                .collect())
        }
    }
}

pub fn value(blob: &ParamBlob, obs: &[f64]) -> Result<f64> {
    match blob.family {
        PolicyFamily::TabularSoftmax => {
            let s = tabular_state(obs, blob.shape.obs_dim)?;
            Ok(blob.values[s * (blob.shape.n_actions + 1) + blob.shape.n_actions])
        }
        PolicyFamily::LinearSoftmax => {
            check_linear_obs(blob, obs)?;
            Ok(dot(&blob.values[blob.logit_range(blob.shape.n_actions)], obs))
        }
    }
}

pub fn action_distribution(blob: &ParamBlob, obs: &[f64]) -> Result<ActionDistribution> {
    Ok(ActionDistribution::from_logits(logits(blob, obs)?))
}

/// Action distribution and value estimate in one pass.
pub fn evaluate(blob: &ParamBlob, obs: &[f64]) -> Result<(ActionDistribution, f64)> {
    Ok((action_distribution(blob, obs)?, value(blob, obs)?))
}

/// Inverse-CDF draw. Returns the action and `ln(probs[action])`.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (a, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = a;
        }
        cum += p;
        if u < cum {
            return (a, dist.log_prob(a));
        }
    }
    (last_nonzero, dist.log_prob(last_nonzero))
}

/// Scatters gradients w.r.t. the logits and the value output into a parameter-space gradient.
pub fn accumulate_output_grad(
    blob: &ParamBlob,
    obs: &[f64],
    dlogits: &[f64],
    dvalue: f64,
    grad: &mut [f64],
) -> Result<()> {
    let n_actions = blob.shape.n_actions;
    if grad.len() != blob.values.len() || dlogits.len() != n_actions {
        return Err(Error::LengthMismatch(
            "gradient buffer does not match blob".into(),
        ));
    }
    match blob.family {
        PolicyFamily::TabularSoftmax => {
            let s = tabular_state(obs, blob.shape.obs_dim)?;
            let base = s * (n_actions + 1);
            for (g, d) in grad[base..base + n_actions].iter_mut().zip(dlogits) {
                *g += d;
            }
            grad[base + n_actions] += dvalue;
        }
        PolicyFamily::LinearSoftmax => {
            check_linear_obs(blob, obs)?;
            let d = blob.shape.obs_dim;
            for (a, dl) in dlogits.iter().enumerate() {
                if *dl == 0.0 {
                    continue;
                }
                for (g, o) in grad[a * d..(a + 1) * d].iter_mut().zip(obs) {
                    *g += dl * o;
                }
            }
            if dvalue != 0.0 {
                for (g, o) in grad[n_actions * d..(n_actions + 1) * d].iter_mut().zip(obs) {
                    *g += dvalue * o;
                }
            }
        }
    }
    Ok(())
}

/// Gradient of `ln π(action | obs)` with respect to every blob value.
pub fn policy_grad_logp(blob: &ParamBlob, obs: &[f64], action: usize) -> Result<Vec<f64>> {
    let dist = action_distribution(blob, obs)?;
    if action >= dist.probs.len() {
        return Err(Error::InvalidArgument(format!(
            "action {action} out of range for {} actions",
            dist.probs.len()
        )));
    }
    let dlogits: Vec<f64> = dist
        .probs
        .iter()
        .enumerate()
        .map(|(a, p)| if a == action { 1.0 - p } else { -p })
        .collect();
    let mut grad = vec![0.0; blob.values.len()];
    accumulate_output_grad(blob, obs, &dlogits, 0.0, &mut grad)?;
    Ok(grad)
}
