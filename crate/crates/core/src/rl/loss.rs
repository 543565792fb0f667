//! Policy/value losses with analytic gradients.

use crate::error::{Error, Result};
use crate::policy::{self, ParamBlob};
use crate::rl::hyper::HyperParams;

/// Standard-deviation floor used by advantage normalization.
pub const ADV_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct LossSample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub behavior_logp: f64,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyObjective {
    /// PPO clipped surrogate on `exp(logπ − logμ)`.
    Clipped,
    /// `−A·logπ`, with importance correction already folded into `A` (V-trace).
    ImportanceWeighted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub n_samples: usize,
}

/// In-place `(a − mean) / max(std, 1e-8)` with population std.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(ADV_STD_FLOOR);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

pub fn ppo_loss_and_grad(
    params: &ParamBlob,
    teacher: Option<&ParamBlob>,
    batch: &[LossSample<'_>],
    hp: &HyperParams,
) -> Result<(f64, Vec<f64>, LossStats)> {
    loss_and_grad(params, teacher, batch, hp, PolicyObjective::Clipped)
}

pub fn vtrace_loss_and_grad(
    params: &ParamBlob,
    teacher: Option<&ParamBlob>,
    batch: &[LossSample<'_>],
    hp: &HyperParams,
) -> Result<(f64, Vec<f64>, LossStats)> {
    loss_and_grad(params, teacher, batch, hp, PolicyObjective::ImportanceWeighted)
}

/// Mean over samples of
/// `−surrogate + vf_coef·(V − target)² − ent_coef·H(π) + kl_teacher_coef·KL(π‖π_teacher)`.
pub fn loss_and_grad(
    params: &ParamBlob,
    teacher: Option<&ParamBlob>,
    batch: &[LossSample<'_>],
    hp: &HyperParams,
    objective: PolicyObjective,
) -> Result<(f64, Vec<f64>, LossStats)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    if hp.kl_teacher_coef > 0.0 && teacher.is_none() {
        return Err(Error::InvalidArgument(
            "kl_teacher_coef > 0 requires teacher params".into(),
        ));
    }
    for (i, s) in batch.iter().enumerate() {
        if !s.advantage.is_finite() || !s.value_target.is_finite() {
            return Err(Error::NonFinite(format!("advantage/target at sample {i}")));
        }
        if !s.behavior_logp.is_finite() && objective == PolicyObjective::Clipped {
            return Err(Error::NonFinite(format!("behavior log-prob at sample {i}")));
        }
    }

    let mut adv: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
    if hp.normalize_advantages {
        normalize_advantages(&mut adv);
    }

    let n = batch.len() as f64;
    let n_actions = params.n_actions();
    let mut grad = vec![0.0; params.values.len()];
    let mut stats = LossStats {
        n_samples: batch.len(),
        ..Default::default()
    };
    let mut dlogits = vec![0.0; n_actions];

    for (s, &a_hat) in batch.iter().zip(&adv) {
        if s.action >= n_actions {
            return Err(Error::InvalidArgument(format!(
                "action {} out of range for {n_actions} actions",
                s.action
            )));
        }
        let (dist, v) = policy::evaluate(params, s.obs)?;
        let logp = log_softmax(&dist.logits);
        let p = &dist.probs;

        // d(sample loss)/d(logp_action), from the policy term.
        let (policy_loss, dlogp) = match objective {
            PolicyObjective::Clipped => {
                let ratio = (logp[s.action] - s.behavior_logp).exp();
                let clipped = ratio.clamp(1.0 - hp.clip_eps, 1.0 + hp.clip_eps);
                let unclipped_obj = ratio * a_hat;
                let clipped_obj = clipped * a_hat;
                stats.mean_ratio += ratio;
                if unclipped_obj <= clipped_obj {
                    (-unclipped_obj, -unclipped_obj)
                } else {
                    stats.clip_fraction += 1.0;
                    (-clipped_obj, 0.0)
                }
            }
            PolicyObjective::ImportanceWeighted => {
                stats.mean_ratio += (logp[s.action] - s.behavior_logp).exp();
                (-a_hat * logp[s.action], -a_hat)
            }
        };

        for k in 0..n_actions {
            let ind = if k == s.action { 1.0 } else { 0.0 };
            dlogits[k] = dlogp * (ind - p[k]);
        }

        let entropy: f64 = -p
            .iter()
            .zip(&logp)
            .map(|(pk, lk)| if *pk > 0.0 { pk * lk } else { 0.0 })
            .sum::<f64>();
        if hp.ent_coef != 0.0 {
            for k in 0..n_actions {
                if p[k] > 0.0 {
                    dlogits[k] += hp.ent_coef * p[k] * (logp[k] + entropy);
                }
            }
        }

        let mut kl = 0.0;
        if let Some(teacher) = teacher {
            let tlogits = policy::logits(teacher, s.obs)?;
            if tlogits.len() != n_actions {
                return Err(Error::ShapeMismatch(
                    "teacher action space differs from the learner's".into(),
                ));
            }
            let tlogp = log_softmax(&tlogits);
            kl = (0..n_actions)
                .filter(|&k| p[k] > 0.0)
                .map(|k| p[k] * (logp[k] - tlogp[k]))
                .sum();
            if hp.kl_teacher_coef != 0.0 {
                for k in 0..n_actions {
                    if p[k] > 0.0 {
                        dlogits[k] += hp.kl_teacher_coef * p[k] * (logp[k] - tlogp[k] - kl);
                    }
                }
            }
        }

        let verr = v - s.value_target;
        let dvalue = 2.0 * hp.vf_coef * verr;

        for d in dlogits.iter_mut() {
            *d /= n;
        }
        policy::accumulate_output_grad(params, s.obs, &dlogits, dvalue / n, &mut grad)?;

        stats.policy_loss += policy_loss;
        stats.value_loss += verr * verr;
        stats.entropy += entropy;
        stats.kl += kl;
    }

    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.kl /= n;
    stats.clip_fraction /= n;
    stats.mean_ratio /= n;
    stats.loss = stats.policy_loss + hp.vf_coef * stats.value_loss - hp.ent_coef * stats.entropy
        + hp.kl_teacher_coef * stats.kl;
    if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("loss {}", stats.loss)));
    }
    Ok((stats.loss, grad, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyFamily, PolicyShape};

    #[test]
    fn zero_everything_gives_zero() {
        let params = crate::policy::init_params(
            PolicyFamily::LinearSoftmax,
            PolicyShape::new(3, 3),
            0.5,
            1,
        )
        .unwrap();
        let obs = [0.2, -1.0, 0.7];
        let d = crate::policy::action_distribution(&params, &obs).unwrap();
        let samples: Vec<LossSample> = (0..3)
            .map(|a| LossSample {
                obs: &obs,
                action: a,
                behavior_logp: d.log_prob(a),
                advantage: 0.0,
                value_target: 0.0,
            })
            .collect();
        let hp = HyperParams {
            vf_coef: 0.0,
            ent_coef: 0.0,
            kl_teacher_coef: 0.0,
            ..HyperParams::default()
        };
        let (loss, grad, _) = ppo_loss_and_grad(&params, None, &samples, &hp).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn clipped_sample_has_no_surrogate_gradient() {
        let params =
            ParamBlob::zeros(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 3)).unwrap();
        let obs = [1.0];
        // current prob 1/3; behavior prob 0.1 → ratio 3.33 > 1.2
        let samples = [LossSample {
            obs: &obs,
            action: 0,
            behavior_logp: 0.1f64.ln(),
            advantage: 1.0,
            value_target: 0.0,
        }];
        let hp = HyperParams {
            vf_coef: 0.0,
            ent_coef: 0.0,
            normalize_advantages: false,
            ..HyperParams::default()
        };
        let (_, grad, stats) = ppo_loss_and_grad(&params, None, &samples, &hp).unwrap();
        assert_eq!(stats.clip_fraction, 1.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform() {
        let params =
            ParamBlob::zeros(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 4)).unwrap();
        let obs = [1.0];
        let samples = [LossSample {
            obs: &obs,
            action: 2,
            behavior_logp: 0.25f64.ln(),
            advantage: 0.0,
            value_target: 0.0,
        }];
        let hp = HyperParams {
            vf_coef: 0.0,
            ent_coef: 1.0,
            ..HyperParams::default()
        };
        let (_, grad, stats) = ppo_loss_and_grad(&params, None, &samples, &hp).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
        assert!((stats.entropy - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn errors_on_missing_teacher_and_nan_advantage() {
        let params =
            ParamBlob::zeros(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 2)).unwrap();
        let obs = [1.0];
        let mut s = LossSample {
            obs: &obs,
            action: 0,
            behavior_logp: 0.5f64.ln(),
            advantage: 1.0,
            value_target: 0.0,
        };
        let hp = HyperParams {
            kl_teacher_coef: 0.1,
            ..HyperParams::default()
        };
        assert!(ppo_loss_and_grad(&params, None, &[s], &hp).is_err());
        s.advantage = f64::NAN;
        assert!(matches!(
            ppo_loss_and_grad(&params, None, &[s], &HyperParams::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn normalization_floor() {
        let mut a = vec![2.0; 5];
        normalize_advantages(&mut a);
        assert_eq!(a, vec![0.0; 5]);
        let mut b = vec![1.0, 3.0];
        normalize_advantages(&mut b);
        assert_eq!(b, vec![-1.0, 1.0]);
    }
}
