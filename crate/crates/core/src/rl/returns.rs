use crate::error::{Error, Result};

fn check_lengths(rewards: &[f64], values: &[f64], dones: &[bool]) -> Result<usize> {
    let l = rewards.len();
    if l == 0 || values.len() != l || dones.len() != l {
        return Err(Error::LengthMismatch(format!(
            "rewards {}, values {}, dones {}",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    Ok(l)
}

/// Backward λ-return: `G_t = r_t + γ(1−d_t)[(1−λ)V_{t+1} + λG_{t+1}]` with
/// `V_L = G_L = bootstrap`. A done at `t` cuts everything after step `t`.
pub fn lambda_return(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    dones: &[bool],
    gamma: f64,
    lam: f64,
) -> Result<Vec<f64>> {
    let l = check_lengths(rewards, values, dones)?;
    let mut out = vec![0.0; l];
    let mut next_value = bootstrap;
    let mut next_return = bootstrap;
    for t in (0..l).rev() {
        let g = if dones[t] { 0.0 } else { gamma };
        out[t] = rewards[t] + g * ((1.0 - lam) * next_value + lam * next_return);
        next_value = values[t];
        next_return = out[t];
    }
    Ok(out)
}

/// Generalized advantage estimates; `gae + values` equals `lambda_return`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    dones: &[bool],
    gamma: f64,
    lam: f64,
) -> Result<Vec<f64>> {
    let l = check_lengths(rewards, values, dones)?;
    let mut out = vec![0.0; l];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..l).rev() {
        let g = if dones[t] { 0.0 } else { gamma };
        let delta = rewards[t] + g * next_value - values[t];
        out[t] = delta + g * lam * next_adv;
        next_value = values[t];
        next_adv = out[t];
    }
    Ok(out)
}
