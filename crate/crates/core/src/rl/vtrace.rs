use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VTraceOutput {
    pub vs: Vec<f64>,
    pub pg_adv: Vec<f64>,
}

/// V-trace value targets and policy-gradient advantages.
///
/// `ρ_t = min(ρ̄, π/μ)`, `c_t = min(c̄, π/μ)`, and with `γ_t = γ(1−d_t)`:
/// `vs_t − V_t = ρ_t δ_t + γ_t c_t (vs_{t+1} − V_{t+1})`,
/// `pg_adv_t = ρ_t (r_t + γ_t vs_{t+1} − V_t)`, where `vs_L = V_L = bootstrap`.
#[allow(clippy::too_many_arguments)]
pub fn vtrace_targets(
    behavior_logps: &[f64],
    target_logps: &[f64],
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    dones: &[bool],
    gamma: f64,
    rho_bar: f64,
    c_bar: f64,
) -> Result<VTraceOutput> {
    let l = rewards.len();
    if l == 0
        || behavior_logps.len() != l
        || target_logps.len() != l
        || values.len() != l
        || dones.len() != l
    {
        return Err(Error::LengthMismatch("v-trace inputs differ in length".into()));
    }
    if let Some(i) = behavior_logps
        .iter()
        .chain(target_logps)
        .position(|v| !v.is_finite())
    {
        return Err(Error::NonFinite(format!("log-prob at index {i}")));
    }

    let mut vs = vec![0.0; l];
    let mut pg_adv = vec![0.0; l];
    let mut next_vs = bootstrap;
    let mut next_value = bootstrap;
    let mut next_diff = 0.0;
    for t in (0..l).rev() {
        let ratio = (target_logps[t] - behavior_logps[t]).exp();
        let rho = ratio.min(rho_bar);
        let c = ratio.min(c_bar);
        let g = if dones[t] { 0.0 } else { gamma };
        let delta = rho * (rewards[t] + g * next_value - values[t]);
        let diff = delta + g * c * next_diff;
        vs[t] = values[t] + diff;
        pg_adv[t] = rho * (rewards[t] + g * next_vs - values[t]);
        next_vs = vs[t];
        next_value = values[t];
        next_diff = diff;
    }
    Ok(VTraceOutput { vs, pg_adv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::returns::lambda_return;

    #[test]
    fn on_policy_matches_monte_carlo_lambda_return() {
        let lp = [-0.5, -1.2, -0.1, -2.0];
        let r = [1.0, 0.0, -0.5, 2.0];
        let v = [0.2, 0.1, -0.3, 0.4];
        let d = [false, true, false, false];
        let out = vtrace_targets(&lp, &lp, &r, &v, 0.7, &d, 0.95, 1.0, 1.0).unwrap();
        let g = lambda_return(&r, &v, 0.7, &d, 0.95, 1.0).unwrap();
        for (a, b) in out.vs.iter().zip(&g) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_truncation_keeps_values() {
        let out = vtrace_targets(
            &[-1.0, -1.0],
            &[-0.5, -2.0],
            &[1.0, 1.0],
            &[0.3, -0.4],
            2.0,
            &[false, false],
            0.9,
            1e-12,
            1e-12,
        )
        .unwrap();
        assert!((out.vs[0] - 0.3).abs() < 1e-10);
        assert!((out.vs[1] + 0.4).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_finite_logps() {
        let r = vtrace_targets(
            &[f64::NEG_INFINITY],
            &[0.0],
            &[0.0],
            &[0.0],
            0.0,
            &[false],
            0.9,
            1.0,
            1.0,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
