//! Trajectory segments: fixed-length windows of the learning agent's steps.

/// One learning-agent step. Padding steps have `valid == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: u32,
    pub reward: f64,
    pub behavior_logp: f64,
    pub value_est: f64,
    pub done: bool,
    pub valid: bool,
}

impl Step {
    pub fn padding(obs_dim: usize) -> Step {
        Step {
            obs: vec![0.0; obs_dim],
            action: 0,
            reward: 0.0,
            behavior_logp: 0.0,
            value_est: 0.0,
            done: true,
            valid: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectorySegment {
    pub actor_id: u32,
    pub model_key: String,
    /// Pool version of the blob that produced `behavior_logp`.
    pub model_version: u64,
    pub segment_seq: u64,
    pub steps: Vec<Step>,
    pub bootstrap_value: f64,
}

impl TrajectorySegment {
    /// Number of real (unpadded) steps. Valid steps always form a prefix.
    pub fn valid_len(&self) -> usize {
        self.steps.iter().take_while(|s| s.valid).count()
    }
}

/// A window cut from one episode, before actor/sequence metadata is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub steps: Vec<Step>,
    pub bootstrap_value: f64,
}

/// Cuts an episode into consecutive length-`l` windows. Each window bootstraps from the value
/// estimate of the step after it; the last one uses `final_value` and is padded to `l`.
pub fn segment_episode(steps: &[Step], l: usize, final_value: f64) -> Vec<Window> {
    assert!(l >= 1, "segment length must be >= 1");
    let obs_dim = steps.first().map(|s| s.obs.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(steps.len().div_ceil(l));
    for (i, chunk) in steps.chunks(l).enumerate() {
        let end = (i + 1) * l;
        let bootstrap_value = if end < steps.len() {
            steps[end].value_est
        } else {
            final_value
        };
        let mut window: Vec<Step> = chunk.to_vec();
        while window.len() < l {
            window.push(Step::padding(obs_dim));
        }
        out.push(Window {
            steps: window,
            bootstrap_value,
        });
    }
    out
}
