use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rl::HyperParams;

pub const PERTURB_FACTORS: [f64; 3] = [0.8, 1.0, 1.25];

/// Scales the learning rate by a factor drawn uniformly from {0.8, 1.0, 1.25}.
pub fn perturb_hyper(hp: &HyperParams, rng: &mut ChaCha8Rng) -> HyperParams {
    let f = PERTURB_FACTORS[rng.gen_range(0..PERTURB_FACTORS.len())];
    HyperParams {
        learning_rate: hp.learning_rate * f,
        ..*hp
    }
}

/// Hyperparameters attached to each model key.
#[derive(Debug, Clone, Default)]
pub struct HyperMgr {
    by_key: HashMap<String, HyperParams>,
    pub perturb: bool,
}

impl HyperMgr {
    pub fn new(perturb: bool) -> Self {
        HyperMgr {
            by_key: HashMap::new(),
            perturb,
        }
    }

    pub fn set(&mut self, key: &str, hp: HyperParams) {
        self.by_key.insert(key.to_string(), hp);
    }

    pub fn get(&self, key: &str) -> Option<HyperParams> {
        self.by_key.get(key).copied()
    }

    /// Hyperparameters for a successor of `parent`: perturbed if enabled, else copied.
    pub fn successor(&self, parent: &HyperParams, rng: &mut ChaCha8Rng) -> HyperParams {
        if self.perturb {
            perturb_hyper(parent, rng)
        } else {
            *parent
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn perturbation_is_bounded_and_touches_only_lr() {
        let hp = HyperParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [false; 3];
        for _ in 0..300 {
            let p = perturb_hyper(&hp, &mut rng);
            let f = p.learning_rate / hp.learning_rate;
            assert!((0.8 - 1e-12..=1.25 + 1e-12).contains(&f));
            let i = PERTURB_FACTORS
                .iter()
                .position(|x| (x - f).abs() < 1e-12)
                .unwrap();
            seen[i] = true;
            assert_eq!(HyperParams { learning_rate: hp.learning_rate, ..p }, hp);
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn disabled_is_identity() {
        let m = HyperMgr::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hp = HyperParams::default();
        assert_eq!(m.successor(&hp, &mut rng), hp);
    }
}
