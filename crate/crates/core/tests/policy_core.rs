use league_core::policy::{self, init_params, ParamBlob, PolicyFamily, PolicyShape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_obs(rng: &mut ChaCha8Rng, family: PolicyFamily, dim: usize) -> Vec<f64> {
    match family {
        PolicyFamily::TabularSoftmax => {
            let mut o = vec![0.0; dim];
            o[rng.gen_range(0..dim)] = 1.0;
            o
        }
        PolicyFamily::LinearSoftmax => (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    }
}

fn family(tabular: bool) -> PolicyFamily {
    if tabular {
        PolicyFamily::TabularSoftmax
    } else {
        PolicyFamily::LinearSoftmax
    }
}

#[test]
fn softmax_matches_closed_form_fixture() {
    let d = policy::softmax(&[1.0, 0.0, 0.0]);
    let e = std::f64::consts::E;
    let z = e + 2.0;
    let want = [e / z, 1.0 / z, 1.0 / z];
    for (a, b) in d.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn grad_logp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-6;
    for case in 0..500 {
        let fam = family(case % 2 == 0);
        let shape = PolicyShape::new(rng.gen_range(1..6), rng.gen_range(2..6));
        let blob = init_params(fam, shape, 1.5, rng.gen()).unwrap();
        let obs = random_obs(&mut rng, fam, shape.obs_dim);
        let action = rng.gen_range(0..shape.n_actions);
        let g = policy::policy_grad_logp(&blob, &obs, action).unwrap();
        assert_eq!(g.len(), blob.values.len());
        let logp = |b: &ParamBlob| policy::action_distribution(b, &obs).unwrap().log_prob(action);
        let fd: Vec<f64> = (0..blob.values.len())
            .map(|i| {
                let mut p = blob.clone();
                p.values[i] += h;
                let mut m = blob.clone();
                m.values[i] -= h;
                (logp(&p) - logp(&m)) / (2.0 * h)
            })
            .collect();
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / norm < 1e-5, "case {case}: {g:?} vs {fd:?}");
    }
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(tabular: bool, seed: u64, scale in 0.0f64..20.0, obs_dim in 1usize..6, n in 2usize..7) {
        let fam = family(tabular);
        let shape = PolicyShape::new(obs_dim, n);
        let blob = init_params(fam, shape, scale, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = random_obs(&mut rng, fam, obs_dim);
        let d = policy::action_distribution(&blob, &obs).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(d.probs.iter().all(|p| *p >= 0.0));
        let again = policy::action_distribution(&blob, &obs).unwrap();
        prop_assert!(d.bit_eq(&again));
    }

    #[test]
    fn shifting_a_logit_block_changes_nothing(seed: u64, c in -50.0f64..50.0, n in 2usize..7) {
        let shape = PolicyShape::new(3, n);
        let mut blob = init_params(PolicyFamily::TabularSoftmax, shape, 2.0, seed).unwrap();
        let obs = [0.0, 1.0, 0.0];
        let before = policy::action_distribution(&blob, &obs).unwrap();
        blob.tabular_logits_mut(1).unwrap().iter_mut().for_each(|l| *l += c);
        let after = policy::action_distribution(&blob, &obs).unwrap();
        for (a, b) in before.probs.iter().zip(&after.probs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_logp_is_orthogonal_to_ones(seed: u64, action in 0usize..4) {
        let shape = PolicyShape::new(2, 4);
        let blob = init_params(PolicyFamily::TabularSoftmax, shape, 3.0, seed).unwrap();
        let g = policy::policy_grad_logp(&blob, &[1.0, 0.0], action).unwrap();
        // One row per state: n_actions logits then the value weight.
        prop_assert!(g[..4].iter().sum::<f64>().abs() < 1e-12);
        prop_assert!(g[4..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn sampled_logp_is_consistent(seed: u64, scale in 0.0f64..5.0) {
        let blob = init_params(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 4), scale, seed).unwrap();
        let d = policy::action_distribution(&blob, &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, lp) = policy::sample_action(&d, &mut rng);
        prop_assert!((lp.exp() - d.probs[a]).abs() < 1e-12);
    }
}

#[test]
fn negative_init_scale_rejected() {
    assert!(init_params(PolicyFamily::LinearSoftmax, PolicyShape::new(2, 2), -1.0, 0).is_err());
}
