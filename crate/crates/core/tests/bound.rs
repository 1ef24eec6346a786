mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::mi_oracle::{mutual_information_exact, JointTable};
use vpn_core::VpnError;

#[test]
fn independent_noise_carries_no_information() {
    // p(y, e | x) = p(y | x) p(e | x)
    let py = [[0.3, 0.7], [0.6, 0.4]];
    let pe = [[0.1, 0.2, 0.7], [0.5, 0.25, 0.25]];
    let joint = (0..2)
        .map(|x| (0..2).map(|y| (0..3).map(|e| py[x][y] * pe[x][e]).collect()).collect())
        .collect();
    let t = JointTable::new(vec![0.4, 0.6], joint).unwrap();
    assert!(mutual_information_exact(&t).abs() < 1e-15);
}

#[test]
fn copied_label_carries_ln2() {
    let t = JointTable::new(vec![1.0], vec![vec![vec![0.5, 0.0], vec![0.0, 0.5]]]).unwrap();
    assert!((mutual_information_exact(&t) - 2f64.ln()).abs() < 1e-15);
    assert!((t.task_entropy() - 2f64.ln()).abs() < 1e-15);
    assert!(t.conditional_task_entropy().abs() < 1e-15);
}

#[test]
fn unnormalised_table_is_a_contract_error() {
    let r = JointTable::new(vec![1.0], vec![vec![vec![0.5, 0.2], vec![0.1, 0.1]]]);
    assert!(matches!(r, Err(VpnError::Contract(_))));
    let r = JointTable::new(vec![0.5], vec![vec![vec![0.5, 0.0], vec![0.0, 0.5]]]);
    assert!(matches!(r, Err(VpnError::Contract(_))));
}

#[test]
fn information_identity_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let t = JointTable::random(&mut rng, 3, 4, 5);
        let i = mutual_information_exact(&t);
        assert!(i >= -1e-15);
        assert!((i - (t.task_entropy() - t.conditional_task_entropy())).abs() < 1e-12);
    }
}

#[test]
fn three_class_four_level_bound_for_random_q() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = JointTable::random(&mut rng, 1, 3, 4);
    let i = mutual_information_exact(&t);
    let h = t.task_entropy();
    for _ in 0..100 {
        let l = t.variational_objective(&t.random_q(&mut rng)).unwrap();
        assert!(i - (l + h) >= -1e-12);
        assert!(i - (l - h) >= -1e-12);
        assert!(i + h - l >= -1e-12);
    }
}

#[test]
fn bound_is_tight_at_the_true_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = JointTable::random(&mut rng, 2, 3, 4);
    let l = t.variational_objective(&t.posterior_q()).unwrap();
    assert!((l + t.task_entropy() - mutual_information_exact(&t)).abs() < 1e-12);
}
