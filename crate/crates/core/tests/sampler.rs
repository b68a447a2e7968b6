use mepol_core::env::{GridWorld, MountainCar, NdGrid};
use mepol_core::policy::{GaussianPolicy, ParamVector, PolicySpec};
use mepol_core::rng::stream_rng;
use mepol_core::sampler::collect;
use proptest::prelude::*;
use rand::Rng;

fn grid_policy(seed: u64) -> (GaussianPolicy, ParamVector) {
    let policy = GaussianPolicy::new(PolicySpec::new(2, 2, vec![8])).unwrap();
    let params = policy.init_params(&mut stream_rng(seed, 0));
    (policy, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn particle_count_law(horizon in 1usize..40, n_traj in 1usize..12, seed in any::<u64>()) {
        let (policy, params) = grid_policy(seed);
        let ds = collect(&GridWorld::four_rooms(), &policy, &params, horizon, n_traj, seed).unwrap();
        prop_assert_eq!(ds.len(), horizon * n_traj);
        prop_assert_eq!(ds.features().len(), horizon * n_traj);
        for tr in ds.trajectories() {
            prop_assert_eq!(tr.states.len(), 2 * (horizon + 1));
            prop_assert_eq!(tr.actions.len(), 2 * horizon);
        }
    }

    #[test]
    fn weights_are_normalized(seed in any::<u64>(), scale in 0.0f64..0.5) {
        let (policy, theta0) = grid_policy(seed);
        let ds = collect(&GridWorld::four_rooms(), &policy, &theta0, 15, 4, seed).unwrap();
        let mut rng = stream_rng(seed, 1);
        let mut theta = theta0.clone();
        theta.iter_mut().for_each(|v| *v += scale * (rng.random::<f64>() - 0.5));
        let w = ds.log_ratios(&policy, &theta, &theta0).unwrap();
        prop_assert!((w.normalized().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn paper_batch_shape() {
    let env = MountainCar::default();
    let policy = GaussianPolicy::new(PolicySpec::new(2, 1, vec![16])).unwrap();
    let params = policy.init_params(&mut stream_rng(0, 0));
    let ds = collect(&env, &policy, &params, 400, 20, 0).unwrap();
    assert_eq!(ds.len(), 8000);
}

#[test]
fn ess_shrinks_along_a_straight_line() {
    let (policy, theta0) = grid_policy(5);
    let ds = collect(&GridWorld::four_rooms(), &policy, &theta0, 20, 10, 5).unwrap();
    for dir_seed in 0..5 {
        let mut rng = stream_rng(dir_seed, 9);
        let dir: Vec<f64> = (0..theta0.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut prev = ds.len() as f64;
        let at_identity = ds.log_ratios(&policy, &theta0, &theta0).unwrap().ess();
        assert!((at_identity - prev).abs() <= 1e-12 * prev);
        for step in 1..=6 {
            let t = 0.05 * step as f64;
            let theta: ParamVector = theta0.iter().zip(&dir).map(|(a, d)| a + t * d).collect::<Vec<_>>().into();
            let ess = ds.log_ratios(&policy, &theta, &theta0).unwrap().ess();
            assert!(ess < prev, "direction {dir_seed}, t = {t}: {ess} >= {prev}");
            prev = ess;
        }
    }
}

#[test]
fn entropy_features_follow_the_env() {
    let env = NdGrid::new(3, 4.0);
    let policy = GaussianPolicy::new(PolicySpec::new(3, 3, vec![4])).unwrap();
    let params = policy.init_params(&mut stream_rng(0, 0));
    let ds = collect(&env, &policy, &params, 5, 2, 1).unwrap();
    assert_eq!(ds.features().dim(), 3);
    for i in 0..ds.len() {
        assert_eq!(ds.features().point(i), ds.state(i));
    }
}

#[test]
fn policy_dimension_mismatch_is_rejected() {
    let (policy, params) = grid_policy(0);
    assert!(collect(&MountainCar::default(), &policy, &params, 5, 2, 0).is_err());
    assert!(collect(&GridWorld::four_rooms(), &policy, &params, 0, 2, 0).is_err());
    assert!(collect(&GridWorld::four_rooms(), &policy, &params, 5, 0, 0).is_err());
}
