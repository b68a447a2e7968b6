use mepol_core::env::{Environment, GridWorld};
use mepol_core::knn::PointSet;
use mepol_core::policy::{GaussianPolicy, ParamVector, PolicySpec, PretrainOptions};
use mepol_core::rng::stream_rng;
use rand::Rng;

#[test]
fn score_has_zero_mean_under_the_policy() {
    let policy = GaussianPolicy::new(PolicySpec::new(2, 2, vec![8]).with_init_logstd(-0.3)).unwrap();
    let mut rng = stream_rng(1, 0);
    let mut params = policy.init_params(&mut rng);
    // move the mean away from zero so the mean block is exercised
    let last = policy.logstd_offset() - 2;
    params[last] = 0.7;
    params[last + 1] = -0.4;
    let s = [1.2, -0.5];
    let m = 100_000;
    let np = policy.num_params();
    let mut sum = vec![0.0; np];
    let mut sum_sq = vec![0.0; np];
    for _ in 0..m {
        let a = policy.act(&params, &s, &mut rng).unwrap();
        let g = policy.log_prob_grad(&params, &s, &a).unwrap();
        for p in 0..np {
            sum[p] += g[p];
            sum_sq[p] += g[p] * g[p];
        }
    }
    for p in 0..np {
        let mean = sum[p] / m as f64;
        let var = sum_sq[p] / m as f64 - mean * mean;
        let se = (var / m as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se + 1e-15, "param {p}: {mean} ± {se}");
    }
}

#[test]
fn zero_mean_policy_samples_center_on_zero() {
    let policy = GaussianPolicy::new(PolicySpec::new(2, 1, vec![8])).unwrap();
    let params = ParamVector::zeros(policy.num_params());
    let mut rng = stream_rng(2, 0);
    let m = 10_000;
    let mean: f64 = (0..m).map(|_| policy.act(&params, &[0.3, 0.1], &mut rng).unwrap()[0]).sum::<f64>() / m as f64;
    assert!(mean.abs() <= 3.0 / (m as f64).sqrt());
}

#[test]
fn pretraining_a_wide_network_on_gridworld_states() {
    let env = GridWorld::four_rooms();
    let policy = GaussianPolicy::new(PolicySpec::new(2, 2, vec![300, 300])).unwrap();
    let mut rng = stream_rng(3, 0);
    let mut params = policy.init_params(&mut rng);
    // a visibly non-zero mean to start from
    let off = policy.logstd_offset();
    params[off - 2] = 1.0;
    params[off - 1] = -1.0;
    let spec = env.spec();
    let coords: Vec<f64> = (0..1000)
        .flat_map(|_| {
            let x = spec.obs_low[0] + (spec.obs_high[0] - spec.obs_low[0]) * rng.random::<f64>();
            let y = spec.obs_low[1] + (spec.obs_high[1] - spec.obs_low[1]) * rng.random::<f64>();
            [x, y]
        })
        .collect();
    let states = PointSet::new(2, coords).unwrap();
    let trained = policy.zero_mean_pretrain(&params, &states, PretrainOptions::default()).unwrap();
    let means = policy.mean_batch(&trained, states.coords()).unwrap();
    let residual: f64 = means.chunks(2).map(|m| (m[0] * m[0] + m[1] * m[1]).sqrt()).sum::<f64>() / 1000.0;
    assert!(residual <= 1e-2, "{residual}");
    assert_eq!(policy.logstd(&trained), policy.logstd(&params));
}

#[test]
fn pretraining_reports_failure_to_converge() {
    let policy = GaussianPolicy::new(PolicySpec::new(2, 1, vec![8])).unwrap();
    let mut params = policy.init_params(&mut stream_rng(0, 0));
    let off = policy.logstd_offset();
    params[off - 1] = 5.0;
    let states = PointSet::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let opts = PretrainOptions {
        max_iters: 2,
        ..PretrainOptions::default()
    };
    assert!(matches!(
        policy.zero_mean_pretrain(&params, &states, opts),
        Err(mepol_core::Error::PretrainDiverged { .. })
    ));
}

#[test]
fn prefix_log_ratio_is_the_log_of_the_ratio_product() {
    let policy = GaussianPolicy::new(PolicySpec::new(2, 2, vec![8])).unwrap();
    let mut rng = stream_rng(5, 0);
    let theta0 = policy.init_params(&mut rng);
    let mut theta = theta0.clone();
    theta.iter_mut().for_each(|v| *v += 0.02 * (rng.random::<f64>() - 0.5));
    let env = GridWorld::four_rooms();
    let ds = mepol_core::collect(&env, &policy, &theta0, 6, 1, 0).unwrap();
    let w = ds.log_ratios(&policy, &theta, &theta0).unwrap();
    let mut product = 1.0;
    for z in 0..6 {
        let s = &ds.step_states()[2 * z..2 * z + 2];
        let a = &ds.step_actions()[2 * z..2 * z + 2];
        let p1 = policy.log_prob(&theta, s, a).unwrap().exp();
        let p0 = policy.log_prob(&theta0, s, a).unwrap().exp();
        product *= p1 / p0;
        assert!((w.log_ratios()[z] - product.ln()).abs() <= 1e-12);
    }
}
