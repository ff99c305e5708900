use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::constants::offpolicy_constants;
use super::*;
use crate::engine::{run_fedsam, run_local, FedRunConfig, FedSamProblem, MarkovNoise, NormKind};
use crate::mdp::tests::small_random_mdp;
use crate::mdp::{FeatureMatrix, Mdp, Policy};
use crate::sampling::Window;

fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Policy {
    let mut probs = Vec::new();
    for _ in 0..ns {
        let row: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 0.05).collect();
        let t: f64 = row.iter().sum();
        probs.extend(row.into_iter().map(|x| x / t));
    }
    Policy::new(ns, na, probs).unwrap()
}

fn random_features(rng: &mut ChaCha8Rng, ns: usize, d: usize) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = (0..ns).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

fn instance(kind: AlgorithmKind, seed: u64, ns: usize, na: usize, n: usize) -> AlgorithmInstance {
    let (mdp, target) = small_random_mdp(seed, ns, na);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let behaviors = vec![random_policy(&mut rng, ns, na), random_policy(&mut rng, ns, na)];
    let features = Some(random_features(&mut rng, ns, 3.min(ns)));
    AlgorithmInstance::new(kind, mdp, target, behaviors, features, n).unwrap()
}

fn all_instances(seed: u64) -> Vec<AlgorithmInstance> {
    vec![
        instance(AlgorithmKind::OnPolicyTdLfa, seed, 5, 2, 2),
        instance(AlgorithmKind::OffPolicyTdTabular, seed, 4, 2, 2),
        instance(AlgorithmKind::QLearning, seed, 4, 3, 1),
    ]
}

fn line_mdp(gamma: f64, reward: f64) -> Mdp {
    Mdp::new(1, 1, vec![1.0], vec![reward], gamma).unwrap()
}

#[test]
fn onpolicy_update_hand_example() {
    let mdp = line_mdp(0.5, 1.0);
    let f = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
    let w = Window { states: &[0, 0, 0], actions: &[0, 0] };
    let v = onpolicy_td_update(&[0.0], w, &f, &mdp, 0.1).unwrap();
    assert!((v[0] - 0.15).abs() < 1e-15);
}

#[test]
fn onpolicy_update_zero_rewards_fixed_at_zero() {
    let mdp = line_mdp(0.5, 0.0);
    let f = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
    let w = Window { states: &[0, 0], actions: &[0] };
    assert_eq!(onpolicy_td_update(&[0.0], w, &f, &mdp, 0.3).unwrap(), vec![0.0]);
}

#[test]
fn onpolicy_update_rejects_wrong_dimension() {
    let mdp = line_mdp(0.5, 0.0);
    let f = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
    let w = Window { states: &[0, 0], actions: &[0] };
    assert!(matches!(onpolicy_td_update(&[0.0, 1.0], w, &f, &mdp, 0.3), Err(FedError::Shape(_))));
}

#[test]
fn identity_features_reduce_to_td0() {
    let (mdp, _) = small_random_mdp(3, 4, 2);
    let f = FeatureMatrix::identity(4);
    let v = vec![0.3, -0.2, 1.0, 0.5];
    let w = Window { states: &[2, 1], actions: &[1] };
    let out = onpolicy_td_update(&v, w, &f, &mdp, 0.1).unwrap();
    let mut expect = v.clone();
    expect[2] += 0.1 * (mdp.reward(2, 1) + 0.9 * v[1] - v[2]);
    for (a, b) in out.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn offpolicy_update_hand_example() {
    let mdp = Mdp::new(2, 2, vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0, 0.0], 0.5).unwrap();
    let target = Policy::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
    let behavior = Policy::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let w = Window { states: &[0, 1], actions: &[0] };
    let v = offpolicy_td_update(&[0.0, 0.0], w, &mdp, &target, &behavior, 0.1).unwrap();
    assert!((v[0] - 0.2).abs() < 1e-15);
    assert_eq!(v[1], 0.0);
}

#[test]
fn offpolicy_update_with_matching_policies_is_tabular_td() {
    let (mdp, pi) = small_random_mdp(8, 3, 2);
    let v = vec![0.1, 0.7, -0.4];
    let w = Window { states: &[1, 0, 2], actions: &[0, 1] };
    let off = offpolicy_td_update(&v, w, &mdp, &pi, &pi, 0.2).unwrap();
    let on = onpolicy_td_update(&v, w, &FeatureMatrix::identity(3), &mdp, 0.2).unwrap();
    for (a, b) in off.iter().zip(&on) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn offpolicy_update_rejects_uncovered_action() {
    let (mdp, _) = small_random_mdp(8, 2, 2);
    let target = Policy::uniform(2, 2);
    let behavior = Policy::deterministic(&[0, 0], 2).unwrap();
    let w = Window { states: &[0, 1], actions: &[1] };
    assert!(matches!(
        offpolicy_td_update(&[0.0, 0.0], w, &mdp, &target, &behavior, 0.1),
        Err(FedError::Coverage { .. })
    ));
}

#[test]
fn q_update_examples() {
    let mdp = Mdp::new(2, 2, vec![0.5; 8], vec![1.0; 4], 0.9).unwrap();
    let q = q_learning_update(&[0.0; 4], (1, 0, 0), &mdp, 0.1).unwrap();
    assert_eq!(q, vec![0.0, 0.0, 0.1, 0.0]);
    let q0 = vec![0.2, 0.4, -1.0, 3.0];
    assert_eq!(q_learning_update(&q0, (0, 1, 1), &mdp, 0.0).unwrap(), q0);
}

#[test]
fn expected_update_vanishes_at_oracle() {
    for seed in 0..3 {
        for inst in all_instances(seed) {
            for agent in 0..2 {
                let inc = expected_raw_increment(&inst, agent, inst.fixed_point()).unwrap();
                let worst = inc.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(worst < 1e-12, "{} agent {agent}: {worst:e}", inst.kind());
                let g0 = expected_operator(&inst, agent, &vec![0.0; inst.dim()]);
                assert!(g0.iter().all(|x| x.abs() < 1e-12));
            }
        }
    }
}

#[test]
fn enumerated_g_matches_expected_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in all_instances(11).into_iter().chain([instance(AlgorithmKind::OffPolicyTdTabular, 4, 2, 2, 3)]) {
        for agent in 0..2 {
            let theta: Vec<f64> = (0..inst.dim()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let e = expected_g_by_enumeration(&inst, agent, &theta).unwrap();
            let g = expected_operator(&inst, agent, &theta);
            for (a, b) in e.iter().zip(&g) {
                assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", inst.kind());
            }
        }
    }
}

#[test]
fn zero_is_fixed_for_every_sampled_window() {
    for inst in all_instances(2) {
        let problem = build_problem(&inst).unwrap();
        let zero = vec![0.0; inst.dim()];
        let mut out = vec![1.0; inst.dim()];
        for agent in 0..3 {
            let mut chain = problem.init_noise(agent, ChaCha8Rng::seed_from_u64(agent as u64)).unwrap();
            for _ in 0..500 {
                problem.apply_g(agent, &zero, &chain, &mut out);
                assert!(out.iter().all(|&x| x == 0.0));
                problem.advance_noise(agent, &mut chain);
            }
        }
    }
}

#[test]
fn sampled_lipschitz_and_bias_bounds_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..3 {
        for inst in all_instances(seed) {
            let tc = theory_constants(&inst).unwrap();
            let problem = build_problem(&inst).unwrap();
            let norm = NormKind::Sup;
            let d = inst.dim();
            let (mut g1, mut g2, mut b) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            let mut chain = problem.init_noise(0, ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for _ in 0..2000 {
                let t1: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let t2: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                problem.apply_g(0, &t1, &chain, &mut g1);
                problem.apply_g(0, &t2, &chain, &mut g2);
                problem.apply_b(0, &chain, &mut b);
                let kind_norm = inst.kind().norm();
                assert!(kind_norm.dist(&g1, &g2) <= tc.a1 * kind_norm.dist(&t1, &t2) + 1e-12);
                assert!(kind_norm.norm(&g1) <= tc.a2 * kind_norm.norm(&t1) + 1e-12);
                assert!(norm.norm(&b) <= tc.b + 1e-12, "{}: {} > {}", inst.kind(), norm.norm(&b), tc.b);
                problem.advance_noise(0, &mut chain);
            }
        }
    }
}

#[test]
fn shifted_run_is_translated_raw_run() {
    for inst in all_instances(9) {
        let raw = RawRule::new(&inst).unwrap();
        let shifted = build_problem(&inst).unwrap();
        let alpha = 0.05;
        let mut cfg = FedRunConfig::new(3, 4, alpha, 10_000, 1.0);
        cfg.master_seed = 31;
        cfg.trace = false;
        cfg.theta0 = Some(vec![0.0; inst.dim()]);
        let raw_trace = run_local(&raw, &cfg).unwrap();
        cfg.step_size = alpha * inst.beta();
        cfg.theta0 = Some(inst.fixed_point().iter().map(|x| -x).collect());
        let shifted_trace = run_fedsam(&shifted, &cfg).unwrap();
        for ((r, s), v) in raw_trace.final_theta.iter().zip(&shifted_trace.final_theta).zip(inst.fixed_point()) {
            assert!((r - v - s).abs() < 1e-12, "{}: {} vs {}", inst.kind(), r - v, s);
        }
    }
}

#[test]
fn monte_carlo_mean_of_g_matches_expectation() {
    let samples = 100_000;
    for inst in all_instances(4) {
        let problem = build_problem(&inst).unwrap();
        let d = inst.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let expect = expected_operator(&inst, 0, &theta);
        let mut chain = problem.init_noise(0, ChaCha8Rng::seed_from_u64(2)).unwrap();
        for _ in 0..1000 {
            problem.advance_noise(0, &mut chain);
        }
        let (mut sum, mut sq) = (vec![0.0; d], vec![0.0; d]);
        let mut g = vec![0.0; d];
        // Batch means absorb the autocorrelation of the chain.
        let batch = 1000;
        let mut batch_sum = vec![0.0; d];
        for t in 0..samples {
            problem.apply_g(0, &theta, &chain, &mut g);
            for k in 0..d {
                batch_sum[k] += g[k];
            }
            if (t + 1) % batch == 0 {
                for k in 0..d {
                    let m = batch_sum[k] / batch as f64;
                    sum[k] += m;
                    sq[k] += m * m;
                    batch_sum[k] = 0.0;
                }
            }
            problem.advance_noise(0, &mut chain);
        }
        let nb = (samples / batch) as f64;
        for k in 0..d {
            let mean = sum[k] / nb;
            let sd = ((sq[k] / nb - mean * mean).max(0.0) * nb / (nb - 1.0)).sqrt() / nb.sqrt();
            assert!((mean - expect[k]).abs() <= 3.0 * sd + 1e-9, "{} coord {k}: {mean} vs {}", inst.kind(), expect[k]);
        }
    }
}

#[test]
fn constants_match_closed_forms() {
    let (gc, ..) = q_learning_constants_for(0.1, 0.9);
    assert!((gc - 0.99).abs() < 1e-15);
    let (gc, _, _, _) = offpolicy_constants(0.1, 0.9, 1, 1.0);
    assert!((gc - 0.981).abs() < 1e-15);
    assert!(rate_constant(1e-12).abs() < 1e-10);
    assert!(rate_constant(0.3) > 0.0 && rate_constant(0.3) < 1.0);
    let gamma = 0.8;
    let (_, _, a, b) = offpolicy_constants(0.1, gamma, 3, 1.0 / gamma);
    assert!((a - (1.0 + (1.0 + gamma) / gamma * 3.0)).abs() < 1e-12);
    assert!((b - 2.0 / gamma / (1.0 - gamma) * 3.0).abs() < 1e-12);
}

fn q_learning_constants_for(mu_min: f64, gamma: f64) -> (f64, f64, f64, f64) {
    super::constants::q_learning_constants(mu_min, gamma)
}

#[test]
fn theory_constants_are_consistent() {
    for inst in all_instances(6) {
        let tc = theory_constants(&inst).unwrap();
        assert!(tc.gamma_c > 0.0 && tc.gamma_c < 1.0);
        assert!(tc.phi > 0.0 && tc.phi < 1.0);
        assert!(tc.c_out(0.1) < 1.0);
        assert_eq!(tc.imax.is_some(), inst.kind() == AlgorithmKind::OffPolicyTdTabular);
        let json = serde_json::to_string(&tc).unwrap();
        assert_eq!(serde_json::from_str::<TheoryConstants>(&json).unwrap(), tc);
    }
}

#[test]
fn selected_beta_leaves_spectral_margin() {
    for seed in 0..5 {
        let inst = instance(AlgorithmKind::OnPolicyTdLfa, seed, 6, 2, 1);
        let rho = spectral_radius(&inst.lfa_expected_matrix());
        assert!(rho <= 0.99, "rho = {rho}");
        let half = DMatrix::identity(3, 3) + inst.lfa_u_matrix() / (inst.beta() / 2.0);
        assert!(inst.beta() <= 2f64.powi(-30) || spectral_radius(&half) > 0.99);
    }
}

#[test]
fn q_learning_contraction_holds_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = instance(AlgorithmKind::QLearning, 1, 4, 2, 1);
    let tc = theory_constants(&inst).unwrap();
    for _ in 0..200 {
        let t1: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let t2: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for agent in 0..2 {
            let lhs = NormKind::Sup.dist(&expected_operator(&inst, agent, &t1), &expected_operator(&inst, agent, &t2));
            assert!(lhs <= tc.gamma_c * NormKind::Sup.dist(&t1, &t2) + 1e-12);
        }
    }
}

#[test]
fn offpolicy_operator_factor_uses_n_not_n_plus_one() {
    // A constant difference is scaled by exactly 1 - mu(s)(1 - gamma^n) at state s,
    // which exceeds 1 - mu_min (1 - gamma^{n+1}) at the least visited state.
    let inst = instance(AlgorithmKind::OffPolicyTdTabular, 2, 3, 2, 1);
    let tc = theory_constants(&inst).unwrap();
    let ones = vec![1.0; 3];
    let g = expected_operator(&inst, 0, &ones);
    let mu = inst.behavior_stationary(0);
    let gamma = inst.mdp().gamma();
    for s in 0..3 {
        assert!((g[s] - (1.0 - mu[s] * (1.0 - gamma))).abs() < 1e-12);
    }
    let realized = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mu_min = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let (stated, ..) = offpolicy_constants(mu_min, gamma, 1, 1.0);
    assert!(realized > stated);
    assert!(tc.gamma_c >= stated);
}

#[test]
fn instance_validation() {
    let (mdp, pi) = small_random_mdp(1, 3, 2);
    assert!(matches!(
        AlgorithmInstance::new(AlgorithmKind::QLearning, mdp.clone(), pi.clone(), vec![], None, 2),
        Err(FedError::Parameter(_))
    ));
    assert!(matches!(
        AlgorithmInstance::new(AlgorithmKind::OnPolicyTdLfa, mdp.clone(), pi.clone(), vec![], None, 1),
        Err(FedError::Precondition(_))
    ));
    let lazy = Policy::deterministic(&[0, 0, 0], 2).unwrap();
    assert!(matches!(
        AlgorithmInstance::new(AlgorithmKind::OffPolicyTdTabular, mdp, pi, vec![lazy], None, 1),
        Err(FedError::Coverage { .. })
    ));
    assert_eq!("q_learning".parse::<AlgorithmKind>().unwrap(), AlgorithmKind::QLearning);
    assert!("sarsa".parse::<AlgorithmKind>().is_err());
}
