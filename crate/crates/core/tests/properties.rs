use fedsam::algorithms::{expected_operator, theory_constants, AlgorithmKind};
use fedsam::engine::{q_distribution, sync_average, sync_error, NormKind};
use fedsam::harness::{generate_instance, generate_parts, GeneratorParams};
use fedsam::mdp::{
    bellman_policy_operator, importance_ratio, optimality_operator, policy_transition_matrix, stationary_distribution,
    value_function_oracle,
};
use fedsam::sampling::{derive_seed, mixing_diagnostics, tv_to_stationary, Categorical};
use proptest::prelude::*;
use rand::SeedableRng;

fn small_params() -> impl Strategy<Value = (GeneratorParams, u64)> {
    (2usize..8, 1usize..4, 0.1f64..0.95, any::<u64>()).prop_map(|(ns, na, gamma, seed)| {
        let params = GeneratorParams {
            n_states: ns,
            n_actions: na,
            branching: ns.min(2),
            gamma,
            d: 1,
            n: 1,
            eps_cov: 0.5 / na as f64,
            ..GeneratorParams::default()
        };
        (params, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn q_distribution_is_normalized(c in 0.01f64..10.0, horizon in 1usize..5000) {
        let q = q_distribution(c, horizon).unwrap();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(q.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn averaging_preserves_mean_and_zeroes_dispersion(
        thetas in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..8)
    ) {
        let mean: Vec<f64> = (0..3).map(|k| thetas.iter().map(|t| t[k]).sum::<f64>() / thetas.len() as f64).collect();
        let mut synced = thetas.clone();
        sync_average(&mut synced).unwrap();
        for t in &synced {
            prop_assert_eq!(t, &synced[0]);
            for k in 0..3 {
                prop_assert!((t[k] - mean[k]).abs() <= 1e-10 * (1.0 + mean[k].abs()));
            }
        }
        let (_, omega) = sync_error(&synced, NormKind::Euclidean).unwrap();
        prop_assert_eq!(omega, 0.0);
    }

    #[test]
    fn stationary_distribution_is_invariant((params, seed) in small_params()) {
        let parts = generate_parts(&params, seed).unwrap();
        let p = policy_transition_matrix(&parts.mdp, &parts.target).unwrap();
        let mu = stationary_distribution(&p).unwrap();
        for s2 in 0..params.n_states {
            let flow: f64 = (0..params.n_states).map(|s| mu[s] * p[(s, s2)]).sum();
            prop_assert!((flow - mu[s2]).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_distance_obeys_geometric_mixing_bound((params, seed) in small_params()) {
        let parts = generate_parts(&params, seed).unwrap();
        let p = policy_transition_matrix(&parts.mdp, &parts.target).unwrap();
        let mu = stationary_distribution(&p).unwrap();
        let est = mixing_diagnostics(&p).unwrap();
        let mut pt = p.clone();
        pt.fill_with_identity();
        for t in 0..60 {
            let tv = tv_to_stationary(&pt, &mu);
            prop_assert!(tv <= est.m_bar * est.rho.powi(t) + 1e-9, "t={} tv={} bound={}", t, tv, est.m_bar * est.rho.powi(t));
            pt = &pt * &p;
        }
    }

    #[test]
    fn value_oracle_is_the_bellman_fixed_point((params, seed) in small_params()) {
        let parts = generate_parts(&params, seed).unwrap();
        let v = value_function_oracle(&parts.mdp, &parts.target).unwrap();
        let tv = bellman_policy_operator(&parts.mdp, &parts.target, &v).unwrap();
        prop_assert!(NormKind::Sup.dist(&v, &tv) < 1e-10);
        let vmax = 1.0 / (1.0 - params.gamma);
        prop_assert!(v.iter().all(|&x| x >= -1e-12 && x <= vmax + 1e-12));
    }

    #[test]
    fn optimality_operator_is_a_gamma_contraction(
        (params, seed) in small_params(),
        shift in prop::collection::vec(-5.0f64..5.0, 21),
    ) {
        let parts = generate_parts(&params, seed).unwrap();
        let d = params.n_states * params.n_actions;
        let q1: Vec<f64> = shift.iter().cycle().take(d).copied().collect();
        let q2: Vec<f64> = shift.iter().rev().cycle().take(d).copied().collect();
        let lhs = NormKind::Sup.dist(&optimality_operator(&parts.mdp, &q1), &optimality_operator(&parts.mdp, &q2));
        prop_assert!(lhs <= params.gamma * NormKind::Sup.dist(&q1, &q2) + 1e-12);
    }

    #[test]
    fn importance_ratios_respect_coverage_floor((params, seed) in small_params()) {
        let parts = generate_parts(&params, seed).unwrap();
        for b in &parts.behaviors {
            for s in 0..params.n_states {
                for a in 0..params.n_actions {
                    let r = importance_ratio(&parts.target, b, s, a).unwrap();
                    prop_assert!(r >= 0.0 && r <= 1.0 / params.eps_cov + 1e-9);
                }
            }
        }
    }

    #[test]
    fn categorical_never_draws_zero_mass(weights in prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], 1..12), seed in any::<u64>()) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let total: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let cat = Categorical::new(&p).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            prop_assert!(p[cat.sample(&mut rng)] > 0.0);
        }
    }

    #[test]
    fn derived_seeds_differ_across_streams(master in any::<u64>(), trial in 0u64..1000, a in 0u64..64, b in 0u64..64) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(master, trial, a), derive_seed(master, trial, b));
    }

    #[test]
    fn q_learning_operator_contracts(seed in 0u64..500, t in prop::collection::vec(-3.0f64..3.0, 12), u in prop::collection::vec(-3.0f64..3.0, 12)) {
        let params = GeneratorParams { n_states: 4, n_actions: 3, d: 1, ..GeneratorParams::default() };
        let inst = generate_instance(AlgorithmKind::QLearning, &params, seed).unwrap();
        let tc = theory_constants(&inst).unwrap();
        for agent in 0..inst.behaviors().len() {
            let lhs = NormKind::Sup.dist(&expected_operator(&inst, agent, &t), &expected_operator(&inst, agent, &u));
            prop_assert!(lhs <= tc.gamma_c * NormKind::Sup.dist(&t, &u) + 1e-12);
        }
    }
}
