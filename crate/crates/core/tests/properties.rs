use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pooled_whittle::birth_death::{stationary_distribution_truncated, ThresholdChain};
use pooled_whittle::index::{
    build_index_table, solve_relative_value, whittle_index_direct, IndexOptions,
};
use pooled_whittle::model::{
    pair_parameters, CostFunction, FileType, NetworkTopology, PairParameters, Server,
};
use pooled_whittle::policy::{Policy, SystemState};
use pooled_whittle::scenario::Scenario;
use pooled_whittle::verify::truncated_balance_oracle;
use pooled_whittle::Error;

const EPS: f64 = 0.05;

fn cost() -> impl Strategy<Value = CostFunction> {
    prop_oneof![
        (1.0..20.0f64).prop_map(CostFunction::Linear),
        (0.1..3.0f64, 0.0..5.0f64).prop_map(|(a, b)| CostFunction::Quadratic(a, b)),
    ]
}

fn topology() -> impl Strategy<Value = NetworkTopology> {
    (1usize..=4, 1usize..=3)
        .prop_flat_map(|(n, m)| {
            (
                prop::collection::vec((0.01..0.15f64, cost()), n),
                prop::collection::vec(0.2..1.0f64, m),
                prop::collection::vec(1u32..(1 << m), n),
            )
        })
        .prop_map(|(files, mus, masks)| {
            let m = mus.len();
            let edges: Vec<(usize, usize)> = masks
                .iter()
                .enumerate()
                .flat_map(|(i, &mask)| {
                    (0..m)
                        .filter(move |j| mask >> j & 1 == 1)
                        .map(move |j| (i + 1, j + 1))
                })
                .collect();
            NetworkTopology::new(
                files
                    .into_iter()
                    .enumerate()
                    .map(|(i, (arrival_rate, cost))| FileType {
                        id: i + 1,
                        arrival_rate,
                        cost,
                    })
                    .collect(),
                mus.into_iter()
                    .enumerate()
                    .map(|(j, capacity)| Server {
                        id: j + 1,
                        capacity,
                    })
                    .collect(),
                edges,
            )
            .unwrap()
        })
}

/// Stable pair parameters with load at most 0.8 and at least one other server.
fn stable_params() -> impl Strategy<Value = PairParameters> {
    (0.05..1.0f64, 0.05..1.0f64, 0.05..0.8f64).prop_map(|(mu_k, mu_hat, load)| {
        PairParameters::from_rates(load * (mu_k + mu_hat), mu_k, mu_hat, EPS).unwrap()
    })
}

fn small_index_options() -> IndexOptions {
    IndexOptions {
        n_max: 80,
        max_queue: 20,
        ..IndexOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scenario_round_trips_through_toml(t in topology()) {
        let s = Scenario::from_topology(&t);
        let text = s.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.topology().unwrap(), t);
        prop_assert_eq!(back.canonical_hash().unwrap(), s.canonical_hash().unwrap());
    }

    #[test]
    fn every_policy_allocates_feasibly(
        t in topology(),
        queues in prop::collection::vec(0u32..30, 4),
        seed in any::<u64>(),
    ) {
        let state = SystemState::new(queues[..t.num_files()].to_vec());
        let table = build_index_table(&t, &small_index_options()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for policy in [Policy::Whittle(table), Policy::Uniform, Policy::Weighted, Policy::Random, Policy::MaxWeight] {
            let a = policy.decide(&t, &state, &mut rng).unwrap();
            prop_assert!(a.check(&t, &state).is_ok(), "{}: {:?}", policy.name(), a.check(&t, &state));
        }
    }

    #[test]
    fn whittle_decisions_ignore_cost_units(
        t in topology(),
        queues in prop::collection::vec(0u32..30, 4),
        factor in 0.1..10.0f64,
    ) {
        let scaled = NetworkTopology::new(
            t.files()
                .iter()
                .map(|f| FileType { cost: f.cost.scaled(factor), ..f.clone() })
                .collect(),
            t.servers().to_vec(),
            t.edges(),
        )
        .unwrap();
        let state = SystemState::new(queues[..t.num_files()].to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Policy::Whittle(build_index_table(&t, &small_index_options()).unwrap())
            .decide(&t, &state, &mut rng)
            .unwrap();
        let b = Policy::Whittle(build_index_table(&scaled, &small_index_options()).unwrap())
            .decide(&scaled, &state, &mut rng)
            .unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pair_parameters_ignore_time_units(t in topology(), factor in 0.1..10.0f64) {
        let scaled = t.with_rates_scaled(factor);
        for (file, server) in t.edges() {
            let p = pair_parameters(&t, file, server, EPS).unwrap();
            let q = pair_parameters(&scaled, file, server, EPS).unwrap();
            for (a, b) in [(p.lambda_arr, q.lambda_arr), (p.mu_k, q.mu_k), (p.mu_hat, q.mu_hat)] {
                prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
            prop_assert!((q.scale - factor * p.scale).abs() <= 1e-9 * q.scale);
        }
    }

    #[test]
    fn closed_form_matches_balance_equations(params in stable_params(), threshold in 0usize..=10) {
        let n = 150;
        let chain = ThresholdChain::new(params, threshold).unwrap();
        let closed = stationary_distribution_truncated(&chain, n);
        let oracle = truncated_balance_oracle(&params, threshold, n).unwrap();
        for (x, (a, b)) in closed.probabilities.iter().zip(&oracle).enumerate() {
            prop_assert!((a - b).abs() <= 1e-10, "x = {x}: {a} vs {b}");
        }
    }

    #[test]
    fn average_cost_is_affine_in_the_charge(
        params in stable_params(),
        c in cost(),
        threshold in 0usize..20,
        l1 in -5.0..5.0f64,
        l2 in -5.0..5.0f64,
    ) {
        let beta = |l| solve_relative_value(&params, &c, threshold, l, 120).unwrap().beta;
        let mid = beta((l1 + l2) / 2.0);
        let avg = (beta(l1) + beta(l2)) / 2.0;
        prop_assert!((mid - avg).abs() <= 1e-8 * (1.0 + mid.abs()), "{mid} vs {avg}");
    }

    #[test]
    fn index_scales_with_cost(params in stable_params(), c in cost(), x in 1usize..20, factor in 0.1..10.0f64) {
        let (base, scaled) = match (
            whittle_index_direct(&params, &c, x, 100),
            whittle_index_direct(&params, &c.scaled(factor), x, 100),
        ) {
            (Err(Error::DegenerateAffineMap { .. }), _) | (_, Err(Error::DegenerateAffineMap { .. })) => {
                return Err(TestCaseError::reject("no fixed point"))
            }
            (a, b) => (a.unwrap(), b.unwrap()),
        };
        let (a, b) = (base.value, scaled.value);
        // λ = a / (1 − slope) loses digits as the slope approaches 1.
        let condition = 1.0 / (1.0 - base.slope).abs();
        prop_assert!(
            (b - factor * a).abs() <= 1e-9 * condition * (1.0 + b.abs()),
            "{b} vs {factor} * {a}, condition {condition}"
        );
    }
}
