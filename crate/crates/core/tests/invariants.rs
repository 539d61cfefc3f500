use consensus_cards::analysis::{estimate_p_infinity, fit_exponential};
use consensus_cards::dynamics::Simulation;
use consensus_cards::ensemble::{run_tally, CurveRow, FailureCurve, Fingerprint};
use consensus_cards::model::ConfidenceTable;
use consensus_cards::samplers::{
    enumerate_distribution, gibbs_weights, inclusion_probabilities, SubsetSampler,
};
use consensus_cards::{CardId, DeckSet, SimConfig, Strategy, TopologyKind};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strategy() -> impl proptest::strategy::Strategy<Value = Strategy> {
    prop_oneof![
        Just(Strategy::Uniform),
        Just(Strategy::TopC),
        (0.0..3.0f64).prop_map(|beta| Strategy::Gibbs { beta }),
    ]
}

/// `(n, c)` with `1 <= c <= n`.
fn size(max_n: usize) -> impl proptest::strategy::Strategy<Value = (usize, usize)> {
    (2..=max_n).prop_flat_map(|n| (Just(n), 1..=n))
}

fn topology() -> impl proptest::strategy::Strategy<Value = TopologyKind> {
    prop_oneof![Just(TopologyKind::Complete), Just(TopologyKind::Cycle)]
}

fn table(values: &[u32]) -> ConfidenceTable<'_> {
    let cards = (0..values.len() as u32).map(CardId).collect();
    ConfidenceTable::new(values.len(), cards, values).unwrap()
}

#[test]
fn decks_have_the_canonical_structure() {
    for n in 2..=64usize {
        let decks = DeckSet::build(n).unwrap();
        let common = decks.common_card();
        assert_eq!(common, CardId(n as u32 + 1));
        for agent in 0..n {
            let deck = decks.deck(agent);
            assert_eq!(deck.len(), n);
            assert!(deck.contains(&common));
            assert!(!decks.contains(agent, CardId(agent as u32 + 1)));
        }
        for card in 1..=n as u32 {
            let holders = (0..n).filter(|&a| decks.contains(a, CardId(card))).count();
            assert_eq!(holders, n - 1, "card {card} at n = {n}");
        }
    }
}

#[test]
fn common_card_leads_under_uniform_display() {
    let config = SimConfig::new(6, 2, Strategy::Uniform, 0);
    let mut sim = Simulation::new(&config, 3).unwrap();
    for _ in 0..100_000 {
        sim.step();
    }
    let decks = sim.decks().clone();
    let state = sim.state();
    let mean = |card: CardId| {
        let held: Vec<u32> =
            (0..6).filter_map(|a| state.confidence(a, card)).collect();
        held.iter().map(|&f| f as f64).sum::<f64>() / held.len() as f64
    };
    let common = mean(decks.common_card());
    for card in (1..=6).map(CardId) {
        assert!(mean(card) < common, "card {card:?}");
    }
}

#[test]
fn uniform_display_never_fails_at_long_times() {
    let config = SimConfig::new(10, 5, Strategy::Uniform, 10_000).with_runs(100_000);
    let (p, se) = estimate_p_infinity(&config, 10_000).unwrap();
    assert_eq!((p, se), (0.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn interactions_add_c_or_c_minus_one(
        (n, c) in size(8),
        strategy in strategy(),
        topology in topology(),
        seed in any::<u64>(),
    ) {
        let topology = if n < 3 { TopologyKind::Complete } else { topology };
        let config = SimConfig::new(n, c, strategy, 0).with_topology(topology);
        let mut sim = Simulation::new(&config, seed).unwrap();
        for _ in 0..300 {
            let before = sim.state().clone();
            let step = sim.step();
            prop_assert!(step.incremented == c || step.incremented + 1 == c);
            let after = sim.state();
            prop_assert_eq!(after.total_mass(), before.total_mass() + step.incremented as u64);
            for agent in 0..n {
                let grew = before
                    .confidences(agent)
                    .iter()
                    .zip(after.confidences(agent))
                    .all(|(b, a)| a >= b);
                prop_assert!(grew);
                if agent != step.observer {
                    prop_assert_eq!(before.confidences(agent), after.confidences(agent));
                }
            }
        }
    }

    #[test]
    fn equal_seeds_give_equal_trajectories(
        (n, c) in size(7),
        strategy in strategy(),
        seed in any::<u64>(),
    ) {
        let config = SimConfig::new(n, c, strategy, 0);
        let mut a = Simulation::new(&config, seed).unwrap();
        let mut b = Simulation::new(&config, seed).unwrap();
        for _ in 0..40 {
            a.advance_round();
            b.advance_round();
            prop_assert_eq!(a.state(), b.state());
        }
    }

    #[test]
    fn checkpoints_do_not_perturb_stepped_runs(
        (n, c) in size(6),
        strategy in strategy(),
        seed in any::<u64>(),
    ) {
        let base = SimConfig::new(n, c, strategy, 60).with_fast_forward(false);
        let sparse = base.clone().with_checkpoints(vec![60]);
        let dense = base.with_checkpoints((0..=60).collect());
        let mut a = Simulation::new(&sparse, seed).unwrap();
        let mut b = Simulation::new(&dense, seed).unwrap();
        a.run(&sparse);
        b.run(&dense);
        prop_assert_eq!(a.state(), b.state());
    }

    #[test]
    fn full_display_ignores_the_strategy(n in 2..8usize, seed in any::<u64>(), beta in 0.0..5.0f64) {
        let final_state = |strategy| {
            let config = SimConfig::new(n, n, strategy, 50);
            let mut sim = Simulation::new(&config, seed).unwrap();
            sim.run(&config);
            sim.state().clone()
        };
        let uniform = final_state(Strategy::Uniform);
        prop_assert_eq!(&uniform, &final_state(Strategy::TopC));
        prop_assert_eq!(&uniform, &final_state(Strategy::Gibbs { beta }));
    }

    #[test]
    fn full_display_samplers_return_the_deck(
        n in 1..10usize,
        strategy in strategy(),
        values in prop::collection::vec(0..100u32, 10),
        seed in any::<u64>(),
    ) {
        let mut sampler = SubsetSampler::new(strategy, n, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        sampler.draw(&mut rng, &values[..n], &mut out);
        out.sort_unstable();
        prop_assert_eq!(out, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn gibbs_law_is_shift_invariant(
        (n, c) in size(7),
        values in prop::collection::vec(0..30u32, 7),
        shift in 1..1000u32,
        beta in 0.0..3.0f64,
    ) {
        let values = &values[..n];
        let shifted: Vec<u32> = values.iter().map(|v| v + shift).collect();
        let a = enumerate_distribution(&table(values), c, beta, 10_000).unwrap();
        let b = enumerate_distribution(&table(&shifted), c, beta, 10_000).unwrap();
        for ((sa, pa), (sb, pb)) in a.entries().iter().zip(b.entries()) {
            prop_assert_eq!(sa, sb);
            prop_assert!((pa - pb).abs() <= 1e-12);
        }
    }

    #[test]
    fn inclusion_identity_matches_enumeration(
        (n, c) in size(10),
        values in prop::collection::vec(0..12u32, 10),
        beta in 0.0..2.0f64,
    ) {
        let values = &values[..n];
        let dist = enumerate_distribution(&table(values), c, beta, 10_000).unwrap();
        let weights = gibbs_weights(values, beta);
        let identity = inclusion_probabilities(&weights, c).unwrap();
        for (j, q) in identity.iter().enumerate() {
            let p = dist.inclusion(CardId(j as u32));
            prop_assert!((p - q).abs() <= 1e-10, "card {}: {} vs {}", j, p, q);
        }
    }

    #[test]
    fn split_ensembles_merge_to_the_whole(
        (n, c) in size(6),
        strategy in strategy(),
        seed in any::<u64>(),
        cut in 0..40u64,
    ) {
        let config = SimConfig::new(n, c, strategy, 30)
            .with_checkpoints(vec![0, 5, 30])
            .with_runs(40)
            .with_seed(seed);
        let whole = run_tally(&config, 0..40).unwrap();
        let parts = run_tally(&config, 0..cut).unwrap().merge(run_tally(&config, cut..40).unwrap());
        prop_assert_eq!(&whole, &parts);
        for row in whole.curve(&config).rows {
            let se = (row.p * (1.0 - row.p) / row.runs as f64).sqrt();
            prop_assert!((row.se - se).abs() <= 1e-15);
        }
    }

    #[test]
    fn fit_is_scale_consistent(a in 0.05..2.0f64, tau_c in 5.0..200.0f64, k in 0.1..1.0f64) {
        let runs = 1_000_000_000u64;
        let curve = |scale: f64| {
            let rows = (0..60u64)
                .map(|i| {
                    let tau = i * (tau_c / 4.0).ceil() as u64;
                    let p = scale * a * (-(tau as f64) / tau_c).exp();
                    let mut row = CurveRow::new(tau, (p * runs as f64).round() as u64, runs);
                    row.p = p;
                    row
                })
                .collect();
            let fingerprint = Fingerprint::of(&SimConfig::new(10, 5, Strategy::Uniform, 1));
            FailureCurve { rows, fingerprint }
        };
        let base = fit_exponential(&curve(0.01)).unwrap();
        let scaled = fit_exponential(&curve(0.01 * k)).unwrap();
        prop_assert!((scaled.tau_c / base.tau_c - 1.0).abs() < 1e-9);
        prop_assert!((scaled.a / (k * base.a) - 1.0).abs() < 1e-9);
        prop_assert!((base.tau_c / tau_c - 1.0).abs() < 1e-9);
    }
}
