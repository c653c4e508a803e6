mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

use common::{random_scenario, Bounds, Mix, Reference};
use epichain::agreement::{compare, curve_distance, Evidence, Outcome, Tolerances};
use epichain::codec::{self, Canonical};
use epichain::epi_data::{estimate_markov, PseudonymizedRecord, TransitionCounts, TransitionMatrix};
use epichain::ledger::{
    compute_state_root, Block, DeployContract, Event, InvokeContract, Ledger, ObservationBatch,
    PartyId, StateCommitment, Transaction, TxBody,
};
use epichain::runtime::{ContractKind, Prng, Q32, Q32_ONE_RAW};
use epichain::sir::{self, Compartment, ContactTable, CurveRow, EpidemicCurve, SirParams};
use epichain::Hash32;

fn hash() -> impl Strategy<Value = Hash32> {
    any::<[u8; 32]>().prop_map(Hash32)
}

fn record() -> impl Strategy<Value = PseudonymizedRecord> {
    (hash(), any::<u64>(), 0..50u64, 0..20u64).prop_map(|(pseudonym, step, location_id, c)| {
        PseudonymizedRecord {
            pseudonym,
            step,
            location_id,
            contacts_observed: c,
        }
    })
}

fn kind() -> impl Strategy<Value = ContractKind> {
    prop_oneof![
        Just(ContractKind::SirSim),
        Just(ContractKind::Agreement),
        Just(ContractKind::DataStore)
    ]
}

fn body() -> impl Strategy<Value = TxBody> {
    let bytes = || prop::collection::vec(any::<u8>(), 0..24);
    prop_oneof![
        (hash(), prop::collection::vec(record(), 0..3)).prop_map(|(target, records)| {
            TxBody::ObservationBatch(ObservationBatch { target, records })
        }),
        (kind(), bytes()).prop_map(|(kind, init_payload)| {
            TxBody::DeployContract(DeployContract { kind, init_payload })
        }),
        (hash(), "[a-z]{0,6}", bytes()).prop_map(|(contract_id, method, args)| {
            TxBody::InvokeContract(InvokeContract {
                contract_id,
                method,
                args,
            })
        }),
    ]
}

fn transaction() -> impl Strategy<Value = Transaction> {
    (body(), any::<[u8; 8]>()).prop_map(|(b, p)| Transaction::new(&b, PartyId(p)))
}

/// Canonical encoding is injective: over 10^4 random transaction bodies, equal
/// bytes only ever come from equal values.
#[test]
fn encoding_is_injective() {
    let mut runner = TestRunner::deterministic();
    let strategy = body();
    let mut seen: HashMap<Vec<u8>, TxBody> = HashMap::new();
    for _ in 0..10_000 {
        let value = strategy.new_tree(&mut runner).unwrap().current();
        let mut enc = codec::Encoder::new();
        encode_body(&value, &mut enc);
        let bytes = enc.finish();
        if let Some(prev) = seen.insert(bytes, value.clone()) {
            assert_eq!(prev, value);
        }
    }
    assert!(seen.len() > 9_000, "corpus too repetitive: {}", seen.len());
}

fn encode_body(b: &TxBody, enc: &mut codec::Encoder) {
    match b {
        TxBody::ObservationBatch(x) => enc.u64(0).value(x),
        TxBody::DeployContract(x) => enc.u64(1).value(x),
        TxBody::InvokeContract(x) => enc.u64(2).value(x),
    };
}

fn small_ledger() -> Ledger {
    let mut ledger = Ledger::new();
    for h in 0..3u8 {
        let txs = (0..2)
            .map(|i| {
                Transaction::new(
                    &TxBody::DeployContract(DeployContract {
                        kind: ContractKind::DataStore,
                        init_payload: vec![h, i],
                    }),
                    PartyId([h; 8]),
                )
            })
            .collect();
        let states = [(Hash32::digest(&[h]), vec![h; 3]), (Hash32::digest(b"z"), vec![9])];
        let events = vec![Event {
            contract_id: Hash32::digest(&[h]),
            data: vec![h, h],
        }];
        ledger
            .append_block(txs, &StateCommitment::from_states(states), events)
            .unwrap();
    }
    ledger
}

proptest! {
    #[test]
    fn transaction_round_trip(tx in transaction()) {
        let bytes = codec::to_bytes(&tx);
        let back: Transaction = codec::from_bytes(&bytes).unwrap();
        prop_assert_eq!(codec::to_bytes(&back), bytes);
        prop_assert_eq!(back, tx);
    }

    #[test]
    fn state_root_ignores_insertion_order(
        states in prop::collection::btree_map(hash(), prop::collection::vec(any::<u8>(), 0..8), 0..12)
            .prop_map(|m| m.into_iter().collect::<Vec<_>>())
            .prop_shuffle()
    ) {
        let mut sorted = states.clone();
        sorted.sort();
        prop_assert_eq!(compute_state_root(states), compute_state_root(sorted));
    }

    #[test]
    fn any_single_byte_mutation_is_detected(block in 0usize..3, pos in any::<prop::sample::Index>(), mask in 1u8..) {
        let mut ledger = small_ledger();
        let mut bytes = codec::to_bytes(&ledger.blocks()[block]);
        let i = pos.index(bytes.len());
        bytes[i] ^= mask;
        // Bytes that no longer decode are rejected before they reach a chain.
        if let Ok(mutated) = codec::from_bytes::<Block>(&bytes) {
            ledger.blocks_mut()[block] = mutated;
            let report = ledger.verify_chain();
            prop_assert!(!report.ok);
            prop_assert_eq!(report.first_bad_height, Some(block as u64));
        }
    }

    #[test]
    fn estimated_rows_apportion_exactly(
        counts in prop::collection::vec((0..6u64, 0..6u64, 1..1000u64), 0..40)
    ) {
        let mut c = TransitionCounts::default();
        for &(s, d, n) in &counts {
            for _ in 0..n.min(50) {
                c.add(s, d);
            }
        }
        let m = estimate_markov(&c, 6).unwrap();
        for (src, row) in m.rows().iter().enumerate() {
            prop_assert_eq!(row.iter().map(|(_, p)| p.raw()).sum::<u64>(), Q32_ONE_RAW);
            let total: u64 = c.rows.get(&(src as u64)).map_or(0, |r| r.values().sum());
            for &(dest, p) in row {
                if total == 0 {
                    prop_assert_eq!(dest, src as u64);
                    continue;
                }
                // largest remainder never moves a share by more than one unit
                let exact = c.get(src as u64, dest) as u128 * Q32_ONE_RAW as u128;
                let floor = (exact / total as u128) as u64;
                prop_assert!(p.raw() == floor || p.raw() == floor + 1);
            }
        }
    }
}

fn evidence_strategy() -> impl Strategy<Value = Evidence> {
    (1..50u64, 1..30usize, any::<u64>()).prop_map(|(population, len, seed)| {
        let mut rng = Mix(seed);
        let mut rows = Vec::with_capacity(len);
        let (mut s, mut r) = (population, 0);
        for _ in 0..len {
            let infect = rng.range(0, s);
            s -= infect;
            let infected_now = population - s - r;
            let recover = rng.range(0, infected_now);
            r += recover;
            rows.push(CurveRow {
                susceptible: s,
                infected: population - s - r,
                recovered: r,
            });
        }
        Evidence {
            formalism_id: sir::FORMALISM_ID.into(),
            params_digest: Hash32::ZERO,
            population,
            curve: EpidemicCurve { rows },
            commitment: Hash32::ZERO,
        }
    })
}

fn tolerances() -> impl Strategy<Value = Tolerances> {
    (0..=Q32_ONE_RAW, 0..40u64, 0..=Q32_ONE_RAW).prop_map(|(c, p, a)| Tolerances {
        epsilon_curve: Q32::from_raw(c).unwrap(),
        epsilon_peak_time: p,
        epsilon_attack_rate: Q32::from_raw(a).unwrap(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn agreement_is_reflexive(a in evidence_strategy(), tol in tolerances()) {
        let v = compare(&a, &a, &tol).unwrap();
        prop_assert_eq!(v.outcome, Outcome::Consistent);
        let d = v.detail.unwrap();
        prop_assert_eq!((d.curve_distance, d.peak_time_delta, d.attack_rate_delta), (Q32::ZERO, 0, Q32::ZERO));
    }

    #[test]
    fn agreement_is_symmetric(a in evidence_strategy(), b in evidence_strategy(), tol in tolerances()) {
        prop_assert_eq!(compare(&a, &b, &tol).unwrap(), compare(&b, &a, &tol).unwrap());
        prop_assert_eq!(curve_distance(&a, &b).unwrap(), curve_distance(&b, &a).unwrap());
    }

    #[test]
    fn formalism_gate(a in evidence_strategy(), b in evidence_strategy(), tol in tolerances(), id in "[A-Z]{1,5}/[0-9]") {
        let mut b = b;
        prop_assume!(id != a.formalism_id);
        b.formalism_id = id;
        prop_assert_eq!(compare(&a, &b, &tol).unwrap().outcome, Outcome::Incomparable);
        prop_assert!(compare(&a, &b, &tol).unwrap().detail.is_none());
    }

    #[test]
    fn looser_tolerances_never_break_consistency(
        a in evidence_strategy(),
        b in evidence_strategy(),
        tol in tolerances(),
        extra in (0..=Q32_ONE_RAW, 0..40u64, 0..=Q32_ONE_RAW),
    ) {
        let looser = Tolerances {
            epsilon_curve: Q32::from_raw((tol.epsilon_curve.raw() + extra.0).min(Q32_ONE_RAW)).unwrap(),
            epsilon_peak_time: tol.epsilon_peak_time + extra.1,
            epsilon_attack_rate: Q32::from_raw((tol.epsilon_attack_rate.raw() + extra.2).min(Q32_ONE_RAW)).unwrap(),
        };
        if compare(&a, &b, &tol).unwrap().outcome == Outcome::Consistent {
            prop_assert_eq!(compare(&a, &b, &looser).unwrap().outcome, Outcome::Consistent);
        }
    }

    #[test]
    fn distance_is_zero_on_equal_fractions(a in evidence_strategy(), k in 2..5u64) {
        // Scaling every count by k leaves the normalized curve unchanged.
        let mut b = a.clone();
        b.population *= k;
        for r in &mut b.curve.rows {
            *r = CurveRow { susceptible: r.susceptible * k, infected: r.infected * k, recovered: r.recovered * k };
        }
        prop_assert_eq!(curve_distance(&a, &b).unwrap(), Q32::ZERO);
    }
}

fn small_bounds() -> Bounds {
    Bounds {
        max_population: 40,
        max_locations: 4,
        max_period: 8,
        max_contacts: 6,
    }
}

fn run_scenario(seed: u64, steps: u64) -> sir::SirState {
    let s = random_scenario(&mut Mix(seed), &small_bounds());
    let mut prng = Prng::new(s.params.scenario_seed);
    let mut state = sir::init_sim(s.params, s.matrix, &s.contacts, &mut prng).unwrap();
    sir::run(&mut state, steps, &mut prng).unwrap();
    state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn curves_conserve_and_are_monotone(seed in any::<u64>(), steps in 1..60u64) {
        let state = run_scenario(seed, steps);
        prop_assert!(state.curve.is_well_formed(state.population()));
        prop_assert_eq!(state.curve.len() as u64, steps + 1);
    }

    #[test]
    fn infectious_duration_is_exact(seed in any::<u64>()) {
        let state = run_scenario(seed, 80);
        for a in &state.agents {
            if let (Some(i), Some(r)) = (a.infected_at_step, a.recovered_at_step) {
                prop_assert_eq!(r - i, a.infectious_period_steps);
            }
        }
    }

    #[test]
    fn zero_beta_never_spreads(seed in any::<u64>()) {
        let mut s = random_scenario(&mut Mix(seed), &small_bounds());
        s.params.beta_lo = Q32::ZERO;
        s.params.beta_hi = Q32::ZERO;
        let seeded = s.params.initial_infected.len() as u64;
        let mut prng = Prng::new(s.params.scenario_seed);
        let mut state = sir::init_sim(s.params, s.matrix, &s.contacts, &mut prng).unwrap();
        sir::run(&mut state, 30, &mut prng).unwrap();
        prop_assert!(state.curve.rows.windows(2).all(|w| w[1].infected <= w[0].infected));
        prop_assert!(state.curve.rows.iter().all(|r| r.ever_infected() == seeded));
    }

    #[test]
    fn full_mixing_infects_every_contact_in_one_step(n in 2..30u64, seed in any::<u64>()) {
        let params = SirParams {
            population: n,
            n_locations: 1,
            beta_lo: Q32::ONE,
            beta_hi: Q32::ONE,
            inf_period_lo: 2,
            inf_period_hi: 5,
            initial_infected: vec![seed % n],
            initial_locations: Default::default(),
            scenario_seed: seed,
        };
        let mut prng = Prng::new(seed);
        let mut state = sir::init_sim(params, TransitionMatrix::identity(1), &ContactTable::uniform(n - 1), &mut prng).unwrap();
        sir::step(&mut state, &mut prng);
        prop_assert!(state.agents.iter().all(|a| a.compartment == Compartment::Infected));
    }

    #[test]
    fn matches_reference_interpreter(seed in any::<u64>(), steps in 1..10u64) {
        let bounds = Bounds { max_population: 5, max_locations: 2, max_period: 4, max_contacts: 5 };
        let s = random_scenario(&mut Mix(seed), &bounds);
        let mut reference = Reference::new(&s, s.params.scenario_seed);
        let mut prng = Prng::new(s.params.scenario_seed);
        let mut state = sir::init_sim(s.params.clone(), s.matrix.clone(), &s.contacts, &mut prng).unwrap();
        for _ in 0..steps {
            sir::step(&mut state, &mut prng);
            reference.step();
            for (a, r) in state.agents.iter().zip(&reference.agents) {
                prop_assert_eq!(
                    (a.location, a.compartment, a.infected_at_step, a.recovered_at_step, a.infected_by, a.infectious_period_steps),
                    (r.location, r.compartment, r.infected_at, r.recovered_at, r.infected_by, r.period)
                );
            }
        }
    }

    #[test]
    fn sir_state_round_trips(seed in any::<u64>(), steps in 1..20u64) {
        let state = run_scenario(seed, steps);
        let bytes = codec::to_bytes(&state);
        let back: sir::SirState = codec::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &state);
        let mut enc = codec::Encoder::new();
        back.encode(&mut enc);
        prop_assert_eq!(enc.finish(), bytes);
    }
}

#[test]
fn markov_split_is_even_over_many_steps() {
    let half = vec![(1, Q32::HALF), (2, Q32::HALF)];
    let matrix = TransitionMatrix::new(3, vec![half.clone(), half.clone(), half]).unwrap();
    let mut prng = Prng::new(2024);
    let mut location = 0;
    let mut at_b = 0;
    for _ in 0..10_000 {
        location = matrix.sample(location, &mut prng);
        at_b += (location == 1) as u32;
    }
    let fraction = at_b as f64 / 10_000.0;
    assert!((0.48..=0.52).contains(&fraction), "{fraction}");
}
