mod common;

use common::{brute_force_min_events, check_partition, items_of, random_household};
use hhdemand::coordination::{build_event_table, participant_distribution, role_combinations, solo_share, EventOptions};
use hhdemand::schedule::{ActivityCatalog, ActivityType, HeadSelection};
use hhdemand::synthetic::{generate_synthetic_corpus, SyntheticRuleSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn event_table_is_a_minimal_valid_partition(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, chains) = random_household(seed % 1000, &mut rng);
        let events = build_event_table(&h, &chains, &ActivityCatalog::default(), &HeadSelection::default(), &EventOptions::default()).unwrap();
        if let Err(e) = check_partition(&h, &chains, &events) {
            return Err(TestCaseError::fail(e));
        }
        prop_assert_eq!(events.len(), brute_force_min_events(&items_of(&chains)));
        for (i, e) in events.iter().enumerate() {
            prop_assert_eq!(e.event_id as usize, i + 1);
            prop_assert_eq!(e.coordinated, e.participants.len() >= 2);
        }
    }

    #[test]
    fn chain_order_does_not_change_events(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, chains) = random_household(1, &mut rng);
        let mut rev = chains.clone();
        rev.reverse();
        let opts = EventOptions::default();
        let a = build_event_table(&h, &chains, &ActivityCatalog::default(), &HeadSelection::default(), &opts).unwrap();
        let b = build_event_table(&h, &rev, &ActivityCatalog::default(), &HeadSelection::default(), &opts).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn participant_distribution_rows_are_shares() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut all = Vec::new();
    for id in 0..300 {
        let (h, chains) = random_household(id, &mut rng);
        all.extend(build_event_table(&h, &chains, &ActivityCatalog::default(), &HeadSelection::default(), &EventOptions::default()).unwrap());
    }
    for (k, row) in participant_distribution(&all) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{k:?}");
        assert!(row[3..].iter().all(|&x| x == 0.0), "at most 3 members");
    }
    let s = solo_share(&all);
    assert!(s > 0.0 && s < 1.0);
}

#[test]
fn planted_roles_are_recovered() {
    let c = generate_synthetic_corpus(&SyntheticRuleSet::default(), 1500, 9).unwrap();
    let cat = ActivityCatalog::default();
    let mut events = Vec::new();
    for h in &c.households {
        let cs = c.chains.for_household(h).unwrap();
        events.extend(build_event_table(h, &cs, &cat, &HeadSelection::default(), &EventOptions::default()).unwrap());
    }
    let combos = role_combinations(&events);
    assert_eq!(combos[&ActivityType::MEAL][0].0, "Self+Spouse");
    let school = &combos[&ActivityType::SCHOOL];
    assert!(school[0].0.contains("Child"), "{school:?}");
    assert!(school[0].0.contains("Self") || school[0].0.contains("Spouse"), "{school:?}");
}
