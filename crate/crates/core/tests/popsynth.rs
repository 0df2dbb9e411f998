use std::collections::{BTreeMap, BTreeSet};

use hhdemand::io::{read_population, write_population};
use hhdemand::popsynth::{draw_population, import_population, ipf_fit, MarginalTable, SeedSample};
use hhdemand::schedule::{Gender, Household, Person};
use hhdemand::Error;
use proptest::prelude::*;

fn template(id: u64, size: usize, income: u8, employed: usize) -> Household {
    Household {
        household_id: id,
        members: (0..size)
            .map(|i| Person {
                person_id: id * 10 + i as u64,
                age: if i < 2 { 40 + i as u32 } else { 10 },
                employed: i < employed,
                student: i >= 2,
                education: 2,
                has_license: i < 2,
                gender: if i % 2 == 0 { Gender::Male } else { Gender::Female },
            })
            .collect(),
        income,
        vehicles: 1,
        home_taz: 1,
    }
}

/// Seed templates and "true" weights whose totals define feasible marginals for two zones.
fn problem() -> impl Strategy<Value = (Vec<Household>, Vec<f64>, Vec<(f64, f64)>)> {
    let hh = prop::collection::vec((1usize..=4, 1u8..=3, 0usize..=2), 6..20);
    let n = 20;
    (hh, prop::collection::vec(0.1f64..5.0, n), prop::collection::vec((0.1f64..5.0, 0.1f64..5.0), n))
        .prop_filter("every category supported", |(hh, _, _)| {
            (1..=4).all(|s| hh.iter().any(|h| h.0 == s)) && (1..=3).all(|i| hh.iter().any(|h| h.1 == i))
        })
        .prop_map(|(hh, w0, truth)| {
            let hs = hh.iter().enumerate().map(|(i, &(s, inc, e))| template(i as u64 + 1, s, inc, e.min(s))).collect::<Vec<_>>();
            let k = hs.len();
            (hs, w0[..k].to_vec(), truth[..k].to_vec())
        })
}

fn marginals(hs: &[Household], truth: &[(f64, f64)]) -> Vec<MarginalTable> {
    let mut size: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut income: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (zone, pick) in [(1u32, 0usize), (2, 1)] {
        let (s, i) = (size.entry(zone).or_insert(vec![0.0; 4]), income.entry(zone).or_insert(vec![0.0; 3]));
        for (h, t) in hs.iter().zip(truth) {
            let w = if pick == 0 { t.0 } else { t.1 };
            s[h.size() - 1] += w;
            i[h.income as usize - 1] += w;
        }
    }
    vec![
        MarginalTable::new("size", &["1", "2", "3", "4+"], size).unwrap(),
        MarginalTable::new("income", &["1", "2", "3"], income).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ipf_is_non_negative_and_monotone((hs, w0, truth) in problem()) {
        let seed = SeedSample::new(hs.clone(), w0).unwrap();
        let fit = ipf_fit(&seed, &marginals(&hs, &truth), 1e-6, 500).unwrap();
        for (zone, zf) in &fit.zones {
            prop_assert!(zf.weights.iter().all(|&w| w >= 0.0), "zone {}", zone);
            for w in zf.gap_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "zone {}: {:?}", zone, zf.gap_history);
            }
            if zf.converged {
                prop_assert!(zf.final_gap <= 1e-6);
            }
        }
    }

    #[test]
    fn drawn_population_validates((hs, w0, truth) in problem(), n in 0usize..200, rng in any::<u64>()) {
        let seed = SeedSample::new(hs.clone(), w0).unwrap();
        let fit = ipf_fit(&seed, &marginals(&hs, &truth), 1e-4, 100).unwrap();
        let pop = draw_population(&fit, n, rng).unwrap();
        prop_assert_eq!(pop.len(), n);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.csv");
        write_population(&path, &pop, None).unwrap();
        let back = read_population(&path, Some(&BTreeSet::from([1, 2]))).unwrap();
        prop_assert_eq!(back.households, pop.clone());
        prop_assert_eq!(draw_population(&fit, n, rng).unwrap(), pop);
    }
}

#[test]
fn import_reports_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.csv");
    write_population(&path, &[template(1, 2, 1, 1), template(2, 1, 2, 1)], None).unwrap();
    let zones = BTreeSet::from([1, 2]);
    assert_eq!(import_population(&path, &zones).unwrap().len(), 2);

    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let bad_age = lines[2].replacen(",41,", ",-1,", 1);
    std::fs::write(&path, [lines[0], lines[1], &bad_age, lines[3]].join("\n")).unwrap();
    let e = import_population(&path, &zones).unwrap_err().to_string();
    assert!(e.contains("row 3") && e.contains("age"), "{e}");

    write_population(&path, &[template(1, 1, 1, 1)], None).unwrap();
    let e = import_population(&path, &BTreeSet::from([7])).unwrap_err();
    assert!(matches!(e, Error::UnknownZone { taz: 1, .. }), "{e:?}");
}
