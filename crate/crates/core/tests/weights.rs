mod common;

use std::collections::BTreeMap;

use common::XorShift;
use crisp_core::cluster::AssignmentTable;
use crisp_core::weights::{histogram, importance_weights, mix_histograms, Histogram, WeightOptions};
use proptest::prelude::*;

fn table(level: u32, paths: &[u64]) -> AssignmentTable {
    AssignmentTable::from_entries(level, paths.iter().enumerate().map(|(i, &p)| (i as u64, p)).collect())
}

fn hist(pairs: &[(u64, u64)]) -> Histogram {
    Histogram::from_counts(1, pairs.iter().copied().collect()).unwrap()
}

#[test]
fn histogram_matches_counting_script() {
    let mut rng = XorShift(64);
    let paths: Vec<u64> = (0..10_000).map(|_| rng.below(64)).collect();
    let h = histogram(&table(1, &paths)).unwrap();
    let mut counts = [0u64; 64];
    for &p in &paths {
        counts[p as usize] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        assert!((h.prob(c as u64) - n as f64 / 10_000.0).abs() < 1e-12);
        assert_eq!(h.count(c as u64), n);
    }
    assert_eq!(h.total(), 10_000);
    assert!(histogram(&table(1, &[])).is_err());
}

#[test]
fn histogram_small_cases() {
    let h = histogram(&table(1, &[0, 0, 1, 1])).unwrap();
    assert_eq!(h.probs(), &BTreeMap::from([(0, 0.5), (1, 0.5)]));
    let h = histogram(&table(1, &[4])).unwrap();
    assert_eq!(h.probs(), &BTreeMap::from([(4, 1.0)]));
}

#[test]
fn weights_match_count_ratio_script() {
    let mut rng = XorShift(6464);
    for _ in 0..50 {
        let ns: Vec<u64> = (0..64).map(|_| if rng.unit() < 0.3 { 0 } else { rng.below(500) }).collect();
        let ng: Vec<u64> = (0..64).map(|_| if rng.unit() < 0.2 { 0 } else { 1 + rng.below(5000) }).collect();
        let to_map = |v: &[u64]| -> BTreeMap<u64, u64> {
            v.iter().enumerate().filter(|(_, &n)| n > 0).map(|(c, &n)| (c as u64, n)).collect()
        };
        let (ms, mg) = (to_map(&ns), to_map(&ng));
        if ms.is_empty() || mg.is_empty() {
            continue;
        }
        let s = Histogram::from_counts(2, ms).unwrap();
        let g = Histogram::from_counts(2, mg).unwrap();
        let w = importance_weights(&s, &g, WeightOptions::default()).unwrap();
        let (total_s, total_g) = (ns.iter().sum::<u64>() as f64, ng.iter().sum::<u64>() as f64);
        let mut dropped = 0.0;
        for c in 0..64 {
            let want = (ns[c] as f64 / total_s) / (ng[c] as f64 / total_g);
            match w.weight(c as u64) {
                Some(got) => assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}"),
                None => {
                    assert_eq!(ng[c], 0);
                    dropped += ns[c] as f64 / total_s;
                }
            }
        }
        assert!((w.dropped_specialist_mass() - dropped).abs() < 1e-12);
    }
}

#[test]
fn weights_small_cases() {
    let u = hist(&[(0, 1), (1, 1), (2, 1), (3, 1)]);
    let w = importance_weights(&u, &u, WeightOptions::default()).unwrap();
    assert!(w.weights().values().all(|&x| x == 1.0));
    assert!(w.dropped_specialist_mass().is_sign_positive());
    let s = hist(&[(0, 1)]);
    let g = hist(&[(0, 1), (1, 1)]);
    let w = importance_weights(&s, &g, WeightOptions::default()).unwrap();
    assert_eq!(w.weights(), &BTreeMap::from([(0, 2.0), (1, 0.0)]));
    let smoothed = importance_weights(&hist(&[(0, 1), (9, 1)]), &g, WeightOptions { smoothing: true }).unwrap();
    assert_eq!(smoothed.dropped_specialist_mass(), 0.0);
    assert!(smoothed.weight(9).unwrap() > 0.0);
}

#[test]
fn mixing_matches_averaging_script() {
    let mut rng = XorShift(3);
    let raw: Vec<Vec<u64>> = (0..3)
        .map(|_| (0..20).map(|_| if rng.unit() < 0.5 { 0 } else { 1 + rng.below(100) }).collect())
        .collect();
    let hists: Vec<Histogram> = raw
        .iter()
        .map(|v| {
            Histogram::from_counts(
                1,
                v.iter().enumerate().filter(|(_, &n)| n > 0).map(|(c, &n)| (c as u64, n)).collect(),
            )
            .unwrap()
        })
        .collect();
    let third = 1.0 / 3.0;
    let mixed = mix_histograms(&hists, &[third; 3]).unwrap();
    for c in 0..20 {
        let want: f64 = raw
            .iter()
            .map(|v| v[c] as f64 / v.iter().sum::<u64>() as f64)
            .sum::<f64>()
            / 3.0;
        assert!((mixed.prob(c as u64) - want).abs() < 1e-12);
    }
    assert!(mixed.counts().is_empty());
    let a = hist(&[(0, 1)]);
    let b = hist(&[(1, 1)]);
    let m = mix_histograms(&[a.clone(), b], &[0.5, 0.5]).unwrap();
    assert_eq!(m.probs(), &BTreeMap::from([(0, 0.5), (1, 0.5)]));
    assert_eq!(mix_histograms(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap().probs(), a.probs());
    assert!(mix_histograms(&[a.clone()], &[0.9]).is_err());
    assert!(mix_histograms(&[a.clone(), a], &[1.5, -0.5]).is_err());
}

#[test]
fn files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let s = hist(&[(0, 3), (5, 1)]);
    let g = hist(&[(0, 1), (2, 7)]);
    let w = importance_weights(&s, &g, WeightOptions::default()).unwrap();
    s.save(&dir.path().join("h.json")).unwrap();
    w.save(&dir.path().join("w.json")).unwrap();
    assert_eq!(Histogram::load(&dir.path().join("h.json")).unwrap(), s);
    assert_eq!(
        crisp_core::weights::ImportanceWeights::load(&dir.path().join("w.json")).unwrap(),
        w
    );
    assert!(Histogram::load(&dir.path().join("w.json")).is_err());
}

fn count_map() -> impl Strategy<Value = BTreeMap<u64, u64>> {
    prop::collection::btree_map(0u64..200, 1u64..1000, 1..50)
}

proptest! {
    #[test]
    fn histograms_are_normalized(counts in count_map()) {
        let h = Histogram::from_counts(1, counts.clone()).unwrap();
        prop_assert!((h.probs().values().sum::<f64>() - 1.0).abs() <= 1e-9);
        let total: u64 = counts.values().sum();
        for (c, n) in &counts {
            prop_assert_eq!(h.prob(*c), *n as f64 / total as f64);
        }
    }

    #[test]
    fn scaling_counts_keeps_probs(counts in count_map(), k in 1u64..50) {
        let h = Histogram::from_counts(1, counts.clone()).unwrap();
        let scaled = Histogram::from_counts(1, counts.iter().map(|(&c, &n)| (c, n * k)).collect()).unwrap();
        for (c, p) in h.probs() {
            prop_assert!((scaled.prob(*c) - p).abs() <= 1e-15);
        }
    }

    #[test]
    fn reweighting_identity(s in count_map(), g in count_map()) {
        let (s, g) = (Histogram::from_counts(1, s).unwrap(), Histogram::from_counts(1, g).unwrap());
        let w = importance_weights(&s, &g, WeightOptions::default()).unwrap();
        let mut joint = 0.0;
        for (c, &pg) in g.probs() {
            let back = pg * w.weight(*c).unwrap();
            prop_assert!((back - s.prob(*c)).abs() <= 1e-12);
            joint += s.prob(*c);
        }
        prop_assert!((joint + w.dropped_specialist_mass() - 1.0).abs() <= 1e-9);
        prop_assert!(w.weights().keys().all(|c| g.prob(*c) > 0.0));
    }

    #[test]
    fn mixing_is_linear(a in count_map(), b in count_map(), t in 0.0f64..=1.0) {
        let (a, b) = (Histogram::from_counts(1, a).unwrap(), Histogram::from_counts(1, b).unwrap());
        let m = mix_histograms(&[a.clone(), b.clone()], &[t, 1.0 - t]).unwrap();
        for c in a.support().chain(b.support()) {
            prop_assert!((m.prob(c) - (t * a.prob(c) + (1.0 - t) * b.prob(c))).abs() <= 1e-15);
        }
        prop_assert!((m.probs().values().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}
