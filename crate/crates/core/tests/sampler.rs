mod common;

use std::collections::BTreeMap;

use common::XorShift;
use crisp_core::cluster::AssignmentTable;
use crisp_core::corpus::{read_windows, DocumentWindow, WindowReader};
use crisp_core::sampler::{
    export_sharded, export_stream, read_manifest, repetition_stats, write_manifest, ClusterIndex,
    Phase, Sampler, SamplerState, SamplingTarget, Schedule, WindowStore,
};
use crisp_core::weights::Histogram;
use crisp_core::Error;
use proptest::prelude::*;

fn index(entries: Vec<(u64, u64)>) -> ClusterIndex {
    ClusterIndex::build(&AssignmentTable::from_entries(1, entries)).unwrap()
}

fn probs(pairs: &[(u64, f64)]) -> Histogram {
    Histogram::from_probs(1, pairs.iter().copied().collect()).unwrap()
}

fn window(id: u64) -> DocumentWindow {
    DocumentWindow {
        window_id: id,
        doc_id: id,
        ordinal: 0,
        tokens: vec![id as u32, 1, 2],
    }
}

#[test]
fn index_matches_recount() {
    let mut rng = XorShift(100_000);
    let entries: Vec<(u64, u64)> = (0..100_000).map(|i| (i * 3 + 1, rng.below(500))).collect();
    let idx = index(entries.clone());
    let mut oracle: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for &(id, c) in &entries {
        oracle.entry(c).or_default().push(id);
    }
    let got: BTreeMap<u64, Vec<u64>> = idx.clusters().map(|(c, m)| (c, m.to_vec())).collect();
    assert_eq!(got, oracle);
    assert_eq!(idx.len(), 100_000);
    assert!(got.values().all(|m| m.windows(2).all(|w| w[0] < w[1])));

    let small = index(vec![(0, 1), (1, 1), (2, 9)]);
    assert_eq!(small.sizes(), BTreeMap::from([(1, 2), (9, 1)]));
    assert_eq!(index(vec![(0, 4), (1, 4)]).clusters().count(), 1);
}

#[test]
fn binomial_frequency_bound() {
    let idx = index((0..20).map(|i| (i, i % 2)).collect());
    let mut s = Sampler::new(&idx, &probs(&[(0, 0.75), (1, 0.25)]), 2024).unwrap();
    let draws = s.sample_batch(100_000);
    let a = draws.iter().filter(|&&id| id % 2 == 0).count() as f64 / 1e5;
    assert!((0.74..=0.76).contains(&a), "{a}");
    let mut again = Sampler::new(&idx, &probs(&[(0, 0.75), (1, 0.25)]), 2024).unwrap();
    assert_eq!(again.sample_batch(100_000), draws);
}

#[test]
fn empty_target_support_is_fatal() {
    let idx = index(vec![(0, 1)]);
    assert!(matches!(
        SamplingTarget::new(&probs(&[(5, 1.0)]), &idx),
        Err(Error::Empty(_))
    ));
    let other = ClusterIndex::build(&AssignmentTable::from_entries(2, vec![(0, 1)])).unwrap();
    assert!(matches!(
        SamplingTarget::new(&probs(&[(1, 1.0)]), &other),
        Err(Error::LevelMismatch { .. })
    ));
}

#[test]
fn schedule_switch() {
    let idx = index(vec![(10, 0), (20, 1)]);
    let base = SamplingTarget::new(&probs(&[(0, 1.0)]), &idx).unwrap();
    let crisp = SamplingTarget::new(&probs(&[(1, 1.0)]), &idx).unwrap();
    let s = Schedule::from_generic_steps(1024, 928, base.clone(), crisp.clone()).unwrap();
    assert_eq!(s.phase(927).unwrap(), Phase::Generic);
    assert_eq!(s.phase(928).unwrap(), Phase::Crisp);
    assert!(s.phase(1024).is_err());
    let by_fraction = Schedule::from_fraction(1024, 96.0 / 1024.0, base.clone(), crisp.clone()).unwrap();
    assert_eq!(by_fraction.generic_steps(), 928);
    let mut st = SamplerState::new(3);
    let full = Schedule::from_fraction(8, 1.0, base.clone(), crisp.clone()).unwrap();
    let none = Schedule::from_fraction(8, 0.0, base, crisp).unwrap();
    for step in 0..8 {
        assert_eq!(full.sample(&mut st, &idx, step, 2).unwrap(), [20, 20]);
        assert_eq!(none.sample(&mut st, &idx, step, 2).unwrap(), [10, 10]);
    }
}

#[test]
fn repetition_mean_matches_occupancy_formula() {
    let (c, n, t) = (10u64, 50u64, 2000usize);
    let idx = index((0..c * n).map(|i| (i, i % c)).collect());
    let uniform: Vec<(u64, f64)> = (0..c).map(|k| (k, 1.0 / c as f64)).collect();
    let target = SamplingTarget::new(&probs(&uniform), &idx).unwrap();
    let m = (c * n) as f64;
    let expected = t as f64 / (m * (1.0 - (1.0 - 1.0 / m).powi(t as i32)));
    let mut means = Vec::new();
    for seed in 0..20 {
        let mut st = SamplerState::new(seed).with_occurrence_log();
        st.sample_batch(&target, &idx, t);
        means.push(repetition_stats(st.occurrence_log().unwrap(), &[0.5]).unwrap().mean);
    }
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    assert!((avg - expected).abs() / expected < 0.01, "{avg} vs {expected}");
}

#[test]
fn skewed_cluster_dominates_top_quantile() {
    let mut entries: Vec<(u64, u64)> = (0..10).map(|i| (i, 0)).collect();
    entries.extend((10..1010).map(|i| (i, 1 + i % 9)));
    let idx = index(entries);
    let mut p = vec![(0, 0.9)];
    p.extend((1..10).map(|k| (k, 0.1 / 9.0)));
    let target = SamplingTarget::new(&probs(&p), &idx).unwrap();
    let mut st = SamplerState::new(5).with_occurrence_log();
    st.sample_batch(&target, &idx, 20_000);
    let log = st.occurrence_log().unwrap();
    let report = repetition_stats(log, &[0.99, 1.0]).unwrap();
    let mut by_count: Vec<(u64, u64)> = log.iter().map(|(&id, &c)| (c, id)).collect();
    by_count.sort_unstable_by(|a, b| b.cmp(a));
    assert!(by_count[..10].iter().all(|&(_, id)| id < 10));
    assert_eq!(report.max, by_count[0].0);
    assert!(report.quantiles[0].1 >= 1000);
}

#[test]
fn repetition_small_cases() {
    let once: BTreeMap<u64, u64> = (0..7).map(|i| (i, 1)).collect();
    let r = repetition_stats(&once, &[0.5]).unwrap();
    assert_eq!((r.mean, r.max), (1.0, 1));
    assert!(repetition_stats(&BTreeMap::new(), &[0.5]).is_err());
}

#[test]
fn export_cases() {
    let idx = index(vec![(7, 0)]);
    let target = SamplingTarget::new(&probs(&[(0, 1.0)]), &idx).unwrap();
    let store = WindowStore::from_windows([window(7)]);

    let mut out = Vec::new();
    let m = export_stream(&mut SamplerState::new(0), &target, &idx, 0, &store, &mut out).unwrap();
    assert!(m.is_empty());
    assert_eq!(WindowReader::new(&out[..]).unwrap().count(), 0);

    let mut out = Vec::new();
    let m = export_stream(&mut SamplerState::new(0), &target, &idx, 10, &store, &mut out).unwrap();
    let records: Vec<_> = WindowReader::new(&out[..]).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(records, vec![window(7); 10]);
    assert_eq!(m, BTreeMap::from([(7, 10)]));

    let missing = WindowStore::from_windows([window(8)]);
    let err = export_stream(&mut SamplerState::new(0), &target, &idx, 1, &missing, Vec::new()).unwrap_err();
    assert!(matches!(err, Error::UnresolvedWindow(7)));
    assert!(err.to_string().contains('7'));
}

#[test]
fn manifest_conserves_draws() {
    let idx = index((0..300).map(|i| (i, i % 17)).collect());
    let h: Vec<(u64, f64)> = (0..17).map(|k| (k, 1.0 / 17.0)).collect();
    let target = SamplingTarget::new(&probs(&h), &idx).unwrap();
    let store = WindowStore::from_windows((0..300).map(window));
    let mut st = SamplerState::new(1).with_occurrence_log();
    let m = export_stream(&mut st, &target, &idx, 10_000, &store, std::io::sink()).unwrap();
    assert_eq!(m.values().sum::<u64>(), 10_000);
    assert_eq!(st.draws_emitted(), 10_000);
    assert_eq!(st.occurrence_log().unwrap(), &m);

    let dir = tempfile::tempdir().unwrap();
    let merged = export_sharded(9, &target, &idx, 10_001, 4, &store, dir.path()).unwrap();
    assert_eq!(merged.values().sum::<u64>(), 10_001);
    let mut recount: BTreeMap<u64, u64> = BTreeMap::new();
    for j in 0..4 {
        for w in read_windows(&dir.path().join(format!("shard-{j:05}.wnd"))).unwrap() {
            *recount.entry(w.window_id).or_insert(0) += 1;
        }
    }
    assert_eq!(recount, merged);
    let path = dir.path().join("manifest.tsv");
    write_manifest(&path, &merged).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), merged);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batches_do_not_change_the_stream(
        seed in any::<u64>(),
        cuts in prop::collection::vec(0usize..50, 1..6),
    ) {
        let idx = index((0..60).map(|i| (i, i % 7)).collect());
        let h: Vec<(u64, f64)> = (0..7).map(|k| (k, (k + 1) as f64 / 28.0)).collect();
        let target = SamplingTarget::new(&probs(&h), &idx).unwrap();
        let total: usize = cuts.iter().sum();
        let mut one = SamplerState::new(seed);
        let whole = one.sample_batch(&target, &idx, total);
        let mut many = SamplerState::new(seed);
        let pieces: Vec<u64> = cuts.iter().flat_map(|&b| many.sample_batch(&target, &idx, b)).collect();
        prop_assert_eq!(whole, pieces);
    }

    #[test]
    fn draws_stay_in_target_support(seed in any::<u64>()) {
        let idx = index((0..40).map(|i| (i, i % 5)).collect());
        let target = SamplingTarget::new(&probs(&[(1, 0.5), (3, 0.5)]), &idx).unwrap();
        let ids = SamplerState::new(seed).sample_batch(&target, &idx, 200);
        prop_assert!(ids.iter().all(|id| id % 5 == 1 || id % 5 == 3));
    }
}
