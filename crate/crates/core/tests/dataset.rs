use std::collections::HashSet;
use std::io::Write;

use hdrm::dataset::{
    binarize, load_interactions, split, synthetic, Format, InteractionDataset, Pair, SplitSpec,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn negative_sampling_is_uniform_over_complement() {
    let ds = InteractionDataset::from_splits(
        2,
        10,
        vec![(0, 1), (0, 4), (0, 7), (1, 0)],
        vec![],
        vec![],
        vec![],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = [0usize; 10];
    for _ in 0..100_000 {
        let j = ds.sample_negative(0, &mut rng).unwrap();
        assert!(!ds.is_train_positive(0, j));
        counts[j] += 1;
    }
    let free: Vec<usize> = [0, 2, 3, 5, 6, 8, 9].iter().map(|&j| counts[j]).collect();
    assert_eq!(free.iter().sum::<usize>(), 100_000);
    let p = chi_square_p(&free);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn dense_user_falls_back_to_enumeration_and_stays_uniform() {
    // 18 of 20 items taken: rejection path is skipped.
    let train: Vec<Pair> = (0..20).filter(|i| *i != 3 && *i != 11).map(|i| (0, i)).collect();
    let ds = InteractionDataset::from_splits(1, 20, train, vec![], vec![], vec![]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = [0usize; 2];
    for _ in 0..100_000 {
        match ds.sample_negative(0, &mut rng).unwrap() {
            3 => counts[0] += 1,
            11 => counts[1] += 1,
            other => panic!("returned train positive {other}"),
        }
    }
    assert!(chi_square_p(&counts) > 0.01);
}

#[test]
fn file_to_dataset_pipeline() {
    let mut f = tempfile::Builder::new().suffix(".tsv").tempfile().unwrap();
    writeln!(f, "user\titem\trating").unwrap();
    for u in 0..5 {
        for i in 0..12 {
            let rating = if (u + i) % 3 == 0 { 2 } else { 5 };
            writeln!(f, "user{u}\titem{i}\t{rating}").unwrap();
        }
    }
    writeln!(f, "loner\titem0\t5").unwrap();
    f.flush().unwrap();
    let log = load_interactions(f.path(), Format::Tsv).unwrap();
    let bin = binarize(&log.records, 4.0);
    let out = split(&bin, log.users.len(), log.items.len(), &SplitSpec::default()).unwrap();
    assert_eq!(out.dropped_users, 1);
    assert_eq!(out.dataset.num_users(), 5);
    assert_eq!(out.dataset.num_items(), 12);
    assert_eq!(out.dataset.natural_noise().len(), 20);
    for u in 0..5 {
        assert_eq!(out.dataset.user_items(u).len(), 6);
        assert_eq!(out.dataset.user_val(u).len(), 1);
        assert_eq!(out.dataset.user_test(u).len(), 1);
    }
}

#[test]
fn planted_dataset_reports_counts() {
    let cfg = synthetic::PlantedConfig::default();
    let log = synthetic::planted_blocks(&cfg);
    let bin = binarize(&log.records, 4.0);
    let out = split(&bin, log.users.len(), log.items.len(), &SplitSpec::default()).unwrap();
    let stats = out.dataset.stats();
    assert_eq!(stats.users, 200);
    assert_eq!(stats.items, 100);
    assert!(stats.interactions > 2500);
}

proptest! {
    #[test]
    fn split_invariants(
        counts in prop::collection::vec(0usize..25, 1..12),
        seed in 0u64..1000,
    ) {
        let mut bin = hdrm::dataset::Binarized::default();
        for (u, &c) in counts.iter().enumerate() {
            for i in 0..c {
                bin.positives.push((u, (i * 7 + u) % 30));
            }
        }
        bin.positives.sort_unstable();
        bin.positives.dedup();
        let spec = SplitSpec { seed, ..Default::default() };
        match split(&bin, counts.len(), 30, &spec) {
            Ok(out) => {
                let ds = &out.dataset;
                let tr: HashSet<Pair> = ds.train().iter().copied().collect();
                let va: HashSet<Pair> = ds.val().iter().copied().collect();
                let te: HashSet<Pair> = ds.test().iter().copied().collect();
                prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
                prop_assert_eq!(tr.len() + va.len() + te.len(),
                    out.kept_users.iter().map(|&u| bin.positives.iter().filter(|p| p.0 == u).count()).sum::<usize>());
                let su: usize = ds.user_adjacency().iter().map(Vec::len).sum();
                let si: usize = ds.item_adjacency().iter().map(Vec::len).sum();
                prop_assert_eq!(su, ds.train().len());
                prop_assert_eq!(si, ds.train().len());
                for u in 0..ds.num_users() {
                    prop_assert!(!ds.user_test(u).is_empty());
                    prop_assert!(!ds.user_items(u).is_empty());
                }
                prop_assert_eq!(split(&bin, counts.len(), 30, &spec).unwrap(), out);
            }
            Err(hdrm::HdrmError::EmptyDataset(_)) => {
                prop_assert!(counts.iter().all(|&c| c < 3));
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}
