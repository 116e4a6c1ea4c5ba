mod common;

use common::{oracle, random_batch, triples};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use std::collections::BTreeSet;
use tripletmine::mining::{
    batch_all, batch_hardest, batch_min_max, batch_min_min, enumerate_valid_triplets, mine, valid_triplet_count,
    MiningConfig, Strategy,
};
use tripletmine::{pairwise_squared_distances, DistanceMatrix, FeatureMatrix};

fn cfg(strategy: Strategy, margin: f64, seed: u64) -> MiningConfig {
    MiningConfig::new(strategy, margin, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_strategy_matches_the_reference(seed in any::<u64>(), round in 0u64..50, margin in 0.01f64..1.5) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng);
        for strategy in Strategy::ALL {
            let got = mine(&b.distances, &b.labels, &cfg(strategy, margin, seed), round).unwrap();
            prop_assert_eq!(triples(&got), oracle(strategy, &b.raw, &b.labels, margin, seed, round), "{}", strategy);
        }
    }

    #[test]
    fn selections_are_valid_active_subsets_of_batch_all(seed in any::<u64>(), margin in 0.01f64..1.5) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng);
        let all: BTreeSet<_> = triples(&batch_all(&b.distances, &b.labels, &cfg(Strategy::All, margin, 0)).unwrap())
            .into_iter()
            .collect();
        let (p, k) = (b.persons, b.per_person);
        for strategy in Strategy::ALL {
            let got = triples(&mine(&b.distances, &b.labels, &cfg(strategy, margin, seed), 3).unwrap());
            for &(i, j, n) in &got {
                prop_assert!(b.labels[i] == b.labels[j] && i != j && b.labels[i] != b.labels[n]);
                prop_assert!(b.raw[[i, j]] + margin > b.raw[[i, n]]);
                prop_assert!(all.contains(&(i, j, n)));
            }
            let bound = match strategy {
                Strategy::All => valid_triplet_count(p, k),
                Strategy::Random => p * k * (k - 1),
                Strategy::MinMin | Strategy::MinMax => p * k,
                Strategy::Hardest => p,
            };
            prop_assert!(got.len() <= bound, "{} emitted {} > {}", strategy, got.len(), bound);
        }
    }

    /// Scaling features by `c` scales M by `c²`; with the margin scaled the
    /// same way the active set is unchanged and so is every selection.
    #[test]
    fn selections_invariant_under_joint_scaling(seed in any::<u64>(), c in 0.25f64..4.0) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng);
        let scaled = DistanceMatrix::from_array(b.raw.mapv(|v| v * c * c)).unwrap();
        for strategy in [Strategy::MinMin, Strategy::MinMax, Strategy::Hardest] {
            let base = mine(&b.distances, &b.labels, &cfg(strategy, 0.2, 1), 0).unwrap();
            let other = mine(&scaled, &b.labels, &cfg(strategy, 0.2 * c * c, 1), 0).unwrap();
            // Rounding can move a hinge that sits exactly on the margin.
            let exact = triples(&base) == triples(&other);
            let oracle_agrees = triples(&other) == oracle(strategy, &scaled.view().to_owned(), &b.labels, 0.2 * c * c, 1, 0);
            prop_assert!(exact || oracle_agrees);
        }
    }
}

#[test]
fn enumeration_count_formula() {
    for p in 2..6 {
        for k in 1..5 {
            let labels: Vec<usize> = (0..p * k).map(|r| r % p).collect();
            let all = enumerate_valid_triplets(&labels);
            assert_eq!(all.len(), valid_triplet_count(p, k));
            assert_eq!(all.len(), p * k * (k - 1) * (p * k - k));
            let unique: BTreeSet<_> = triples(&all).into_iter().collect();
            assert_eq!(unique.len(), all.len());
        }
    }
}

#[test]
fn huge_margin_activates_every_valid_triplet() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let b = random_batch(&mut rng);
    let all = batch_all(&b.distances, &b.labels, &cfg(Strategy::All, 10.0, 0)).unwrap();
    assert_eq!(all, enumerate_valid_triplets(&b.labels));
}

#[test]
fn far_apart_clusters_mine_nothing() {
    let x: Array2<f64> = array![[0.0, 0.0], [0.0, 1.0], [3.0, 0.0], [3.0, 1.0]];
    let m = pairwise_squared_distances(&FeatureMatrix::new(x).unwrap());
    for strategy in Strategy::ALL {
        assert!(mine(&m, &[0, 0, 1, 1], &cfg(strategy, 0.2, 0), 0).unwrap().is_empty());
    }
}

#[test]
fn min_max_never_picks_a_nearer_negative_than_min_min() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let b = random_batch(&mut rng);
        let c = cfg(Strategy::MinMax, 0.5, 0);
        let mm = batch_min_min(&b.distances, &b.labels, &c).unwrap();
        let mx = batch_min_max(&b.distances, &b.labels, &c).unwrap();
        assert_eq!(mm.len(), mx.len());
        for (a, z) in mm.iter().zip(&mx) {
            assert_eq!(a.anchor, z.anchor);
            assert!(b.raw[[z.anchor, z.negative]] >= b.raw[[a.anchor, a.negative]]);
        }
    }
}

#[test]
fn hardest_picks_the_global_minimum_per_person() {
    // Person 0 = rows 0..3; its anchors' nearest negatives sit at squared
    // distances 0.5, 0.2 and 0.9 from anchors 0, 1, 2.
    let mut m = Array2::from_elem((6, 6), 5.0);
    for r in 0..6 {
        m[[r, r]] = 0.0;
    }
    for (a, b) in [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)] {
        m[[a, b]] = 1.0;
        m[[b, a]] = 1.0;
    }
    m[[0, 3]] = 0.5;
    m[[3, 0]] = 0.5;
    m[[1, 4]] = 0.2;
    m[[4, 1]] = 0.2;
    m[[2, 5]] = 0.9;
    m[[5, 2]] = 0.9;
    let m = DistanceMatrix::from_array(m).unwrap();
    let labels = [0, 0, 0, 1, 1, 1];
    let got = batch_hardest(&m, &labels, &cfg(Strategy::Hardest, 0.2, 0)).unwrap();
    assert_eq!(triples(&got)[0], (1, 0, 4));
    assert!(got.len() <= 2);
}
