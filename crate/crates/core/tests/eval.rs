mod common;

use ndarray::ArrayView2;
use rand::SeedableRng;
use tripletmine::eval::{generate_synthetic, IdentityEmbedder, PairProtocol, SyntheticSpec, VerificationSet};
use tripletmine::{Embed, FeatureMatrix, Result};

/// Ignores its input and returns fresh random unit vectors.
struct RandomEmbedder(u64);

impl Embed for RandomEmbedder {
    fn embed(&self, inputs: ArrayView2<'_, f64>) -> Result<FeatureMatrix> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.0);
        FeatureMatrix::new(common::unit_rows(&mut rng, inputs.nrows(), 16))
    }
}

fn world(sigma: f64, seed: u64) -> VerificationSet {
    let dataset = generate_synthetic(&SyntheticSpec {
        identities: 20,
        samples_per_identity: 30,
        sigma,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let protocol = PairProtocol::generate(&dataset, 500, 10, seed).unwrap();
    VerificationSet { dataset, protocol }
}

#[test]
fn identity_accuracy_never_drops_as_noise_shrinks() {
    let grid = [1.2, 0.8, 0.5, 0.35, 0.2, 0.1, 0.05, 0.0];
    for seed in 0..5 {
        let accs: Vec<f64> = grid
            .iter()
            .map(|&s| world(s, seed).accuracy(&IdentityEmbedder).unwrap())
            .collect();
        for w in accs.windows(2) {
            assert!(w[1] >= w[0], "seed {seed}: {accs:?}");
        }
        assert_eq!(*accs.last().unwrap(), 1.0);
    }
}

#[test]
fn random_embedder_is_at_chance() {
    for seed in 0..5 {
        let acc = world(0.35, seed).accuracy(&RandomEmbedder(seed)).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "seed {seed}: {acc}");
    }
}

#[test]
fn zero_noise_identities_separate_perfectly() {
    let set = world(0.0, 9);
    assert_eq!(set.accuracy(&IdentityEmbedder).unwrap(), 1.0);
}

#[test]
fn protocol_and_dataset_survive_csv_files() {
    let set = world(0.35, 2);
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("heldout.csv");
    let pairs_path = dir.path().join("pairs.csv");
    set.dataset.write_csv(std::fs::File::create(&data_path).unwrap()).unwrap();
    set.protocol.write_csv(std::fs::File::create(&pairs_path).unwrap()).unwrap();
    let back = VerificationSet {
        dataset: tripletmine::LabeledDataset::load_csv(&data_path).unwrap(),
        protocol: PairProtocol::load_csv(&pairs_path, 10).unwrap(),
    };
    assert_eq!(back.protocol, set.protocol);
    assert_eq!(
        back.accuracy(&IdentityEmbedder).unwrap(),
        set.accuracy(&IdentityEmbedder).unwrap()
    );
}

#[test]
fn protocol_generation_is_seeded() {
    let a = world(0.35, 4).protocol;
    let b = world(0.35, 4).protocol;
    let c = world(0.35, 5).protocol;
    assert_eq!(a, b);
    assert_ne!(a, c);
}
