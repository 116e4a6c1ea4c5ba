use tripletmine::eval::{generate_synthetic, PairProtocol, SyntheticSpec, VerificationSet};
use tripletmine::mining::{MiningConfig, Strategy};
use tripletmine::model::ParamSet;
use tripletmine::trainer::{finetune, pretrain, FinetuneConfig, MiningMethod, ModelConfig, PretrainConfig};
use tripletmine::{EmbedderParams, LabeledDataset, PkConfig};

fn world(seed: u64) -> (LabeledDataset, VerificationSet) {
    sized_world(seed, 100)
}

fn sized_world(seed: u64, samples_per_identity: usize) -> (LabeledDataset, VerificationSet) {
    let all = generate_synthetic(&SyntheticSpec {
        samples_per_identity,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let (train, held) = all.split_identities(20).unwrap();
    let protocol = PairProtocol::generate(&held, 300, 10, seed).unwrap();
    (train, VerificationSet { dataset: held, protocol })
}

fn ft_config(method: MiningMethod, strategy: Strategy, iterations: usize) -> FinetuneConfig {
    FinetuneConfig {
        iterations,
        mining: MiningConfig::new(strategy, 0.2, 17).unwrap(),
        method,
        eval_interval: iterations / 4,
        seed: 5,
        ..FinetuneConfig::default()
    }
}

fn flat(p: &EmbedderParams) -> Vec<f64> {
    p.slices().concat()
}

#[test]
fn pretraining_fits_twenty_identities() {
    let (train, _) = world(0);
    let out = pretrain(&train, &PretrainConfig::default(), None).unwrap();
    assert_eq!(train.num_identities(), 20);
    assert!(out.train_accuracy >= 0.9, "train accuracy {}", out.train_accuracy);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let (train, eval) = sized_world(1, 30);
    let pre_cfg = PretrainConfig {
        iterations: 300,
        eval_interval: 100,
        ..PretrainConfig::default()
    };
    let a = pretrain(&train, &pre_cfg, Some(&eval)).unwrap();
    let b = pretrain(&train, &pre_cfg, Some(&eval)).unwrap();
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    for method in [
        MiningMethod::Online,
        MiningMethod::SemiOnline { window: 10 },
        MiningMethod::Offline { refresh: 50 },
    ] {
        let cfg = ft_config(method, Strategy::Random, 200);
        let x = finetune(&train, &cfg, a.params.clone(), Some(&eval)).unwrap();
        let y = finetune(&train, &cfg, a.params.clone(), Some(&eval)).unwrap();
        assert_eq!(x.report.to_csv(), y.report.to_csv(), "{method:?}");
    }
}

#[test]
fn single_batch_pool_tracks_online_mining() {
    // With a window of one the pool holds exactly the current batch, and the
    // selected samples are re-embedded with the same parameters, so the run
    // must follow online mining up to summation order.
    let (train, _) = world(2);
    let init = ModelConfig::default().init(train.dim(), 3).unwrap();
    for strategy in Strategy::ALL {
        let online = finetune(&train, &ft_config(MiningMethod::Online, strategy, 40), init.clone(), None).unwrap();
        let pooled = finetune(
            &train,
            &ft_config(MiningMethod::SemiOnline { window: 1 }, strategy, 40),
            init.clone(),
            None,
        )
        .unwrap();
        for (a, b) in online.report.records.iter().zip(&pooled.report.records) {
            assert!((a.loss - b.loss).abs() < 1e-9, "{strategy}: {} vs {}", a.loss, b.loss);
            assert_eq!(a.mean_triplets, b.mean_triplets);
        }
        let drift = flat(&online.params)
            .iter()
            .zip(flat(&pooled.params))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-9, "{strategy}: parameter drift {drift}");
    }
}

#[test]
fn training_tightens_the_margin_condition() {
    let (train, _) = world(3);
    let init = ModelConfig::default().init(train.dim(), 4).unwrap();
    let out = finetune(&train, &ft_config(MiningMethod::Online, Strategy::MinMax, 3000), init, None).unwrap();
    let first = out.report.records.first().unwrap().active_fraction.unwrap();
    let last = out.report.last().unwrap().active_fraction.unwrap();
    assert!(last < first, "active fraction {first} -> {last}");
    assert!(out.report.last().unwrap().loss < out.report.records[0].loss);
}

#[test]
fn wider_pools_see_more_candidates() {
    let (train, _) = world(4);
    let init = ModelConfig::default().init(train.dim(), 6).unwrap();
    let run = |window| {
        finetune(
            &train,
            &ft_config(MiningMethod::SemiOnline { window }, Strategy::All, 20),
            init.clone(),
            None,
        )
        .unwrap()
        .report
    };
    let narrow = run(1);
    let wide = run(4);
    let mean = |r: &tripletmine::trainer::TrainReport| {
        r.records.iter().map(|x| x.mean_triplets).sum::<f64>() / r.records.len() as f64
    };
    assert!(mean(&wide) > 2.0 * mean(&narrow), "{} vs {}", mean(&wide), mean(&narrow));
}

#[test]
fn offline_batches_hold_at_most_batch_size_triplets() {
    let (train, _) = world(5);
    let small = generate_synthetic(&SyntheticSpec {
        identities: 8,
        samples_per_identity: 20,
        seed: 5,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let init = ModelConfig::default().init(train.dim(), 7).unwrap();
    let cfg = FinetuneConfig {
        pk: PkConfig::new(4, 3).unwrap(),
        ..ft_config(MiningMethod::Offline { refresh: 10 }, Strategy::All, 40)
    };
    assert!(tripletmine::trainer::dataset_triplet_count(&train) > tripletmine::trainer::OFFLINE_ALL_LIMIT);
    assert!(finetune(&train, &cfg, init.clone(), None).is_err());
    let out = finetune(&small, &cfg, init, None).unwrap();
    assert!(out.report.records.iter().all(|r| r.mean_triplets <= 12.0));
    assert!(out.report.records.iter().any(|r| r.mean_triplets > 0.0));
}
