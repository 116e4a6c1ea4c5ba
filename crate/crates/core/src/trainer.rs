//! Softmax pretraining and triplet finetuning loops.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::VerificationSet;
use crate::features::{pairwise_squared_distances, FeatureMatrix};
use crate::mining::{batch_all, enumerate_valid_triplets, mine, MiningConfig, Strategy, Triplet};
use crate::model::{
    softmax_xent_forward_backward, triplet_loss, triplet_loss_backward, write_checkpoint, AdagradState,
    Checkpoint, Embed, EmbedderParams, ForwardCache, SoftmaxHead, TripletLossResult,
};
use crate::pool::{offline_mine, FeaturePool};
use crate::sampler::{LabeledDataset, PkBatch, PkConfig, PkSampler};
use crate::seed;

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_FINETUNE_ITERATIONS: usize = 3000;
pub const DEFAULT_PRETRAIN_ITERATIONS: usize = 2000;
pub const DEFAULT_PRETRAIN_LR: f64 = 0.01;
pub const DEFAULT_OFFLINE_REFRESH: usize = 50;
pub const DEFAULT_ZERO_ACTIVE_WARNING: usize = 100;
/// Largest dataset, counted in valid triplets, that offline Batch All may
/// mine. Every active triplet is materialized, so the whole-dataset
/// selection can otherwise run to billions of entries.
pub const OFFLINE_ALL_LIMIT: usize = 20_000_000;

/// Valid triplets over a whole dataset.
pub fn dataset_triplet_count(dataset: &LabeledDataset) -> usize {
    let n = dataset.len();
    (0..dataset.num_identities())
        .map(|id| {
            let k = dataset.samples_of(id).len();
            k * k.saturating_sub(1) * (n - k)
        })
        .sum()
}

/// Where the mining candidates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MiningMethod {
    /// Mine each freshly embedded batch.
    Online,
    /// Embed the whole training set every `refresh` iterations, mine once,
    /// and train on the selection in batch-sized chunks.
    Offline { refresh: usize },
    /// Mine over the last `window` embedded batches.
    SemiOnline { window: usize },
}

impl MiningMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MiningMethod::Online => "online",
            MiningMethod::Offline { .. } => "offline",
            MiningMethod::SemiOnline { .. } => "semi_online",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            embed_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn sizes(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.embed_dim))
            .collect()
    }

    pub fn init(&self, input_dim: usize, seed: u64) -> Result<EmbedderParams> {
        EmbedderParams::init(&self.sizes(input_dim), seed::derive(seed, "init"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub pk: PkConfig,
    pub lr: f64,
    pub eval_interval: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub checkpoint: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_PRETRAIN_ITERATIONS,
            pk: PkConfig {
                persons: 8,
                per_person: 3,
            },
            lr: DEFAULT_PRETRAIN_LR,
            eval_interval: 500,
            seed: 0,
            model: ModelConfig::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub iterations: usize,
    pub pk: PkConfig,
    pub mining: MiningConfig,
    pub method: MiningMethod,
    pub lr: f64,
    pub eval_interval: usize,
    pub seed: u64,
    /// Warn after this many consecutive steps without an active triplet.
    pub zero_active_warning: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_FINETUNE_ITERATIONS,
            pk: PkConfig {
                persons: 8,
                per_person: 3,
            },
            mining: MiningConfig {
                strategy: Strategy::MinMax,
                margin: DEFAULT_MARGIN,
                seed: 0,
            },
            method: MiningMethod::Online,
            lr: DEFAULT_LR,
            eval_interval: 500,
            seed: 0,
            zero_active_warning: DEFAULT_ZERO_ACTIVE_WARNING,
        }
    }
}

fn check_common(iterations: usize, lr: f64, eval_interval: usize, pk: &PkConfig) -> Result<()> {
    if iterations == 0 {
        return Err(Error::config("iterations must be positive"));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    if eval_interval == 0 {
        return Err(Error::config("eval_interval must be positive"));
    }
    pk.validate()
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.iterations, self.lr, self.eval_interval, &self.pk)
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.iterations, self.lr, self.eval_interval, &self.pk)?;
        self.mining.validate()?;
        match self.method {
            MiningMethod::Offline { refresh: 0 } => Err(Error::config("offline refresh must be positive")),
            MiningMethod::SemiOnline { window: 0 } => Err(Error::config("pool window must be positive")),
            _ => Ok(()),
        }
    }
}

/// Metrics for one evaluation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Mean training loss over the interval's steps.
    pub loss: f64,
    /// Share of a fixed probe batch's valid triplets that are active.
    pub active_fraction: Option<f64>,
    pub verif_acc: Option<f64>,
    /// Mean number of triplets trained on per step.
    pub mean_triplets: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "iteration,loss,active_fraction,verif_acc";

    /// `iteration,loss,active_fraction,verif_acc`; missing metrics are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.iteration,
                r.loss,
                opt(r.active_fraction),
                opt(r.verif_acc)
            )
            .expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.last().and_then(|r| r.verif_acc)
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: EmbedderParams,
    pub head: SoftmaxHead,
    pub report: TrainReport,
    /// Classification accuracy of the head over the whole training set.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Finetuned {
    pub params: EmbedderParams,
    pub report: TrainReport,
}

/// Running means between evaluation points.
#[derive(Default)]
struct Interval {
    loss: f64,
    triplets: usize,
    steps: usize,
}

impl Interval {
    fn add(&mut self, loss: f64, triplets: usize) {
        self.loss += loss;
        self.triplets += triplets;
        self.steps += 1;
    }

    fn take(&mut self) -> (f64, f64) {
        let n = self.steps.max(1) as f64;
        let out = (self.loss / n, self.triplets as f64 / n);
        *self = Self::default();
        out
    }
}

fn is_eval_point(t: usize, interval: usize, iterations: usize) -> bool {
    (t + 1).is_multiple_of(interval) || t + 1 == iterations
}

/// Softmax cross-entropy pretraining of a fresh embedder and head.
pub fn pretrain(
    dataset: &LabeledDataset,
    cfg: &PretrainConfig,
    eval: Option<&VerificationSet>,
) -> Result<Pretrained> {
    cfg.validate()?;
    if dataset.num_identities() < 2 {
        return Err(Error::config(format!(
            "softmax pretraining needs at least 2 identities, dataset has {}",
            dataset.num_identities()
        )));
    }
    let mut params = cfg.model.init(dataset.dim(), cfg.seed)?;
    let mut head = SoftmaxHead::init(
        cfg.model.embed_dim,
        dataset.num_identities(),
        seed::derive(cfg.seed, "head"),
    )?;
    let mut sampler = PkSampler::new(cfg.pk, seed::derive(cfg.seed, "sampler"))?;
    let mut opt_params = AdagradState::new(cfg.lr)?;
    let mut opt_head = AdagradState::new(cfg.lr)?;
    let mut report = TrainReport::default();
    let mut interval = Interval::default();

    for t in 0..cfg.iterations {
        let batch = sampler.next_batch(dataset)?;
        let inputs = dataset.gather(&batch.sample_ids);
        let (features, cache) = params.forward(inputs.view())?;
        let out = softmax_xent_forward_backward(&head, &features, &batch.labels)?;
        let grads = params.backward(&cache, out.grad_features.view())?;
        opt_params.step(&mut params, &grads)?;
        opt_head.step(&mut head, &out.grad_head)?;
        interval.add(out.loss, 0);

        if is_eval_point(t, cfg.eval_interval, cfg.iterations) {
            let (loss, _) = interval.take();
            let verif_acc = eval.map(|e| e.accuracy(&params)).transpose()?;
            log::info!("pretrain iter {} loss {loss:.4} verif {verif_acc:?}", t + 1);
            report.records.push(TrainRecord {
                iteration: t + 1,
                loss,
                active_fraction: None,
                verif_acc,
                mean_triplets: 0.0,
            });
        }
        if !params.is_finite() {
            return Err(Error::config(format!("parameters diverged at iteration {}", t + 1)));
        }
    }

    let predictions = head.predict(&params.embed(dataset.inputs())?)?;
    let correct = predictions
        .iter()
        .zip(dataset.labels())
        .filter(|(p, l)| p == l)
        .count();
    let train_accuracy = correct as f64 / dataset.len() as f64;
    if let Some(path) = &cfg.checkpoint {
        write_checkpoint(
            path,
            &Checkpoint {
                embedder: params.clone(),
                head: Some(head.clone()),
            },
        )?;
    }
    Ok(Pretrained {
        params,
        head,
        report,
        train_accuracy,
    })
}

/// Share of `batch`'s valid triplets that are active under `embedder`.
pub fn active_fraction<E: Embed + ?Sized>(
    embedder: &E,
    dataset: &LabeledDataset,
    batch: &PkBatch,
    margin: f64,
) -> Result<f64> {
    let features = embedder.embed(dataset.gather(&batch.sample_ids).view())?;
    let m = pairwise_squared_distances(&features);
    let cfg = MiningConfig::new(Strategy::All, margin, 0)?;
    let active = batch_all(&m, &batch.labels, &cfg)?.len();
    let valid = enumerate_valid_triplets(&batch.labels).len();
    Ok(if valid == 0 { 0.0 } else { active as f64 / valid as f64 })
}

struct TripletStepper {
    params: EmbedderParams,
    opt: AdagradState,
    margin: f64,
}

impl TripletStepper {
    fn step(&mut self, features: &FeatureMatrix, cache: &ForwardCache, triplets: &[Triplet]) -> Result<TripletLossResult> {
        let loss = triplet_loss(features, triplets, self.margin)?;
        if loss.active > 0 {
            let grad = triplet_loss_backward(features, triplets, self.margin)?;
            let grads = self.params.backward(cache, grad.view())?;
            self.opt.step(&mut self.params, &grads)?;
        }
        Ok(loss)
    }

    /// Re-embed the samples referenced by sample-id triplets with the
    /// current parameters, then step on them.
    fn step_on_samples(&mut self, dataset: &LabeledDataset, triplets: &[Triplet]) -> Result<TripletLossResult> {
        if triplets.is_empty() {
            return triplet_loss(&FeatureMatrix::new_unchecked(ndarray::Array2::zeros((0, 0))), &[], self.margin);
        }
        let mut rows = BTreeMap::new();
        for t in triplets {
            for id in [t.anchor, t.positive, t.negative] {
                rows.entry(id).or_insert(0);
            }
        }
        let ids: Vec<usize> = rows.keys().copied().collect();
        for (row, slot) in rows.values_mut().enumerate() {
            *slot = row;
        }
        let local: Vec<Triplet> = triplets.iter().map(|t| t.map(|id| rows[&id])).collect();
        let (features, cache) = self.params.forward(dataset.gather(&ids).view())?;
        self.step(&features, &cache, &local)
    }
}

/// Triplet-loss finetuning starting from `initial`.
pub fn finetune(
    dataset: &LabeledDataset,
    cfg: &FinetuneConfig,
    initial: EmbedderParams,
    eval: Option<&VerificationSet>,
) -> Result<Finetuned> {
    cfg.validate()?;
    if initial.input_dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: initial.input_dim(),
            found: dataset.dim(),
        });
    }
    if matches!(cfg.method, MiningMethod::Offline { .. }) && cfg.mining.strategy == Strategy::All {
        let count = dataset_triplet_count(dataset);
        if count > OFFLINE_ALL_LIMIT {
            return Err(Error::config(format!(
                "offline Batch All over this dataset could select up to {count} triplets \
                 (limit {OFFLINE_ALL_LIMIT}); use a selective strategy or online mining"
            )));
        }
    }
    let margin = cfg.mining.margin;
    let mut sampler = PkSampler::new(cfg.pk, seed::derive(cfg.seed, "sampler"))?;
    let probe = PkSampler::new(cfg.pk, seed::derive(cfg.seed, "probe"))?.next_batch(dataset)?;
    let mut stepper = TripletStepper {
        params: initial,
        opt: AdagradState::new(cfg.lr)?,
        margin,
    };
    let mut pool = match cfg.method {
        MiningMethod::SemiOnline { window } => Some(FeaturePool::new(window)?),
        _ => None,
    };
    let mut offline: Vec<Triplet> = Vec::new();
    let mut cursor = 0usize;
    let mut report = TrainReport::default();
    let mut interval = Interval::default();
    let mut zero_streak = 0usize;

    for t in 0..cfg.iterations {
        let round = t as u64;
        let loss = match cfg.method {
            MiningMethod::Online => {
                let batch = sampler.next_batch(dataset)?;
                let (features, cache) = stepper.params.forward(dataset.gather(&batch.sample_ids).view())?;
                let m = pairwise_squared_distances(&features);
                let triplets = mine(&m, &batch.labels, &cfg.mining, round)?;
                stepper.step(&features, &cache, &triplets)?
            }
            MiningMethod::SemiOnline { .. } => {
                let pool = pool.as_mut().expect("pool exists for semi-online");
                let batch = sampler.next_batch(dataset)?;
                let features = stepper.params.embed(dataset.gather(&batch.sample_ids).view())?;
                pool.push(&features, &batch.labels, &batch.sample_ids, round)?;
                let triplets = pool.mine(&cfg.mining, round)?;
                stepper.step_on_samples(dataset, &triplets)?
            }
            MiningMethod::Offline { refresh } => {
                if t % refresh == 0 {
                    offline = offline_mine(dataset, &stepper.params, &cfg.mining, round)?;
                    sampler.shuffle(&mut offline);
                    cursor = 0;
                    log::debug!("offline mining at iter {t}: {} triplets", offline.len());
                }
                let take = cfg.pk.batch_size().min(offline.len());
                let chunk: Vec<Triplet> = (0..take).map(|n| offline[(cursor + n) % offline.len()]).collect();
                if !offline.is_empty() {
                    cursor = (cursor + take) % offline.len();
                }
                stepper.step_on_samples(dataset, &chunk)?
            }
        };
        if loss.active == 0 {
            zero_streak += 1;
            if zero_streak == cfg.zero_active_warning {
                log::warn!(
                    "no active triplets for {zero_streak} consecutive iterations (iteration {})",
                    t + 1
                );
            }
        } else {
            zero_streak = 0;
        }
        interval.add(loss.total, loss.per_triplet.len());

        if is_eval_point(t, cfg.eval_interval, cfg.iterations) {
            let (loss, mean_triplets) = interval.take();
            let active = active_fraction(&stepper.params, dataset, &probe, margin)?;
            let verif_acc = eval.map(|e| e.accuracy(&stepper.params)).transpose()?;
            log::info!(
                "finetune[{} {}] iter {} loss {loss:.4} triplets/step {mean_triplets:.1} active {active:.3} verif {verif_acc:?}",
                cfg.mining.strategy,
                cfg.method.name(),
                t + 1
            );
            report.records.push(TrainRecord {
                iteration: t + 1,
                loss,
                active_fraction: Some(active),
                verif_acc,
                mean_triplets,
            });
        }
        if !stepper.params.is_finite() {
            return Err(Error::config(format!("parameters diverged at iteration {}", t + 1)));
        }
    }
    Ok(Finetuned {
        params: stepper.params,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct PkSweepRow {
    pub pk: PkConfig,
    pub accuracy: Option<f64>,
    pub report: TrainReport,
}

/// One finetune per (P, K) combination, all sharing the same batch size,
/// initial parameters and seed.
pub fn run_pk_sweep(
    dataset: &LabeledDataset,
    base: &FinetuneConfig,
    initial: &EmbedderParams,
    combos: &[PkConfig],
    eval: Option<&VerificationSet>,
) -> Result<Vec<PkSweepRow>> {
    let Some(first) = combos.first() else {
        return Err(Error::config("P×K sweep needs at least one combination"));
    };
    let b = first.batch_size();
    if let Some(bad) = combos.iter().find(|c| c.batch_size() != b) {
        return Err(Error::config(format!(
            "P×K sweep needs a fixed batch size: {}×{} != {b}",
            bad.persons, bad.per_person
        )));
    }
    combos
        .iter()
        .map(|&pk| {
            let cfg = FinetuneConfig { pk, ..base.clone() };
            let out = finetune(dataset, &cfg, initial.clone(), eval)?;
            Ok(PkSweepRow {
                pk,
                accuracy: out.report.final_accuracy(),
                report: out.report,
            })
        })
        .collect()
}
