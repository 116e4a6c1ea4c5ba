//! Feature pools for online, semi-online and offline mining.
//!
//! A pool keeps the last `W` embedded batches. `W = 1` is online mining;
//! larger windows let anchors see negatives from several recent batches.
//! Mining over a pool returns dataset sample ids, not pool rows: pooled
//! features can be up to `W` iterations old, so callers re-embed the
//! selected samples with current parameters before computing the loss.

use std::collections::VecDeque;

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::features::{pairwise_squared_distances, FeatureMatrix};
use crate::mining::{mine, MiningConfig, Triplet};
use crate::model::Embed;
use crate::sampler::LabeledDataset;

#[derive(Debug, Clone)]
struct PooledBatch {
    iteration: u64,
    features: Array2<f64>,
    labels: Vec<usize>,
    sample_ids: Vec<usize>,
}

/// One pooled row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry<'a> {
    pub features: ndarray::ArrayView1<'a, f64>,
    pub label: usize,
    pub sample_id: usize,
    pub iteration: u64,
}

/// FIFO of the last `window` batches.
#[derive(Debug, Clone)]
pub struct FeaturePool {
    window: usize,
    batches: VecDeque<PooledBatch>,
}

impl FeaturePool {
    pub const DEFAULT_WINDOW: usize = 10;

    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("pool window must be at least 1"));
        }
        Ok(Self {
            window,
            batches: VecDeque::with_capacity(window + 1),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Pooled rows.
    pub fn len(&self) -> usize {
        self.batches.iter().map(|b| b.labels.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    /// Append a batch, evicting whole batches beyond the window oldest
    /// first.
    pub fn push(&mut self, features: &FeatureMatrix, labels: &[usize], sample_ids: &[usize], iteration: u64) -> Result<()> {
        if labels.len() != features.rows() || sample_ids.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows, {} labels, {} sample ids",
                features.rows(),
                labels.len(),
                sample_ids.len()
            )));
        }
        if let Some(first) = self.batches.front() {
            if first.features.ncols() != features.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.features.ncols(),
                    found: features.dim(),
                });
            }
        }
        self.batches.push_back(PooledBatch {
            iteration,
            features: features.view().to_owned(),
            labels: labels.to_vec(),
            sample_ids: sample_ids.to_vec(),
        });
        while self.batches.len() > self.window {
            self.batches.pop_front();
        }
        Ok(())
    }

    /// Pooled rows, oldest first.
    pub fn entries(&self) -> impl Iterator<Item = PoolEntry<'_>> {
        self.batches.iter().flat_map(|b| {
            b.features
                .rows()
                .into_iter()
                .zip(&b.labels)
                .zip(&b.sample_ids)
                .map(move |((features, &label), &sample_id)| PoolEntry {
                    features,
                    label,
                    sample_id,
                    iteration: b.iteration,
                })
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.batches.iter().flat_map(|b| b.labels.iter().copied()).collect()
    }

    pub fn sample_ids(&self) -> Vec<usize> {
        self.batches.iter().flat_map(|b| b.sample_ids.iter().copied()).collect()
    }

    pub fn features(&self) -> Result<FeatureMatrix> {
        let views: Vec<ArrayView2<'_, f64>> = self.batches.iter().map(|b| b.features.view()).collect();
        let stacked = concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        FeatureMatrix::new(stacked)
    }

    /// Mine over every pooled row and return the selection as sample-id
    /// triplets.
    pub fn mine(&self, cfg: &MiningConfig, round: u64) -> Result<Vec<Triplet>> {
        if self.is_empty() {
            return Err(Error::config("cannot mine an empty pool"));
        }
        let ids = self.sample_ids();
        let rows = mine_rows(&self.features()?, &self.labels(), cfg, round)?;
        Ok(rows.into_iter().map(|t| t.map(|r| ids[r])).collect())
    }
}

fn mine_rows(features: &FeatureMatrix, labels: &[usize], cfg: &MiningConfig, round: u64) -> Result<Vec<Triplet>> {
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Ok(Vec::new());
    }
    let m = pairwise_squared_distances(features);
    mine(&m, labels, cfg, round)
}

/// Embed the whole dataset with the current parameters and mine once over
/// its full distance matrix. Triplets hold dataset sample ids.
pub fn offline_mine<E: Embed + ?Sized>(
    dataset: &LabeledDataset,
    embedder: &E,
    cfg: &MiningConfig,
    round: u64,
) -> Result<Vec<Triplet>> {
    let features = embedder.embed(dataset.inputs())?;
    mine_rows(&features, dataset.labels(), cfg, round)
}
