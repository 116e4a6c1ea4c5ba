//! Labeled datasets and P×K batch sampling.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Input vectors with dense identity ids `0..num_identities`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    names: Vec<String>,
    identity_index: Vec<Vec<usize>>,
}

impl LabeledDataset {
    /// `labels[i]` must be a dense id indexing into `names`.
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                found: labels.len(),
            });
        }
        crate::features::check_finite(inputs.view())?;
        let mut identity_index = vec![Vec::new(); names.len()];
        for (pos, &label) in labels.iter().enumerate() {
            identity_index
                .get_mut(label)
                .ok_or(Error::LabelOutOfRange {
                    label,
                    classes: names.len(),
                })?
                .push(pos);
        }
        if let Some(empty) = identity_index.iter().position(Vec::is_empty) {
            return Err(Error::config(format!(
                "identity {:?} has no samples",
                names[empty]
            )));
        }
        Ok(Self {
            inputs,
            labels,
            names,
            identity_index,
        })
    }

    /// Build from string labels, interning them to dense ids in order of
    /// first appearance.
    pub fn from_named(inputs: Array2<f64>, labels: &[String]) -> Result<Self> {
        let mut ids = HashMap::new();
        let mut names = Vec::new();
        let dense = labels
            .iter()
            .map(|l| {
                *ids.entry(l.clone()).or_insert_with(|| {
                    names.push(l.clone());
                    names.len() - 1
                })
            })
            .collect();
        Self::new(inputs, dense, names)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn num_identities(&self) -> usize {
        self.names.len()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Sample positions belonging to `identity`.
    pub fn samples_of(&self, identity: usize) -> &[usize] {
        &self.identity_index[identity]
    }

    /// Input rows for `ids`, in order.
    pub fn gather(&self, ids: &[usize]) -> Array2<f64> {
        self.inputs.select(Axis(0), ids)
    }

    /// Keep only the listed identities, re-densifying their ids in the
    /// order given.
    pub fn subset_identities(&self, identities: &[usize]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut names = Vec::new();
        for (new_id, &old) in identities.iter().enumerate() {
            let samples = self.identity_index.get(old).ok_or(Error::LabelOutOfRange {
                label: old,
                classes: self.num_identities(),
            })?;
            rows.extend_from_slice(samples);
            labels.extend(std::iter::repeat_n(new_id, samples.len()));
            names.push(self.names[old].clone());
        }
        Self::new(self.gather(&rows), labels, names)
    }

    /// Split into (first `count` identities, remaining identities).
    pub fn split_identities(&self, count: usize) -> Result<(Self, Self)> {
        if count == 0 || count >= self.num_identities() {
            return Err(Error::config(format!(
                "cannot split {} identities at {count}",
                self.num_identities()
            )));
        }
        let all: Vec<usize> = (0..self.num_identities()).collect();
        Ok((
            self.subset_identities(&all[..count])?,
            self.subset_identities(&all[count..])?,
        ))
    }

    /// Read the `label,x_0,…,x_{n-1}` CSV format (header required).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::config(
                "dataset CSV needs a label column and at least one feature column",
            ));
        }
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            labels.push(record[0].to_string());
            for field in record.iter().skip(1) {
                values.push(field.parse::<f64>().map_err(|e| Error::Parse {
                    path: "<dataset>".into(),
                    line,
                    message: format!("bad value {field:?}: {e}"),
                })?);
            }
        }
        let inputs = Array2::from_shape_vec((labels.len(), width - 1), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::from_named(inputs, &labels)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|i| format!("x_{i}")));
        wtr.write_record(&header)?;
        for (row, &label) in self.inputs.rows().into_iter().zip(&self.labels) {
            let mut rec = vec![self.names[label].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Batch shape: `persons` identities with `per_person` samples each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkConfig {
    pub persons: usize,
    pub per_person: usize,
}

impl PkConfig {
    pub fn new(persons: usize, per_person: usize) -> Result<Self> {
        let cfg = Self {
            persons,
            per_person,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn batch_size(&self) -> usize {
        self.persons * self.per_person
    }

    pub fn validate(&self) -> Result<()> {
        if self.persons < 2 || self.per_person < 2 {
            return Err(Error::config(format!(
                "P and K must both be at least 2 (got P={}, K={})",
                self.persons, self.per_person
            )));
        }
        Ok(())
    }
}

/// One P×K batch: dataset sample ids and their identity labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkBatch {
    pub sample_ids: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Draw a P×K batch.
///
/// Identities are chosen uniformly without replacement. Within an identity,
/// samples are drawn without replacement when it has at least K of them and
/// with replacement otherwise.
pub fn sample_pk_batch(dataset: &LabeledDataset, cfg: &PkConfig, rng: &mut Rng) -> Result<PkBatch> {
    cfg.validate()?;
    let available = dataset.num_identities();
    if available < cfg.persons {
        return Err(Error::NotEnoughIdentities {
            needed: cfg.persons,
            available,
        });
    }
    let persons = rand::seq::index::sample(rng, available, cfg.persons);
    let mut batch = PkBatch {
        sample_ids: Vec::with_capacity(cfg.batch_size()),
        labels: Vec::with_capacity(cfg.batch_size()),
    };
    for identity in persons.iter() {
        let pool = dataset.samples_of(identity);
        if pool.len() >= cfg.per_person {
            batch
                .sample_ids
                .extend(pool.choose_multiple(rng, cfg.per_person).copied());
        } else {
            batch
                .sample_ids
                .extend((0..cfg.per_person).map(|_| pool[rng.random_range(0..pool.len())]));
        }
        batch
            .labels
            .extend(std::iter::repeat_n(identity, cfg.per_person));
    }
    Ok(batch)
}

/// Seeded P×K sampler that warns once per identity sampled with replacement.
#[derive(Debug, Clone)]
pub struct PkSampler {
    cfg: PkConfig,
    rng: Rng,
    warned: HashSet<usize>,
}

impl PkSampler {
    pub fn new(cfg: PkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: seed::rng(seed),
            warned: HashSet::new(),
        })
    }

    pub fn config(&self) -> &PkConfig {
        &self.cfg
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }

    pub fn next_batch(&mut self, dataset: &LabeledDataset) -> Result<PkBatch> {
        let batch = sample_pk_batch(dataset, &self.cfg, &mut self.rng)?;
        for (chunk, &identity) in batch
            .labels
            .chunks(self.cfg.per_person)
            .zip(batch.labels.iter().step_by(self.cfg.per_person))
        {
            debug_assert!(chunk.iter().all(|&l| l == identity));
            if dataset.samples_of(identity).len() < self.cfg.per_person
                && self.warned.insert(identity)
            {
                log::warn!(
                    "identity {:?} has {} samples (< K={}); sampling with replacement",
                    dataset.names()[identity],
                    dataset.samples_of(identity).len(),
                    self.cfg.per_person
                );
            }
        }
        Ok(batch)
    }

    /// Shuffle `items` with the sampler's stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(per_identity: &[usize]) -> LabeledDataset {
        let mut labels = Vec::new();
        for (id, &n) in per_identity.iter().enumerate() {
            labels.extend(std::iter::repeat_n(id, n));
        }
        let inputs = Array2::from_shape_fn((labels.len(), 2), |(i, j)| (i * 2 + j) as f64);
        let names = (0..per_identity.len()).map(|i| format!("id{i}")).collect();
        LabeledDataset::new(inputs, labels, names).unwrap()
    }

    #[test]
    fn batch_has_p_labels_each_k_times() {
        let ds = toy(&[10; 50]);
        let cfg = PkConfig::new(42, 5).unwrap();
        let batch = sample_pk_batch(&ds, &cfg, &mut seed::rng(1)).unwrap();
        assert_eq!(batch.sample_ids.len(), 210);
        let mut counts = HashMap::new();
        for &l in &batch.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 42);
        assert!(counts.values().all(|&c| c == 5));
        for (&id, &l) in batch.sample_ids.iter().zip(&batch.labels) {
            assert_eq!(ds.label(id), l);
        }
        // Without replacement within an identity.
        let unique: HashSet<_> = batch.sample_ids.iter().collect();
        assert_eq!(unique.len(), 210);
    }

    #[test]
    fn two_by_two_covers_tiny_dataset() {
        let ds = toy(&[2, 2]);
        let cfg = PkConfig::new(2, 2).unwrap();
        let batch = sample_pk_batch(&ds, &cfg, &mut seed::rng(5)).unwrap();
        let mut ids = batch.sample_ids.clone();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = toy(&[6; 12]);
        let cfg = PkConfig::new(4, 3).unwrap();
        let mut a = PkSampler::new(cfg, 99).unwrap();
        let mut b = PkSampler::new(cfg, 99).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_batch(&ds).unwrap(), b.next_batch(&ds).unwrap());
        }
    }

    #[test]
    fn small_identity_sampled_with_replacement() {
        let ds = toy(&[1, 5, 5]);
        let cfg = PkConfig::new(3, 3).unwrap();
        let batch = sample_pk_batch(&ds, &cfg, &mut seed::rng(0)).unwrap();
        let zeros: Vec<_> = batch
            .sample_ids
            .iter()
            .zip(&batch.labels)
            .filter(|(_, &l)| l == 0)
            .map(|(&s, _)| s)
            .collect();
        assert_eq!(zeros, vec![0, 0, 0]);
    }

    #[test]
    fn rejects_bad_configs() {
        let ds = toy(&[3, 3]);
        assert!(PkConfig::new(1, 3).is_err());
        assert!(PkConfig::new(2, 1).is_err());
        let cfg = PkConfig::new(3, 2).unwrap();
        assert!(matches!(
            sample_pk_batch(&ds, &cfg, &mut seed::rng(0)),
            Err(Error::NotEnoughIdentities {
                needed: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn identity_selection_is_uniform() {
        // Chi-squared check of identity frequencies over many batches.
        let n_ids = 10;
        let ds = toy(&[4; 10]);
        let cfg = PkConfig::new(3, 2).unwrap();
        let mut rng = seed::rng(2024);
        let batches = 5000;
        let mut counts = vec![0usize; n_ids];
        for _ in 0..batches {
            let b = sample_pk_batch(&ds, &cfg, &mut rng).unwrap();
            for &l in b.labels.iter().step_by(2) {
                counts[l] += 1;
            }
        }
        let expected = (batches * 3) as f64 / n_ids as f64;
        let p = 0.3;
        let sd = (batches as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 3.0 * sd, "{counts:?}");
        }
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 9 degrees of freedom, 99.9th percentile is ~27.9.
        assert!(chi2 < 27.9, "chi2 = {chi2}");
    }

    #[test]
    fn csv_round_trip_interns_labels() {
        let text = "label,x_0,x_1\nbob,1.5,2\nalice,0,-1\nbob,3,4\n";
        let ds = LabeledDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.names(), &["bob".to_string(), "alice".to_string()]);
        assert_eq!(ds.samples_of(0), &[0, 2]);
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let again = LabeledDataset::read_csv(out.as_slice()).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn csv_reports_bad_values() {
        let text = "label,x_0\na,1\nb,oops\n";
        let err = LabeledDataset::read_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn identity_index_round_trips() {
        let ds = toy(&[3, 1, 4]);
        for id in 0..ds.num_identities() {
            for &s in ds.samples_of(id) {
                assert_eq!(ds.label(s), id);
            }
        }
        let total: usize = (0..3).map(|i| ds.samples_of(i).len()).sum();
        assert_eq!(total, ds.len());
    }

    #[test]
    fn split_keeps_identities_disjoint() {
        let ds = toy(&[2, 3, 4, 5]);
        let (a, b) = ds.split_identities(3).unwrap();
        assert_eq!(a.num_identities(), 3);
        assert_eq!(b.num_identities(), 1);
        assert_eq!(b.len(), 5);
        assert_eq!(b.names(), &["id3".to_string()]);
    }
}
