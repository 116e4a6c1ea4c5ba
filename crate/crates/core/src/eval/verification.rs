use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{l2_normalize, FeatureMatrix};
use crate::model::Embed;
use crate::sampler::LabeledDataset;
use crate::seed;

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

/// Balanced same/different sample pairs with k-fold threshold
/// cross-validation.
///
/// Folds are assigned after sorting each class of pairs canonically, so the
/// order pairs are listed in has no effect on the result.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProtocol {
    pub pairs: Vec<Pair>,
    pub folds: usize,
}

impl PairProtocol {
    pub fn new(pairs: Vec<Pair>, folds: usize) -> Result<Self> {
        let p = Self { pairs, folds };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyProtocol);
        }
        let same = self.pairs.iter().filter(|p| p.same).count();
        let different = self.pairs.len() - same;
        if same != different {
            return Err(Error::UnbalancedProtocol { same, different });
        }
        if self.folds < 2 || same < self.folds {
            return Err(Error::config(format!(
                "{} folds need at least 2 folds and one pair of each kind per fold ({same} available)",
                self.folds
            )));
        }
        Ok(())
    }

    /// Draw `per_class` same-identity and `per_class` different-identity
    /// pairs from `dataset`.
    pub fn generate(dataset: &LabeledDataset, per_class: usize, folds: usize, seed: u64) -> Result<Self> {
        let eligible: Vec<usize> = (0..dataset.num_identities())
            .filter(|&id| dataset.samples_of(id).len() >= 2)
            .collect();
        if eligible.is_empty() || dataset.num_identities() < 2 {
            return Err(Error::config(
                "pair protocol needs two identities and one identity with two samples",
            ));
        }
        let mut rng = seed::rng(seed);
        let mut pairs = Vec::with_capacity(2 * per_class);
        for _ in 0..per_class {
            let id = eligible[rng.random_range(0..eligible.len())];
            let pick = rand::seq::index::sample(&mut rng, dataset.samples_of(id).len(), 2);
            let s = dataset.samples_of(id);
            pairs.push(Pair {
                a: s[pick.index(0)],
                b: s[pick.index(1)],
                same: true,
            });
        }
        let ids = dataset.num_identities();
        for _ in 0..per_class {
            let pick = rand::seq::index::sample(&mut rng, ids, 2);
            let (sa, sb) = (dataset.samples_of(pick.index(0)), dataset.samples_of(pick.index(1)));
            pairs.push(Pair {
                a: sa[rng.random_range(0..sa.len())],
                b: sb[rng.random_range(0..sb.len())],
                same: false,
            });
        }
        Self::new(pairs, folds)
    }

    /// Fold index of every pair.
    pub fn fold_assignment(&self) -> Vec<usize> {
        let mut fold = vec![0; self.pairs.len()];
        for class in [true, false] {
            let mut idx: Vec<usize> = (0..self.pairs.len()).filter(|&i| self.pairs[i].same == class).collect();
            idx.sort_by_key(|&i| self.pairs[i]);
            for (rank, i) in idx.into_iter().enumerate() {
                fold[i] = rank % self.folds;
            }
        }
        fold
    }

    /// Read the `id_a,id_b,same` CSV format.
    pub fn read_csv<R: Read>(reader: R, folds: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let parse_err = |message: String| Error::Parse {
                path: "<protocol>".into(),
                line,
                message,
            };
            if record.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", record.len())));
            }
            let id = |s: &str| s.parse::<usize>().map_err(|e| parse_err(format!("bad id {s:?}: {e}")));
            let same = match &record[2] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(parse_err(format!("bad same flag {other:?}"))),
            };
            pairs.push(Pair {
                a: id(&record[0])?,
                b: id(&record[1])?,
                same,
            });
        }
        Self::new(pairs, folds)
    }

    pub fn load_csv(path: &Path, folds: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), folds).map_err(|e| match e {
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
        wtr.write_record(["id_a", "id_b", "same"])?;
        for p in &self.pairs {
            wtr.write_record([p.a.to_string(), p.b.to_string(), u8::from(p.same).to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Best threshold on `(distance, same)` samples: pairs with distance below
/// it are called "same". Candidates are every midpoint between consecutive
/// distinct distances plus one value below and one above the range; the
/// lowest threshold reaching the best accuracy wins.
pub fn best_threshold(samples: &[(f64, bool)]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    // correct(p) = same among first p + different among the rest.
    let total_diff = sorted.iter().filter(|s| !s.1).count();
    let mut correct = total_diff;
    let mut best = (correct, sorted[0].0 - 1.0);
    for p in 1..=n {
        if sorted[p - 1].1 {
            correct += 1;
        } else {
            correct -= 1;
        }
        if p < n && sorted[p].0 == sorted[p - 1].0 {
            continue;
        }
        let threshold = if p == n {
            sorted[n - 1].0 + 1.0
        } else {
            0.5 * (sorted[p - 1].0 + sorted[p].0)
        };
        if correct > best.0 {
            best = (correct, threshold);
        }
    }
    best.1
}

/// Mean held-out-fold accuracy given one squared distance per pair.
pub fn accuracy_from_distances(distances: &[f64], protocol: &PairProtocol) -> Result<f64> {
    protocol.validate()?;
    if distances.len() != protocol.pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: protocol.pairs.len(),
            found: distances.len(),
        });
    }
    let folds = protocol.fold_assignment();
    let mut sum = 0.0;
    for f in 0..protocol.folds {
        let train: Vec<(f64, bool)> = (0..distances.len())
            .filter(|&i| folds[i] != f)
            .map(|i| (distances[i], protocol.pairs[i].same))
            .collect();
        let threshold = best_threshold(&train);
        let test: Vec<usize> = (0..distances.len()).filter(|&i| folds[i] == f).collect();
        let correct = test
            .iter()
            .filter(|&&i| (distances[i] < threshold) == protocol.pairs[i].same)
            .count();
        sum += correct as f64 / test.len() as f64;
    }
    Ok(sum / protocol.folds as f64)
}

/// Embed every sample the protocol touches and score it.
pub fn verification_accuracy<E: Embed + ?Sized>(
    embedder: &E,
    protocol: &PairProtocol,
    dataset: &LabeledDataset,
) -> Result<f64> {
    protocol.validate()?;
    let mut rows = BTreeMap::new();
    for p in &protocol.pairs {
        for id in [p.a, p.b] {
            if id >= dataset.len() {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    len: dataset.len(),
                });
            }
            let next = rows.len();
            rows.entry(id).or_insert(next);
        }
    }
    let mut ids = vec![0; rows.len()];
    for (&id, &row) in &rows {
        ids[row] = id;
    }
    let features = embedder.embed(dataset.gather(&ids).view())?;
    let distances: Vec<f64> = protocol
        .pairs
        .iter()
        .map(|p| {
            let (fa, fb) = (features.row(rows[&p.a]), features.row(rows[&p.b]));
            fa.iter().zip(fb.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
        })
        .collect();
    accuracy_from_distances(&distances, protocol)
}

/// L2-normalized raw inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEmbedder;

impl Embed for IdentityEmbedder {
    fn embed(&self, inputs: ArrayView2<'_, f64>) -> Result<FeatureMatrix> {
        l2_normalize(&FeatureMatrix::new(inputs.to_owned())?)
    }
}

/// Held-out identities and the pair protocol drawn from them.
#[derive(Debug, Clone)]
pub struct VerificationSet {
    pub dataset: LabeledDataset,
    pub protocol: PairProtocol,
}

impl VerificationSet {
    pub fn accuracy<E: Embed + ?Sized>(&self, embedder: &E) -> Result<f64> {
        verification_accuracy(embedder, &self.protocol, &self.dataset)
    }
}
