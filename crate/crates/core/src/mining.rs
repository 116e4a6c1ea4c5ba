//! Triplet enumeration and the five batch selection strategies.
//!
//! All strategies walk the batch in the same nested order: persons in order
//! of first appearance in the label vector, anchors and positives in
//! ascending row order within the person, negatives in ascending row order
//! over every row of another person. Output lists follow that order, and
//! every argmin/argmax keeps the first candidate met in it, so ties go to
//! the lowest (anchor, positive, negative) tuple.
//!
//! A triplet `(i, j, k)` is *active* when `M(i,j) + α > M(i,k)` (strict).

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DistanceMatrix;
use crate::seed;

/// Row indices of an (anchor, positive, negative) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub const fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Self {
            anchor,
            positive,
            negative,
        }
    }

    /// Re-index all three members through `f`.
    pub fn map(self, f: impl Fn(usize) -> usize) -> Self {
        Self::new(f(self.anchor), f(self.positive), f(self.negative))
    }
}

impl From<(usize, usize, usize)> for Triplet {
    fn from((a, p, n): (usize, usize, usize)) -> Self {
        Self::new(a, p, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    All,
    Random,
    MinMin,
    MinMax,
    Hardest,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::All,
        Strategy::Random,
        Strategy::MinMin,
        Strategy::MinMax,
        Strategy::Hardest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::All => "all",
            Strategy::Random => "random",
            Strategy::MinMin => "min_min",
            Strategy::MinMax => "min_max",
            Strategy::Hardest => "hardest",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown strategy {s:?}; expected one of {{all,random,min_min,min_max,hardest}}"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub strategy: Strategy,
    pub margin: f64,
    /// Only used by [`Strategy::Random`].
    pub seed: u64,
}

impl MiningConfig {
    pub fn new(strategy: Strategy, margin: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            strategy,
            margin,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::config(format!(
                "margin must be positive and finite, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Row indices grouped by person, persons in order of first appearance.
pub fn group_by_person(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (row, &label) in labels.iter().enumerate() {
        match order.iter().position(|&l| l == label) {
            Some(g) => groups[g].push(row),
            None => {
                order.push(label);
                groups.push(vec![row]);
            }
        }
    }
    groups
}

fn check_shapes(m: &DistanceMatrix, labels: &[usize]) -> Result<()> {
    if m.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: m.len(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// Every valid triplet: same-label anchor/positive, different-label negative.
pub fn enumerate_valid_triplets(labels: &[usize]) -> Vec<Triplet> {
    let mut out = Vec::new();
    for group in group_by_person(labels) {
        let person = labels[group[0]];
        for &i in &group {
            for &j in group.iter().filter(|&&j| j != i) {
                for k in (0..labels.len()).filter(|&k| labels[k] != person) {
                    out.push(Triplet::new(i, j, k));
                }
            }
        }
    }
    out
}

/// Number of valid triplets in a P×K batch: `P·K·(K−1)·(B−K)`.
pub fn valid_triplet_count(persons: usize, per_person: usize) -> usize {
    let b = persons * per_person;
    persons * per_person * per_person.saturating_sub(1) * (b - per_person)
}

/// Per-anchor view used by the selection strategies.
struct AnchorScan<'a> {
    m: &'a DistanceMatrix,
    labels: &'a [usize],
    margin: f64,
}

impl AnchorScan<'_> {
    fn is_active(&self, i: usize, j: usize, k: usize) -> bool {
        self.m.get(i, j) + self.margin > self.m.get(i, k)
    }

    fn negatives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let person = self.labels[i];
        (0..self.labels.len()).filter(move |&k| self.labels[k] != person)
    }

    /// Closest negative of anchor `i`; lowest row index among ties.
    fn nearest_negative(&self, i: usize) -> Option<usize> {
        self.negatives(i).fold(None, |best, k| match best {
            Some(b) if self.m.get(i, b) <= self.m.get(i, k) => Some(b),
            _ => Some(k),
        })
    }

    /// Active negatives of (i, j) in ascending row order.
    fn active_negatives(&self, i: usize, j: usize) -> Vec<usize> {
        self.negatives(i).filter(|&k| self.is_active(i, j, k)).collect()
    }
}

/// All active triplets.
pub fn batch_all(m: &DistanceMatrix, labels: &[usize], cfg: &MiningConfig) -> Result<Vec<Triplet>> {
    check_shapes(m, labels)?;
    cfg.validate()?;
    let scan = AnchorScan {
        m,
        labels,
        margin: cfg.margin,
    };
    let mut out = Vec::new();
    for group in group_by_person(labels) {
        for &i in &group {
            for &j in group.iter().filter(|&&j| j != i) {
                out.extend(
                    scan.active_negatives(i, j)
                        .into_iter()
                        .map(|k| Triplet::new(i, j, k)),
                );
            }
        }
    }
    Ok(out)
}

/// Uniform index into `0..n` for the (anchor, positive) pair.
///
/// Counter-based: the draw depends only on `(seed, round, anchor, positive)`,
/// never on how many draws came before, so pairs can be processed in any
/// order.
pub fn pair_draw(seed: u64, round: u64, anchor: usize, positive: usize, n: usize) -> usize {
    assert!(n > 0, "pair_draw over an empty set");
    let key = seed::key(&[seed, round, anchor as u64, positive as u64]);
    seed::rng(key).random_range(0..n)
}

/// One uniformly drawn active negative per (anchor, positive) pair.
pub fn batch_random(
    m: &DistanceMatrix,
    labels: &[usize],
    cfg: &MiningConfig,
    round: u64,
) -> Result<Vec<Triplet>> {
    check_shapes(m, labels)?;
    cfg.validate()?;
    let scan = AnchorScan {
        m,
        labels,
        margin: cfg.margin,
    };
    let mut out = Vec::new();
    for group in group_by_person(labels) {
        for &i in &group {
            for &j in group.iter().filter(|&&j| j != i) {
                let active = scan.active_negatives(i, j);
                if !active.is_empty() {
                    let pick = pair_draw(cfg.seed, round, i, j, active.len());
                    out.push(Triplet::new(i, j, active[pick]));
                }
            }
        }
    }
    Ok(out)
}

// The active negatives of (i, j) are exactly the negatives closer to i than
// M(i,j) + α, so whenever that set is non-empty its closest member is the
// anchor's overall nearest negative. The three strategies below use this to
// avoid scanning negatives once per positive.

/// Per anchor: the active triplet whose negative is closest to the anchor.
pub fn batch_min_min(
    m: &DistanceMatrix,
    labels: &[usize],
    cfg: &MiningConfig,
) -> Result<Vec<Triplet>> {
    check_shapes(m, labels)?;
    cfg.validate()?;
    let scan = AnchorScan {
        m,
        labels,
        margin: cfg.margin,
    };
    let mut out = Vec::new();
    for group in group_by_person(labels) {
        for &i in &group {
            let Some(k) = scan.nearest_negative(i) else {
                continue;
            };
            // The first active positive reaches the minimum first.
            if let Some(&j) = group
                .iter()
                .find(|&&j| j != i && scan.is_active(i, j, k))
            {
                out.push(Triplet::new(i, j, k));
            }
        }
    }
    Ok(out)
}

/// Per anchor: for each positive take its closest active negative, then keep
/// the positive whose closest active negative is farthest from the anchor.
pub fn batch_min_max(
    m: &DistanceMatrix,
    labels: &[usize],
    cfg: &MiningConfig,
) -> Result<Vec<Triplet>> {
    check_shapes(m, labels)?;
    cfg.validate()?;
    let scan = AnchorScan {
        m,
        labels,
        margin: cfg.margin,
    };
    let mut out = Vec::new();
    for group in group_by_person(labels) {
        for &i in &group {
            let Some(nearest) = scan.nearest_negative(i) else {
                continue;
            };
            let per_positive = group
                .iter()
                .filter(|&&j| j != i && scan.is_active(i, j, nearest))
                .map(|&j| Triplet::new(i, j, nearest));
            let mut best: Option<Triplet> = None;
            for t in per_positive {
                if best.is_none_or(|b| m.get(i, t.negative) > m.get(i, b.negative)) {
                    best = Some(t);
                }
            }
            out.extend(best);
        }
    }
    Ok(out)
}

/// Per person: the active triplet, over all of the person's anchors, whose
/// negative is closest to its anchor.
pub fn batch_hardest(
    m: &DistanceMatrix,
    labels: &[usize],
    cfg: &MiningConfig,
) -> Result<Vec<Triplet>> {
    check_shapes(m, labels)?;
    cfg.validate()?;
    let scan = AnchorScan {
        m,
        labels,
        margin: cfg.margin,
    };
    let mut out = Vec::new();
    for group in group_by_person(labels) {
        let mut best: Option<Triplet> = None;
        for &i in &group {
            let Some(k) = scan.nearest_negative(i) else {
                continue;
            };
            let Some(&j) = group
                .iter()
                .find(|&&j| j != i && scan.is_active(i, j, k))
            else {
                continue;
            };
            if best.is_none_or(|b| m.get(i, k) < m.get(b.anchor, b.negative)) {
                best = Some(Triplet::new(i, j, k));
            }
        }
        out.extend(best);
    }
    Ok(out)
}

/// Dispatch to the configured strategy. `round` keys the random draws of
/// [`Strategy::Random`] and is ignored by the others.
pub fn mine(
    m: &DistanceMatrix,
    labels: &[usize],
    cfg: &MiningConfig,
    round: u64,
) -> Result<Vec<Triplet>> {
    match cfg.strategy {
        Strategy::All => batch_all(m, labels, cfg),
        Strategy::Random => batch_random(m, labels, cfg, round),
        Strategy::MinMin => batch_min_min(m, labels, cfg),
        Strategy::MinMax => batch_min_max(m, labels, cfg),
        Strategy::Hardest => batch_hardest(m, labels, cfg),
    }
}
