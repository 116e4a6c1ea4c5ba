//! Shared test support: a brute-force mining reference written straight
//! from the pseudocode, random batch generation, and finite differences.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tripletmine::mining::{pair_draw, Strategy};
use tripletmine::{DistanceMatrix, FeatureMatrix, Triplet};

pub type Triple = (usize, usize, usize);

/// Persons in order of first appearance, each with its rows ascending.
fn persons(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    for &l in labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    order
        .iter()
        .map(|&p| (0..labels.len()).filter(|&r| labels[r] == p).collect())
        .collect()
}

fn active(m: &Array2<f64>, alpha: f64, i: usize, j: usize, k: usize) -> bool {
    m[[i, j]] + alpha > m[[i, k]]
}

/// The candidate list `t` for one (anchor, positive) pair: every negative
/// row in ascending order that passes the margin test.
fn candidates(m: &Array2<f64>, labels: &[usize], alpha: f64, i: usize, j: usize) -> Vec<Triple> {
    (0..labels.len())
        .filter(|&k| labels[k] != labels[i])
        .filter(|&k| active(m, alpha, i, j, k))
        .map(|k| (i, j, k))
        .collect()
}

/// First element with the smallest `M(i,k)`.
fn argmin(m: &Array2<f64>, t: &[Triple]) -> Option<Triple> {
    let mut best: Option<Triple> = None;
    for &c in t {
        if best.is_none_or(|b| m[[c.0, c.2]] < m[[b.0, b.2]]) {
            best = Some(c);
        }
    }
    best
}

/// First element with the largest `M(i,k)`.
fn argmax(m: &Array2<f64>, t: &[Triple]) -> Option<Triple> {
    let mut best: Option<Triple> = None;
    for &c in t {
        if best.is_none_or(|b| m[[c.0, c.2]] > m[[b.0, b.2]]) {
            best = Some(c);
        }
    }
    best
}

pub fn oracle(
    strategy: Strategy,
    m: &Array2<f64>,
    labels: &[usize],
    alpha: f64,
    seed: u64,
    round: u64,
) -> Vec<Triple> {
    let mut out = Vec::new();
    for person in persons(labels) {
        let mut per_person = Vec::new();
        for &i in &person {
            let mut per_anchor = Vec::new();
            let mut minima = Vec::new();
            for &j in person.iter().filter(|&&j| j != i) {
                let t = candidates(m, labels, alpha, i, j);
                match strategy {
                    Strategy::All => out.extend(&t),
                    Strategy::Random => {
                        if !t.is_empty() {
                            out.push(t[pair_draw(seed, round, i, j, t.len())]);
                        }
                    }
                    Strategy::MinMax => minima.extend(argmin(m, &t)),
                    Strategy::MinMin => per_anchor.extend(&t),
                    Strategy::Hardest => per_person.extend(&t),
                }
            }
            match strategy {
                Strategy::MinMin => out.extend(argmin(m, &per_anchor)),
                Strategy::MinMax => out.extend(argmax(m, &minima)),
                _ => {}
            }
        }
        if strategy == Strategy::Hardest {
            out.extend(argmin(m, &per_person));
        }
    }
    out
}

pub fn triples(ts: &[Triplet]) -> Vec<Triple> {
    ts.iter().map(|t| (t.anchor, t.positive, t.negative)).collect()
}

/// Brute-force squared distances, one coordinate at a time.
pub fn distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut m = Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for c in 0..x.ncols() {
                let d = x[[a, c]] - x[[b, c]];
                s += d * d;
            }
            m[[a, b]] = s;
        }
    }
    m
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || -> f64 { StandardNormal.sample(rng) })
}

pub fn unit_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut x = gaussian(rng, rows, cols);
    for mut r in x.rows_mut() {
        let n = r.dot(&r).sqrt();
        r.mapv_inplace(|v| v / n);
    }
    x
}

pub struct Batch {
    pub features: FeatureMatrix,
    pub distances: DistanceMatrix,
    pub raw: Array2<f64>,
    pub labels: Vec<usize>,
    pub persons: usize,
    pub per_person: usize,
}

/// Random P×K batch with unit-norm features. Labels are arbitrary ids
/// and rows are shuffled so persons are not contiguous.
pub fn random_batch(rng: &mut impl Rng) -> Batch {
    let p = rng.random_range(2..=5);
    let k = rng.random_range(2..=4);
    let d = rng.random_range(2..=8);
    let mut labels: Vec<usize> = (0..p * k).map(|r| 100 + 7 * (r / k)).collect();
    use rand::seq::SliceRandom;
    labels.shuffle(rng);
    let x = unit_rows(rng, p * k, d);
    let raw = distances(&x);
    let features = FeatureMatrix::new(x).unwrap();
    let distances = DistanceMatrix::from_array(raw.clone()).unwrap();
    Batch {
        features,
        distances,
        raw,
        labels,
        persons: p,
        per_person: k,
    }
}

/// Central finite difference of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
