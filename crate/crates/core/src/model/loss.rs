use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::mining::Triplet;

/// Hinge triplet loss averaged over the selected triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLossResult {
    /// Mean of `per_triplet`, 0 for an empty list.
    pub total: f64,
    pub per_triplet: Vec<f64>,
    /// Triplets with strictly positive loss.
    pub active: usize,
}

fn squared_distance(features: &FeatureMatrix, a: usize, b: usize) -> f64 {
    features
        .row(a)
        .iter()
        .zip(features.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn check_indices(features: &FeatureMatrix, triplets: &[Triplet]) -> Result<()> {
    let len = features.rows();
    for t in triplets {
        for index in [t.anchor, t.positive, t.negative] {
            if index >= len {
                return Err(Error::IndexOutOfRange { index, len });
            }
        }
    }
    Ok(())
}

fn hinge(features: &FeatureMatrix, t: &Triplet, margin: f64) -> f64 {
    squared_distance(features, t.anchor, t.positive) + margin
        - squared_distance(features, t.anchor, t.negative)
}

/// `max(0, ||f_a − f_p||² + α − ||f_a − f_n||²)` per triplet.
pub fn triplet_loss(features: &FeatureMatrix, triplets: &[Triplet], margin: f64) -> Result<TripletLossResult> {
    check_indices(features, triplets)?;
    let per_triplet: Vec<f64> = triplets
        .iter()
        .map(|t| hinge(features, t, margin).max(0.0))
        .collect();
    let active = per_triplet.iter().filter(|&&l| l > 0.0).count();
    let total = if per_triplet.is_empty() {
        0.0
    } else {
        per_triplet.iter().sum::<f64>() / per_triplet.len() as f64
    };
    Ok(TripletLossResult {
        total,
        per_triplet,
        active,
    })
}

/// Gradient of the mean triplet loss with respect to every feature row.
pub fn triplet_loss_backward(features: &FeatureMatrix, triplets: &[Triplet], margin: f64) -> Result<Array2<f64>> {
    check_indices(features, triplets)?;
    let mut grad = Array2::zeros((features.rows(), features.dim()));
    if triplets.is_empty() {
        return Ok(grad);
    }
    let scale = 2.0 / triplets.len() as f64;
    for t in triplets.iter().filter(|t| hinge(features, t, margin) > 0.0) {
        let fa = features.row(t.anchor);
        let fp = features.row(t.positive);
        let fn_ = features.row(t.negative);
        let ga = (&fn_ - &fp) * scale;
        let gp = (&fp - &fa) * scale;
        let gn = (&fa - &fn_) * scale;
        grad.row_mut(t.anchor).scaled_add(1.0, &ga);
        grad.row_mut(t.positive).scaled_add(1.0, &gp);
        grad.row_mut(t.negative).scaled_add(1.0, &gn);
    }
    Ok(grad)
}
