use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::seed;

/// Linear classifier over features: `logits = F·W + b`, `W` is `d × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct SoftmaxOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub grad_features: Array2<f64>,
    pub grad_head: HeadGrads,
    /// Rows whose arg-max logit is the true class.
    pub correct: usize,
}

impl SoftmaxHead {
    pub fn init(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::config(format!(
                "softmax head needs d > 0 and at least 2 classes (got d={dim}, C={classes})"
            )));
        }
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("positive std");
        let mut rng = seed::rng(seed);
        Ok(Self {
            weights: Array2::from_shape_simple_fn((dim, classes), || normal.sample(&mut rng)),
            bias: Array1::zeros(classes),
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, features: &FeatureMatrix) -> Result<Array2<f64>> {
        if features.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: features.dim(),
            });
        }
        Ok(features.view().dot(&self.weights) + &self.bias)
    }

    /// Arg-max class per row.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        Ok(self
            .logits(features)?
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect())
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Mean softmax cross-entropy and its gradients.
pub fn softmax_xent_forward_backward(
    head: &SoftmaxHead,
    features: &FeatureMatrix,
    labels: &[usize],
) -> Result<SoftmaxOutput> {
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            found: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= head.classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: head.classes(),
        });
    }
    let mut probs = head.logits(features)?;
    let n = labels.len().max(1) as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for (mut row, &label) in probs.axis_iter_mut(Axis(0)).zip(labels) {
        if argmax(row.iter().copied()) == label {
            correct += 1;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted_label = row[label] - max;
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        loss += sum.ln() - shifted_label;
        row /= sum;
    }
    // d(mean xent)/d logits = (softmax - onehot) / N.
    let mut dlogits = probs;
    for (r, &label) in labels.iter().enumerate() {
        dlogits[[r, label]] -= 1.0;
    }
    dlogits /= n;
    Ok(SoftmaxOutput {
        loss: loss / n,
        grad_features: dlogits.dot(&head.weights.t()),
        grad_head: HeadGrads {
            weights: features.view().t().dot(&dlogits),
            bias: dlogits.sum_axis(Axis(0)),
        },
        correct,
    })
}

impl ParamSet for SoftmaxHead {
    fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

impl ParamSet for HeadGrads {
    fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}
