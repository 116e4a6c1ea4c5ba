//! Feature matrices, L2 normalization and squared Euclidean distances.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// A B×d matrix whose row `i` is the feature vector of batch element `i`.
///
/// Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_finite(values.view())?;
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Array2::zeros((rows.len(), dim));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.row_mut(i).assign(&Array1::from(row.clone()));
        }
        Self::new(values)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Rows `indices` in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select(Axis(0), indices))
    }
}

pub(crate) fn check_finite(values: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Divide each row by its Euclidean norm.
pub fn l2_normalize(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (normalized, _) = normalize_rows(features.view())?;
    Ok(FeatureMatrix(normalized))
}

/// Row-normalize `values`, also returning the norms (needed for backprop).
pub(crate) fn normalize_rows(values: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    check_finite(values)?;
    let mut out = values.to_owned();
    let mut norms = Array1::zeros(values.nrows());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        row.mapv_inplace(|v| v / norm);
        norms[i] = norm;
    }
    Ok((out, norms))
}

/// B×B matrix of squared Euclidean distances between feature rows.
///
/// Symmetric with an exactly zero diagonal. No square root is ever taken.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    /// Wrap a precomputed matrix. It must be square, finite and non-negative.
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        check_finite(values.view())?;
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeDistance { row, col });
        }
        Ok(Self(values))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// `M(i,j) = ||F_i - F_j||²`, computed by direct differences so that the
/// result is symmetric and has an exact zero diagonal.
pub fn pairwise_squared_distances(features: &FeatureMatrix) -> DistanceMatrix {
    let f = features.view();
    let b = f.nrows();
    let mut m = Array2::zeros((b, b));
    for i in 0..b {
        let fi = f.row(i);
        for j in (i + 1)..b {
            let d: f64 = fi
                .iter()
                .zip(f.row(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            m[[i, j]] = d;
            m[[j, i]] = d;
        }
    }
    DistanceMatrix(m)
}
