use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};

use super::{Embed, ParamSet};
use crate::error::{Error, Result};
use crate::features::{normalize_rows, FeatureMatrix};
use crate::seed;

/// Fully connected layer, `z = a·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Dense embedder `n → h₁ → … → d` with tanh between layers and an
/// L2-normalized linear output.
///
/// Every mutable borrow of the parameters bumps an internal version so a
/// [`ForwardCache`] taken before an update is rejected by `backward`.
#[derive(Debug, Clone)]
pub struct EmbedderParams {
    layers: Vec<Dense>,
    version: u64,
}

impl PartialEq for EmbedderParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Layer inputs: the batch itself, then each hidden activation.
    activations: Vec<Array2<f64>>,
    norms: Array1<f64>,
    features: Array2<f64>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }
}

/// Gradients with the same layout as [`EmbedderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderGrads {
    pub layers: Vec<Dense>,
}

impl EmbedderParams {
    /// He-style fan-in initialization: `W ~ N(0, 2/fan_in)`, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut rng = seed::rng(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || normal.sample(&mut rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("embedder needs at least one layer"));
        }
        for (idx, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {idx}: bias length {} vs {} outputs",
                    l.bias.len(),
                    l.fan_out()
                )));
            }
            crate::features::check_finite(l.weights.view())?;
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("layer {idx}: non-finite bias")));
            }
        }
        for (idx, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {idx} emits {} values but layer {} expects {}",
                    w[0].fan_out(),
                    idx + 1,
                    w[1].fan_in()
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// `[n, h₁, …, d]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn pre_normalization(&self, inputs: ArrayView2<'_, f64>) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: inputs.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut activations = vec![inputs.to_owned()];
        for layer in &self.layers[..last] {
            let mut z = activations.last().expect("non-empty").dot(&layer.weights);
            z += &layer.bias;
            z.mapv_inplace(f64::tanh);
            activations.push(z);
        }
        let mut out = activations.last().expect("non-empty").dot(&self.layers[last].weights);
        out += &self.layers[last].bias;
        Ok((activations, out))
    }

    /// Forward pass keeping what `backward` needs.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<(FeatureMatrix, ForwardCache)> {
        let (activations, out) = self.pre_normalization(inputs)?;
        let (features, norms) = normalize_rows(out.view())?;
        let cache = ForwardCache {
            version: self.version,
            activations,
            norms,
            features: features.clone(),
        };
        Ok((FeatureMatrix::new_unchecked(features), cache))
    }

    /// Backpropagate `grad_features` (∂L/∂F, one row per batch element)
    /// through the normalization and every layer.
    pub fn backward(&self, cache: &ForwardCache, grad_features: ArrayView2<'_, f64>) -> Result<EmbedderGrads> {
        if cache.version != self.version
            || cache.activations.len() != self.layers.len()
            || cache
                .activations
                .iter()
                .zip(&self.layers)
                .any(|(a, l)| a.ncols() != l.fan_in())
        {
            return Err(Error::StaleCache);
        }
        if grad_features.dim() != cache.features.dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature gradient is {:?}, forward output was {:?}",
                grad_features.dim(),
                cache.features.dim()
            )));
        }
        // Normalization Jacobian: dz = (g - f (f·g)) / ||z||.
        let f = &cache.features;
        let radial = (f * &grad_features).sum_axis(Axis(1));
        let mut dz = &grad_features - &(f * &radial.insert_axis(Axis(1)));
        dz /= &cache.norms.view().insert_axis(Axis(1));

        let mut grads = vec![Dense::zeros(0, 0); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let a = &cache.activations[l];
            grads[l] = Dense {
                weights: a.t().dot(&dz),
                bias: dz.sum_axis(Axis(0)),
            };
            if l > 0 {
                let mut da = dz.dot(&self.layers[l].weights.t());
                da.zip_mut_with(a, |g, &act| *g *= 1.0 - act * act);
                dz = da;
            }
        }
        Ok(EmbedderGrads { layers: grads })
    }
}

impl Embed for EmbedderParams {
    fn embed(&self, inputs: ArrayView2<'_, f64>) -> Result<FeatureMatrix> {
        let (_, out) = self.pre_normalization(inputs)?;
        let (features, _) = normalize_rows(out.view())?;
        Ok(FeatureMatrix::new_unchecked(features))
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::config(format!(
            "embedder sizes must list at least input and output width, all positive; got {sizes:?}"
        )));
    }
    Ok(())
}

fn dense_slices(layers: &[Dense]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| {
            [
                l.weights.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

fn dense_slices_mut(layers: &mut [Dense]) -> Vec<&mut [f64]> {
    layers
        .iter_mut()
        .flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
        .collect()
}

impl ParamSet for EmbedderParams {
    fn slices(&self) -> Vec<&[f64]> {
        dense_slices(&self.layers)
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        dense_slices_mut(&mut self.layers)
    }
}

impl ParamSet for EmbedderGrads {
    fn slices(&self) -> Vec<&[f64]> {
        dense_slices(&self.layers)
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        dense_slices_mut(&mut self.layers)
    }
}
