use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::LabeledDataset;
use crate::seed;

/// Gaussian identity clusters living in a low-dimensional subspace of the
/// ambient space, blurred by a shared nuisance subspace and isotropic noise,
/// and optionally bent by a fixed smooth warp.
///
/// Sample `x = U (c + σ ε) + σ ν V ζ + σ ρ η`, then `x ← x + w · tanh(R x)`
/// when a warp strength `w` is set. `U` (`n × m`) and `V` (`n × q`) are
/// mutually orthogonal orthonormal bases, `c ~ N(0, s² I)` the identity
/// center, and `ε`, `ζ`, `η` standard normal. The nuisance directions `V`
/// are shared by every identity (think pose or lighting), so a model can
/// learn to suppress them on training identities and carry that over to
/// unseen ones. Noise draws do not depend on `σ`, so datasets that differ
/// only in `σ` share every random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub samples_per_identity: usize,
    /// Ambient dimension `n`.
    pub dim: usize,
    /// Dimension `m` of the identity subspace.
    pub latent_dim: usize,
    /// Scale `s` of the identity centers.
    pub separation: f64,
    /// Within-identity noise `σ`.
    pub sigma: f64,
    /// Dimension `q` of the shared nuisance subspace.
    pub nuisance_dim: usize,
    /// Nuisance spread `ν` as a multiple of `σ`.
    pub nuisance_ratio: f64,
    /// Isotropic noise `ρ` as a multiple of `σ`.
    pub ambient_ratio: f64,
    pub warp: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 40,
            samples_per_identity: 100,
            dim: 32,
            latent_dim: 8,
            separation: 1.0,
            sigma: 0.35,
            nuisance_dim: 8,
            nuisance_ratio: 5.0,
            ambient_ratio: 0.2,
            warp: Some(1.0),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic spec: {m}")));
        if self.identities == 0 || self.samples_per_identity == 0 {
            return bad("need at least one identity and one sample per identity");
        }
        if self.latent_dim == 0 || self.latent_dim + self.nuisance_dim > self.dim {
            return bad("need 1 <= latent_dim and latent_dim + nuisance_dim <= dim");
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return bad("separation must be positive");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("sigma must be non-negative");
        }
        if !(self.ambient_ratio.is_finite() && self.ambient_ratio >= 0.0) {
            return bad("ambient_ratio must be non-negative");
        }
        if !(self.nuisance_ratio.is_finite() && self.nuisance_ratio >= 0.0) {
            return bad("nuisance_ratio must be non-negative");
        }
        if self.warp.is_some_and(|w| !w.is_finite()) {
            return bad("warp strength must be finite");
        }
        Ok(())
    }
}

fn normal_matrix(rng: &mut seed::Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * { let z: f64 = StandardNormal.sample(rng); z })
}

/// Orthonormal columns by Gram-Schmidt.
fn orthonormal_basis(rng: &mut seed::Rng, n: usize, m: usize) -> Array2<f64> {
    loop {
        let mut q = normal_matrix(rng, n, m, 1.0);
        let mut ok = true;
        for c in 0..m {
            for prev in 0..c {
                let proj = q.column(c).dot(&q.column(prev));
                let p = q.column(prev).to_owned();
                q.column_mut(c).scaled_add(-proj, &p);
            }
            let norm = q.column(c).dot(&q.column(c)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(c).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, "data"));
    let (n, m, q) = (spec.dim, spec.latent_dim, spec.nuisance_dim);
    let full = orthonormal_basis(&mut rng, n, m + q);
    let basis = full.slice(ndarray::s![.., ..m]);
    let nuisance = full.slice(ndarray::s![.., m..]);
    let warp = normal_matrix(&mut rng, n, n, (1.0 / n as f64).sqrt());
    let centers = normal_matrix(&mut rng, spec.identities, m, spec.separation);

    let total = spec.identities * spec.samples_per_identity;
    let mut inputs = Array2::zeros((total, n));
    let mut labels = Vec::with_capacity(total);
    for id in 0..spec.identities {
        for s in 0..spec.samples_per_identity {
            let row = id * spec.samples_per_identity + s;
            let eps: Array1<f64> = (0..m).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).collect();
            let zeta: Array1<f64> = (0..q).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).collect();
            let eta: Array1<f64> = (0..n).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).collect();
            let latent = &centers.row(id) + &(eps * spec.sigma);
            let mut x = basis.dot(&latent)
                + nuisance.dot(&zeta) * (spec.sigma * spec.nuisance_ratio)
                + eta * (spec.sigma * spec.ambient_ratio);
            if let Some(w) = spec.warp {
                let bend = warp.dot(&x).mapv(f64::tanh);
                x.scaled_add(w, &bend);
            }
            inputs.row_mut(row).assign(&x);
            labels.push(id);
        }
    }
    let names = (0..spec.identities).map(|i| format!("id{i:04}")).collect();
    LabeledDataset::new(inputs, labels, names)
}
