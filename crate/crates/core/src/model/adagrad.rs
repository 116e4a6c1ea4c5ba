use super::ParamSet;
use crate::error::{Error, Result};

/// Adagrad: `acc += g²; θ -= η·g / (√acc + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub lr: f64,
    pub eps: f64,
    accumulators: Vec<Vec<f64>>,
}

impl AdagradState {
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(lr: f64) -> Result<Self> {
        Self::with_eps(lr, Self::DEFAULT_EPS)
    }

    pub fn with_eps(lr: f64, eps: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::config(format!("epsilon must be non-negative, got {eps}")));
        }
        Ok(Self {
            lr,
            eps,
            accumulators: Vec::new(),
        })
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    pub fn step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<()> {
        let grads = grads.slices();
        let mut params = params.slices_mut();
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter arrays vs {} gradient arrays",
                params.len(),
                grads.len()
            )));
        }
        for (idx, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch(format!(
                    "array {idx}: {} parameters vs {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.accumulators.is_empty() {
            self.accumulators = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self
            .accumulators
            .iter()
            .zip(&params)
            .any(|(a, p)| a.len() != p.len())
            || self.accumulators.len() != params.len()
        {
            return Err(Error::ShapeMismatch(
                "parameters do not match the optimizer state".into(),
            ));
        }
        for ((p, g), acc) in params.iter_mut().zip(&grads).zip(&mut self.accumulators) {
            for ((w, &dw), a) in p.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
                *a += dw * dw;
                *w -= self.lr * dw / (a.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<Vec<f64>>);

    impl ParamSet for Flat {
        fn slices(&self) -> Vec<&[f64]> {
            self.0.iter().map(Vec::as_slice).collect()
        }
        fn slices_mut(&mut self) -> Vec<&mut [f64]> {
            self.0.iter_mut().map(Vec::as_mut_slice).collect()
        }
    }

    #[test]
    fn first_step_is_about_lr_times_sign() {
        let mut opt = AdagradState::new(0.001).unwrap();
        let mut p = Flat(vec![vec![1.0, 1.0]]);
        opt.step(&mut p, &Flat(vec![vec![0.5, -3.0]])).unwrap();
        let d0 = p.0[0][0] - 1.0;
        let d1 = p.0[0][1] - 1.0;
        assert!((d0 + 0.001 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((d0 + 0.001).abs() < 1e-10);
        assert!((d1 - 0.001).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut opt = AdagradState::new(0.1).unwrap();
        let mut p = Flat(vec![vec![0.25, -2.0], vec![7.0]]);
        let before = p.0.clone();
        opt.step(&mut p, &Flat(vec![vec![0.0, 0.0], vec![0.0]])).unwrap();
        assert_eq!(p.0, before);
    }

    #[test]
    fn repeated_gradient_shrinks_updates() {
        let mut opt = AdagradState::new(0.01).unwrap();
        let mut p = Flat(vec![vec![0.0]]);
        let g = Flat(vec![vec![0.7]]);
        opt.step(&mut p, &g).unwrap();
        let first = p.0[0][0];
        let acc1 = opt.accumulators()[0][0];
        opt.step(&mut p, &g).unwrap();
        let second = p.0[0][0] - first;
        assert!(second.abs() < first.abs());
        assert!(opt.accumulators()[0][0] >= acc1);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut opt = AdagradState::new(0.01).unwrap();
        let mut p = Flat(vec![vec![0.0, 1.0]]);
        assert!(opt.step(&mut p, &Flat(vec![vec![0.0]])).is_err());
        assert!(opt.step(&mut p, &Flat(vec![vec![0.0, 1.0], vec![1.0]])).is_err());
        opt.step(&mut p, &Flat(vec![vec![0.0, 1.0]])).unwrap();
        let mut other = Flat(vec![vec![0.0, 1.0, 2.0]]);
        assert!(opt
            .step(&mut other, &Flat(vec![vec![0.0, 1.0, 2.0]]))
            .is_err());
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(AdagradState::new(0.0).is_err());
        assert!(AdagradState::new(-1.0).is_err());
    }
}
