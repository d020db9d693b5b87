use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::params::Parameters;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moments laid out like the parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Parameters<T> + ?Sized>(params: &P) -> Self {
        let shapes: Vec<Vec<T>> = params.tensors("").iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Self { step: 0, m: shapes.clone(), v: shapes }
    }

    fn check<P: Parameters<T> + ?Sized>(&self, p: &P) -> Result<(), OptimError> {
        let t = p.tensors("");
        if t.len() != self.m.len() || t.iter().zip(&self.m).any(|(a, b)| a.data.len() != b.len()) {
            return Err(OptimError::ShapeMismatch("Adam moments do not match parameters".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over every tensor (dense; untouched
/// entries still see their moments decay).
pub fn adam_step<T: Real, P: Parameters<T> + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    state.check(params)?;
    state.check(grads)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    // fold both bias corrections into the step size and epsilon
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let step_size = T::lit(lr * bc2.sqrt() / bc1);
    let eps = T::lit(cfg.eps * bc2.sqrt());
    let grads = grads.tensors("");
    for (((p, g), m), v) in params.tensors_mut("").into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            let mi = b1 * m[i] + c1 * gi;
            let vi = b2 * v[i] + c2 * gi * gi;
            m[i] = mi;
            v[i] = vi;
            p.data[i] -= step_size * mi / (vi.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Tensor, TensorClass, TensorMut};

    struct Flat(Vec<f64>);

    impl Parameters<f64> for Flat {
        fn tensors(&self, _: &str) -> Vec<Tensor<'_, f64>> {
            vec![Tensor { name: "w".into(), class: TensorClass::DensityWeight, data: &self.0 }]
        }
        fn tensors_mut(&mut self, _: &str) -> Vec<TensorMut<'_, f64>> {
            vec![TensorMut { name: "w".into(), class: TensorClass::DensityWeight, data: &mut self.0 }]
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Flat(vec![0.5, -1.0]);
        let g = Flat(vec![0.0, 0.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p.0, vec![0.5, -1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Flat(vec![0.0; 2]);
        let mut s = AdamState::new(&Flat(vec![0.0; 3]));
        assert!(adam_step(&mut p, &Flat(vec![0.0; 2]), &mut s, 1e-3, &AdamConfig::default()).is_err());
    }
}
