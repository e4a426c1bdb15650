//! RMSprop with per-tensor accumulators.

use ndarray::ArrayD;

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Default squared-gradient decay.
pub const RMSPROP_RHO: f64 = 0.99;
/// Default denominator stabilizer.
pub const RMSPROP_EPS: f64 = 1e-8;

/// `s <- rho s + (1 - rho) g^2;  p <- p - lr g / (sqrt(s) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    state: Vec<ArrayD<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, params: &ParamStore) -> Self {
        let state = params.iter().map(|(_, t)| ArrayD::zeros(t.raw_dim())).collect();
        RmsProp { lr, rho: RMSPROP_RHO, eps: RMSPROP_EPS, state }
    }

    /// Apply one update. `grads[i]` pairs with tensor `i` of `params`;
    /// a non-finite gradient aborts, naming the offending tensor.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[ArrayD<f64>]) -> Result<()> {
        debug_assert_eq!(grads.len(), params.len());
        for (idx, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter '{}'",
                    params.name(idx)
                )));
            }
        }
        for (idx, g) in grads.iter().enumerate() {
            let s = &mut self.state[idx];
            let p = params.tensor_mut(idx);
            ndarray::Zip::from(p).and(s).and(g).for_each(|pv, sv, &gv| {
                *sv = self.rho * *sv + (1.0 - self.rho) * gv * gv;
                *pv -= self.lr * gv / (sv.sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn scalar_store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("p", arr1(&[v]).into_dyn());
        p
    }

    #[test]
    fn zero_gradient_is_fixed_point_with_state_decay() {
        let mut params = scalar_store(1.5);
        let mut opt = RmsProp::new(1e-3, &params);
        opt.state[0][[0]] = 0.08;
        opt.step(&mut params, &[arr1(&[0.0]).into_dyn()]).unwrap();
        assert_eq!(params.get("p")[[0]], 1.5);
        assert!((opt.state[0][[0]] - 0.08 * RMSPROP_RHO).abs() < 1e-15);
    }

    #[test]
    fn one_step_hand_oracle() {
        // p = 1, g = 2, fresh state: s = 0.04, p = 1 - 1e-3*2/(0.2 + 1e-8)
        let mut params = scalar_store(1.0);
        let mut opt = RmsProp::new(1e-3, &params);
        opt.step(&mut params, &[arr1(&[2.0]).into_dyn()]).unwrap();
        assert!((opt.state[0][[0]] - 0.04).abs() < 1e-15);
        assert!((params.get("p")[[0]] - 0.9900000004999999).abs() < 1e-12);
    }

    #[test]
    fn two_steps_match_reference_recursion() {
        // frozen from an independent two-step evaluation with constant g = 2
        let mut params = scalar_store(1.0);
        let mut opt = RmsProp::new(1e-3, &params);
        let g = arr1(&[2.0]).into_dyn();
        opt.step(&mut params, &[g.clone()]).unwrap();
        opt.step(&mut params, &[g]).unwrap();
        assert!((opt.state[0][[0]] - 0.0796).abs() < 1e-12);
        assert!((params.get("p")[[0]] - 0.9829111887011729).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts_with_name() {
        let mut params = scalar_store(1.0);
        let mut opt = RmsProp::new(1e-3, &params);
        let err = opt.step(&mut params, &[arr1(&[f64::NAN]).into_dyn()]).unwrap_err();
        assert!(err.to_string().contains("'p'"));
    }
}
