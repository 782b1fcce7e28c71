use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Bias-corrected Adam over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros: Vec<Tensor> = store
            .param_ids()
            .map(|id| Tensor::zeros(store.param(id).shape()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with `grads` in parameter order. A non-finite gradient
    /// rejects the whole step and leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        let ids: Vec<_> = store.param_ids().collect();
        for (id, g) in ids.iter().zip(grads) {
            if g.shape() != store.param(*id).shape() {
                return Err(Error::shape(format!("adam: gradient shape mismatch for {}", store.param_name(*id))));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {}; step rejected",
                    store.param_name(*id)
                )));
            }
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.param_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm` and returns
/// the norm before scaling. `max_norm <= 0` disables clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add_param("p", Tensor::new(&[1], vec![p]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m^ = g and v^ = g^2 after one step, so the update is lr * g / (|g| + eps)
        for g in [0.3, -2.0, 1e-3] {
            let mut s = scalar_store(1.0);
            let mut adam = Adam::new(&s);
            adam.step(&mut s, &[Tensor::new(&[1], vec![g]).unwrap()], 1e-3).unwrap();
            let want = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            let got = s.param(s.find_param("p").unwrap()).data()[0];
            assert!((got - want).abs() < 1e-15, "{g}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(&s);
        for _ in 0..3 {
            adam.step(&mut s, &[Tensor::zeros(&[1])], 1e-2).unwrap();
        }
        assert_eq!(adam.steps(), 3);
        assert_eq!(s.param(s.find_param("p").unwrap()).data()[0], 0.7);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(&s);
        let err = adam.step(&mut s, &[Tensor::new(&[1], vec![f64::NAN]).unwrap()], 1e-2);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(adam.steps(), 0);
        assert_eq!(s.param(s.find_param("p").unwrap()).data()[0], 0.7);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut s = scalar_store(0.2);
            let mut adam = Adam::new(&s);
            for k in 0..50 {
                let p = s.param(s.find_param("p").unwrap()).data()[0];
                let g = 2.0 * (p - 1.0) + (k as f64 * 0.37).sin() * 0.1;
                adam.step(&mut s, &[Tensor::new(&[1], vec![g]).unwrap()], 0.05).unwrap();
            }
            s.param(s.find_param("p").unwrap()).data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0, 4.0]).unwrap(), Tensor::new(&[1], vec![12.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 5.0), 13.0);
        let after = g.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-12);
        let mut h = g.clone();
        clip_global_norm(&mut h, 0.0);
        assert_eq!(h, g);
    }
}
