//! Central-difference validation of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step, within `[1e-7, 1e-4]`.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error, so gradients that are zero
    /// up to round-off compare on an absolute scale.
    pub abs_floor: f64,
    /// Check only a seeded random subset of each input's elements.
    pub max_elements_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_elements_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<GradMismatch>,
    pub passed: bool,
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences, element by element.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&'a Tape, &[Var<'a>]) -> Result<Var<'a>>,
{
    if !(1e-7..=1e-4).contains(&opts.step) {
        return Err(Error::config(format!(
            "grad_check step {} outside [1e-7, 1e-4]",
            opts.step
        )));
    }

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let value = out.item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("grad_check: f = {value}")));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    drop(grads);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let v = f(&tape, &vars)?.item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("grad_check: perturbed f = {v}")));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        passed: true,
    };
    for (input, grad) in analytic.iter().enumerate() {
        let n = inputs[input].numel();
        let indices: Vec<usize> = match opts.max_elements_per_input {
            Some(k) if k < n => {
                let mut idx = sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        for index in indices {
            let orig = work[input].data()[index];
            work[input].data_mut()[index] = orig + opts.step;
            let plus = eval(&work)?;
            work[input].data_mut()[index] = orig - opts.step;
            let minus = eval(&work)?;
            work[input].data_mut()[index] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[index];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.abs_floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(GradMismatch {
                    input,
                    index,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let g = tape.backward(v.mul(v).unwrap().sum_all()).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[2.0, 4.0, 6.0]);

        let r = grad_check(|_, v| Ok(v[0].mul(v[0])?.sum_all()), &[x], &GradCheckOptions::default())
            .unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn rejects_step_out_of_range() {
        let opts = GradCheckOptions {
            step: 1e-3,
            ..Default::default()
        };
        let r = grad_check(|_, v| Ok(v[0].sum_all()), &[Tensor::ones(&[1])], &opts);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_value_is_diagnosed() {
        let r = grad_check(
            |_, v| Ok(v[0].ln().sum_all()),
            &[Tensor::full(&[2], -1.0)],
            &GradCheckOptions::default(),
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // clamp zeroes the gradient at the boundary, where the one-sided
        // slope is 1, so central differences disagree by half
        let r = grad_check(
            |_, v| Ok(v[0].clamp(-1.0, 1.0).sum_all()),
            &[Tensor::scalar(1.0)],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn subsampling_limits_checked_elements() {
        let opts = GradCheckOptions {
            max_elements_per_input: Some(4),
            ..Default::default()
        };
        let r = grad_check(|_, v| Ok(v[0].square().sum_all()), &[Tensor::ones(&[10])], &opts)
            .unwrap();
        assert_eq!(r.checked, 4);
    }
}
