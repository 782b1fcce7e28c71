//! Differentiable operations on [`Var`]. Each method computes its value
//! eagerly and records a backward rule on the owning tape.

mod conv;
mod linalg;
mod shape;

use std::sync::Arc;

use super::{broadcast_to, broadcast_zip, reduce_to_shape, Tensor, Var};
use crate::error::{Error, Result};

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    broadcast_zip(a, b, f)
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::shape("operands live on different tapes"));
        }
        Ok(())
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = broadcast_binary(&a, &b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape.push_op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to_shape(g, &sa)),
                need[1].then(|| reduce_to_shape(g, &sb)),
            ]
        }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = broadcast_binary(&a, &b, |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape.push_op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to_shape(g, &sa)),
                need[1].then(|| reduce_to_shape(g, &sb).map(|x| -x)),
            ]
        }))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = broadcast_binary(&a, &b, |x, y| x * y)?;
        Ok(self.tape.push_op(out, &[self, other], move |g, need| {
            let ga = need[0].then(|| {
                let full = broadcast_binary(g, &b, |x, y| x * y).expect("broadcast checked");
                reduce_to_shape(&full, a.shape())
            });
            let gb = need[1].then(|| {
                let full = broadcast_binary(g, &a, |x, y| x * y).expect("broadcast checked");
                reduce_to_shape(&full, b.shape())
            });
            vec![ga, gb]
        }))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = Arc::new(broadcast_binary(&a, &b, |x, y| x / y)?);
        let out_c = Arc::clone(&out);
        Ok(self.tape.push_op(out, &[self, other], move |g, need| {
            let ga = need[0].then(|| {
                let full = broadcast_binary(g, &b, |x, y| x / y).expect("broadcast checked");
                reduce_to_shape(&full, a.shape())
            });
            let gb = need[1].then(|| {
                let gq = broadcast_binary(g, &out_c, |x, q| x * q).expect("same shape");
                let full = broadcast_binary(&gq, &b, |x, y| -x / y).expect("broadcast checked");
                reduce_to_shape(&full, b.shape())
            });
            vec![ga, gb]
        }))
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative at input `x`
    /// with output `y`.
    fn unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y = Arc::new(x.map(f));
        let y_c = Arc::clone(&y);
        self.tape.push_op(y, &[self], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(y_c.data())
                .map(|((&gv, &xv), &yv)| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::new(g.shape(), data).expect("same shape"))]
        })
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(|x| 1.0 / x, |_, y| -y * y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    /// Clamps to `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape
            .push_op(Tensor::scalar(x.sum()), &[self], move |g, _| {
                vec![Some(Tensor::full(&shape, g.data()[0]))]
            })
    }

    pub fn sum_axes(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.rank();
        let mut keep_shape = x.shape().to_vec();
        for &a in axes {
            if a >= rank {
                return Err(Error::Axis { axis: a, rank });
            }
            keep_shape[a] = 1;
        }
        let out = reduce_to_shape(&x, &keep_shape).into_data();
        let out_shape: Vec<usize> = if keepdim {
            keep_shape.clone()
        } else {
            keep_shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let in_shape = x.shape().to_vec();
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.tape.push_op(out, &[self], move |g, _| {
            let kept = g.reshape(&keep_shape).expect("same numel");
            vec![Some(broadcast_to(&kept, &in_shape))]
        }))
    }

    pub fn mean_axes(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        let shape = self.shape();
        let mut count = 1usize;
        for &a in axes {
            count *= *shape.get(a).ok_or(Error::Axis {
                axis: a,
                rank: shape.len(),
            })?;
        }
        Ok(self.sum_axes(axes, keepdim)?.scale(1.0 / count as f64))
    }

    pub fn max_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.rank();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        let (outer, dim, inner) = super::split_at_axis(x.shape(), axis);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                for i in 0..inner {
                    let src = (o * dim + d) * inner + i;
                    let dst = o * inner + i;
                    if x.data()[src] > out[dst] || d == 0 {
                        out[dst] = x.data()[src];
                        arg[dst] = src;
                    }
                }
            }
        }
        let mut out_shape = x.shape().to_vec();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let in_shape = x.shape().to_vec();
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.tape.push_op(out, &[self], move |g, _| {
            let mut gi = Tensor::zeros(&in_shape);
            for (&src, &gv) in arg.iter().zip(g.data()) {
                gi.data_mut()[src] += gv;
            }
            vec![Some(gi)]
        }))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckOptions, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check<F>(inputs: Vec<Tensor>, f: F)
    where
        F: for<'a> Fn(&'a Tape, &[Var<'a>]) -> Result<Var<'a>>,
    {
        let report = grad_check(f, &inputs, &GradCheckOptions::default()).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn tanh_at_zero_and_its_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[4]));
        let y = x.tanh();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
        let g = tape.backward(y.sum_all()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn leaky_relu_slope_matches_central_difference() {
        let s = 0.01;
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        let y = x.leaky_relu(s);
        assert_eq!(y.item().unwrap(), -s);
        let g = tape.backward(y).unwrap().get(x).unwrap().item().unwrap();
        let h = 1e-6;
        let lr = |v: f64| if v >= 0.0 { v } else { s * v };
        let fd = (lr(-1.0 + h) - lr(-1.0 - h)) / (2.0 * h);
        assert!((g - fd).abs() < 1e-9);
        assert!((g - s).abs() < 1e-15);
    }

    #[test]
    fn sum_of_ones() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[3, 4]));
        assert_eq!(x.sum_all().item().unwrap(), 12.0);
        assert_eq!(x.sum_axes(&[0, 1], false).unwrap().item().unwrap(), 12.0);
    }

    #[test]
    fn broadcast_mismatch_is_shape_error() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[3, 2]));
        assert!(matches!(a.add(b), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[1, 3, 1], 1.0, &mut rng);
        let pos = Tensor::uniform(&[2, 3, 4], 0.5, 2.0, &mut rng);
        check(vec![a.clone(), b.clone()], |_, v| Ok(v[0].add(v[1])?.square().sum_all()));
        check(vec![a.clone(), b.clone()], |_, v| Ok(v[0].sub(v[1])?.square().sum_all()));
        check(vec![a.clone(), b.clone()], |_, v| Ok(v[0].mul(v[1])?.tanh().sum_all()));
        check(vec![a.clone(), pos.clone()], |_, v| Ok(v[0].div(v[1])?.sigmoid().sum_all()));
        check(vec![pos.clone()], |_, v| Ok(v[0].sqrt().ln().add_scalar(2.0).recip().exp().sum_all()));
        check(vec![a.clone()], |_, v| Ok(v[0].relu().add(v[0].leaky_relu(0.2))?.sum_all()));
        check(vec![a.clone()], |_, v| {
            Ok(v[0].scale(3.0).add_scalar(0.5).neg().clamp(-2.0, 2.0).square().sum_all())
        });
    }

    #[test]
    fn reduction_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        check(vec![a.clone()], |_, v| Ok(v[0].sum_axes(&[0, 2], true)?.square().sum_all()));
        check(vec![a.clone()], |_, v| Ok(v[0].mean_axes(&[1], false)?.square().sum_all()));
        check(vec![a.clone()], |_, v| Ok(v[0].max_axis(1, false)?.square().sum_all()));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(40.0), 1.0);
    }
}
