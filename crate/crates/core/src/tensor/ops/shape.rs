use crate::error::{Error, Result};
use crate::tensor::{check_permutation, split_at_axis, Tensor, Var};

impl<'t> Var<'t> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.tape.push_op(out, &[self], move |g, _| {
            vec![Some(g.reshape(&in_shape).expect("numel preserved"))]
        }))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        check_permutation(axes, x.rank())?;
        let out = x.permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.tape.push_op(out, &[self], move |g, _| {
            vec![Some(g.permute(&inverse).expect("valid permutation"))]
        }))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        for p in parts {
            first.same_tape(p)?;
        }
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat(&refs, axis)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(first.tape.push_op(out, parts, move |g, need| {
            let mut start = 0;
            sizes
                .iter()
                .zip(need)
                .map(|(&len, &n)| {
                    let piece = n.then(|| g.narrow(axis, start, len).expect("in range"));
                    start += len;
                    piece
                })
                .collect()
        }))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.narrow(axis, start, len)?;
        let dim = x.shape()[axis];
        Ok(self.tape.push_op(out, &[self], move |g, _| {
            vec![Some(pad_tensor(g, axis, start, dim - start - len))]
        }))
    }

    /// Zero padding of `before`/`after` entries along `axis`.
    pub fn pad(self, axis: usize, before: usize, after: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::Axis {
                axis,
                rank: x.rank(),
            });
        }
        let out = pad_tensor(&x, axis, before, after);
        let len = x.shape()[axis];
        Ok(self.tape.push_op(out, &[self], move |g, _| {
            vec![Some(g.narrow(axis, before, len).expect("in range"))]
        }))
    }
}

pub(crate) fn pad_tensor(x: &Tensor, axis: usize, before: usize, after: usize) -> Tensor {
    if before == 0 && after == 0 {
        return x.clone();
    }
    let (outer, dim, inner) = split_at_axis(x.shape(), axis);
    let new_dim = dim + before + after;
    let mut data = vec![0.0; outer * new_dim * inner];
    for o in 0..outer {
        let src = &x.data()[o * dim * inner..(o + 1) * dim * inner];
        let dst = (o * new_dim + before) * inner;
        data[dst..dst + dim * inner].copy_from_slice(src);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = new_dim;
    Tensor::new(&shape, data).expect("consistent shape")
}
