//! Dense double-precision tensors and the reverse-mode tape that
//! differentiates through them.
//!
//! Complex data is never interleaved: a complex tensor is a pair of real
//! tensors (see [`ComplexTensor`] and [`CVar`]), so every complex operation
//! in the model is literally a composition of real operations on the tape.

mod checkpoint;
mod complex;
mod gemm;
mod gradcheck;
mod ops;
mod tape;

pub use checkpoint::{Container, DType, Entry, CONTAINER_VERSION};
pub use complex::{CVar, ComplexTensor};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

pub(crate) use gemm::gemm;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[linear_index(&self.shape, index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = linear_index(&self.shape, index);
        self.data[i] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "max_abs_diff between {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add_assign between {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        check_permutation(axes, self.rank())?;
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides(&self.shape);
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        for_each_offset(&out_shape, &perm_strides, |off| data.push(self.data[off]));
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::Axis {
                axis,
                rank: self.rank(),
            });
        }
        if start + len > self.shape[axis] {
            return Err(Error::shape(format!(
                "narrow [{}, {}) out of range for axis {} of {:?}",
                start,
                start + len,
                axis,
                self.shape
            )));
        }
        let (outer, dim, inner) = split_at_axis(&self.shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        if axis >= first.rank() {
            return Err(Error::Axis {
                axis,
                rank: first.rank(),
            });
        }
        for p in parts {
            let same = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(Error::shape(format!(
                    "concat along axis {}: {:?} vs {:?}",
                    axis, p.shape, first.shape
                )));
            }
        }
        let (outer, _, inner) = split_at_axis(&first.shape, axis);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn linear_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank mismatch");
    let st = strides(shape);
    index
        .iter()
        .zip(shape)
        .zip(&st)
        .map(|((&i, &d), &s)| {
            assert!(i < d, "index {i} out of bounds for dim {d}");
            i * s
        })
        .sum()
}

/// `(prod(shape[..axis]), shape[axis], prod(shape[axis+1..]))`
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_permutation(axes: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(Error::shape(format!(
            "permutation {:?} for rank {}",
            axes, rank
        )));
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(Error::shape(format!(
                "invalid permutation {:?} for rank {}",
                axes, rank
            )));
        }
        seen[a] = true;
    }
    Ok(())
}

/// Visits, in row-major order over `shape`, the offset `sum(idx[i] * strides[i])`.
pub(crate) fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0);
        return;
    }
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        let s = strides[last];
        for j in 0..shape[last] {
            f(base + j * s);
        }
        // carry into the outer axes
        let mut ax = last;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            base -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// Result shape of broadcasting `a` against `b`. Shapes are aligned on the
/// right; missing leading axes and size-1 axes stretch. Anything else is a
/// shape error.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!(
                    "cannot broadcast {:?} with {:?}",
                    a, b
                )))
            }
        };
    }
    Ok(out)
}

/// Strides that read a tensor of `in_shape` as if it had `out_shape`
/// (zero stride on broadcast axes).
pub(crate) fn broadcast_strides(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let in_st = strides(in_shape);
    let mut st = vec![0; rank];
    for i in 0..in_shape.len() {
        let o = rank - in_shape.len() + i;
        if in_shape[i] != 1 {
            st[o] = in_st[i];
        }
    }
    st
}

/// Drops size-1 axes and merges neighbours that are contiguous in every
/// stride set, so the innermost run is as long as possible.
fn collapse<const N: usize>(shape: &[usize], st: [&[usize]; N]) -> (Vec<usize>, [Vec<usize>; N]) {
    let mut out_shape: Vec<usize> = Vec::with_capacity(shape.len());
    let mut out_st: [Vec<usize>; N] = std::array::from_fn(|_| Vec::with_capacity(shape.len()));
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 {
            continue;
        }
        let mergeable = out_shape.last().is_some() && (0..N).all(|k| *out_st[k].last().unwrap() == st[k][ax] * d);
        if mergeable {
            *out_shape.last_mut().unwrap() *= d;
            for k in 0..N {
                *out_st[k].last_mut().unwrap() = st[k][ax];
            }
        } else {
            out_shape.push(d);
            for k in 0..N {
                out_st[k].push(st[k][ax]);
            }
        }
    }
    (out_shape, out_st)
}

/// Walks `shape` in row-major order with `N` stride sets and calls
/// `f(bases, len, steps)` once per innermost run: element `j` of the run sits
/// at `bases[k] + j * steps[k]` in operand `k`.
pub(crate) fn for_each_run<const N: usize>(
    shape: &[usize],
    st: [&[usize]; N],
    mut f: impl FnMut([usize; N], usize, [usize; N]),
) {
    if shape.iter().any(|&d| d == 0) {
        return;
    }
    let (shape, st) = collapse(shape, st);
    let Some(last) = shape.len().checked_sub(1) else {
        f([0; N], 1, [0; N]);
        return;
    };
    let steps: [usize; N] = std::array::from_fn(|k| st[k][last]);
    let mut idx = vec![0usize; last];
    let mut base = [0usize; N];
    loop {
        f(base, shape[last], steps);
        let mut ax = last;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            for k in 0..N {
                base[k] += st[k][ax];
            }
            if idx[ax] < shape[ax] {
                break;
            }
            for k in 0..N {
                base[k] -= st[k][ax] * shape[ax];
            }
            idx[ax] = 0;
        }
    }
}

/// Elementwise `f(a, b)` over the broadcast of both shapes.
pub(crate) fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(&a.shape, &b.shape)?;
    let (sa, sb) = (broadcast_strides(&shape, &a.shape), broadcast_strides(&shape, &b.shape));
    let mut data = Vec::with_capacity(shape.iter().product());
    let (ad, bd) = (&a.data, &b.data);
    for_each_run(&shape, [&sa, &sb], |[ia, ib], len, [da, db]| match (da, db) {
        (1, 1) => data.extend(ad[ia..ia + len].iter().zip(&bd[ib..ib + len]).map(|(&x, &y)| f(x, y))),
        (1, 0) => {
            let y = bd[ib];
            data.extend(ad[ia..ia + len].iter().map(|&x| f(x, y)));
        }
        (0, 1) => {
            let x = ad[ia];
            data.extend(bd[ib..ib + len].iter().map(|&y| f(x, y)));
        }
        _ => data.extend((0..len).map(|j| f(ad[ia + j * da], bd[ib + j * db]))),
    });
    Tensor::new(&shape, data)
}

/// Repeats `t` along its size-1 (or missing leading) axes to `shape`.
pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    let st = broadcast_strides(shape, &t.shape);
    let mut data = Vec::with_capacity(shape.iter().product());
    for_each_run(shape, [&st], |[i], len, [d]| match d {
        0 => data.extend(std::iter::repeat(t.data[i]).take(len)),
        1 => data.extend_from_slice(&t.data[i..i + len]),
        _ => data.extend((0..len).map(|j| t.data[i + j * d])),
    });
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Sums a tensor of `from_shape` down to the broadcast source shape `to_shape`.
pub(crate) fn reduce_to_shape(g: &Tensor, to_shape: &[usize]) -> Tensor {
    if g.shape == to_shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(to_shape);
    if out.numel() == 1 {
        out.data[0] = g.sum();
        return out;
    }
    let sg = strides(&g.shape);
    let so = broadcast_strides(&g.shape, to_shape);
    let od = &mut out.data;
    for_each_run(&g.shape, [&sg, &so], |[ig, io], len, [dg, d]| {
        let src = (0..len).map(|j| g.data[ig + j * dg]);
        match d {
            0 => od[io] += src.sum::<f64>(),
            _ => {
                for (j, v) in src.enumerate() {
                    od[io + j * d] += v;
                }
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_moves_axes() {
        let t = Tensor::new(&[2, 3, 4], (0..24).map(|x| x as f64).collect()).unwrap();
        let p = t.permute(&[1, 2, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 4, 2]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(p.get(&[j, k, i]), t.get(&[i, j, k]));
                }
            }
        }
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[1, 5, 1, 1], &[2, 5, 3, 7]).unwrap(), vec![2, 5, 3, 7]);
        assert!(broadcast_shape(&[2, 3], &[3, 2]).is_err());
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g = Tensor::ones(&[2, 3, 4]);
        let r = reduce_to_shape(&g, &[3, 1]);
        assert_eq!(r.shape(), &[3, 1]);
        assert!(r.data().iter().all(|&x| x == 8.0));
    }

    #[test]
    fn narrow_and_concat_invert() {
        let t = Tensor::new(&[2, 5, 3], (0..30).map(|x| x as f64).collect()).unwrap();
        let a = t.narrow(1, 0, 2).unwrap();
        let b = t.narrow(1, 2, 3).unwrap();
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap(), t);
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }
}
