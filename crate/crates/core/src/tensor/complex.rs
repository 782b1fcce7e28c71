use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Complex tensor stored as two real planes of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape(format!(
                "complex planes differ: {:?} vs {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn numel(&self) -> usize {
        self.re.numel()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            re: self.re.narrow(axis, start, len)?,
            im: self.im.narrow(axis, start, len)?,
        })
    }

    pub fn concat(parts: &[&ComplexTensor], axis: usize) -> Result<Self> {
        let re: Vec<&Tensor> = parts.iter().map(|p| &p.re).collect();
        let im: Vec<&Tensor> = parts.iter().map(|p| &p.im).collect();
        Ok(Self {
            re: Tensor::concat(&re, axis)?,
            im: Tensor::concat(&im, axis)?,
        })
    }

    /// Elementwise complex product.
    pub fn mul(&self, other: &ComplexTensor) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "complex multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = self.numel();
        let (mut re, mut im) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let (ar, ai) = (self.re.data()[i], self.im.data()[i]);
            let (br, bi) = (other.re.data()[i], other.im.data()[i]);
            re.push(ar * br - ai * bi);
            im.push(ar * bi + ai * br);
        }
        Ok(Self {
            re: Tensor::new(self.shape(), re)?,
            im: Tensor::new(self.shape(), im)?,
        })
    }

    pub fn max_abs_diff(&self, other: &ComplexTensor) -> Result<f64> {
        Ok(self
            .re
            .max_abs_diff(&other.re)?
            .max(self.im.max_abs_diff(&other.im)?))
    }

    /// Largest `max(|re|, |im|)` over all elements.
    pub fn max_part_abs(&self) -> f64 {
        self.re.max_abs().max(self.im.max_abs())
    }
}

/// A complex value on a tape: a pair of real [`Var`]s.
#[derive(Clone, Copy, Debug)]
pub struct CVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> CVar<'t> {
    pub fn new(re: Var<'t>, im: Var<'t>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape(format!(
                "complex planes differ: {:?} vs {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn constant(tape: &'t Tape, value: &ComplexTensor) -> Self {
        Self {
            re: tape.constant(value.re.clone()),
            im: tape.constant(value.im.clone()),
        }
    }

    pub fn leaf(tape: &'t Tape, value: ComplexTensor) -> Self {
        Self {
            re: tape.leaf(value.re),
            im: tape.leaf(value.im),
        }
    }

    pub fn value(&self) -> ComplexTensor {
        ComplexTensor {
            re: self.re.value().as_ref().clone(),
            im: self.im.value().as_ref().clone(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    /// Applies the same real operation to both planes.
    pub fn map_parts(self, f: impl Fn(Var<'t>) -> Result<Var<'t>>) -> Result<Self> {
        Ok(Self {
            re: f(self.re)?,
            im: f(self.im)?,
        })
    }

    pub fn add(self, other: CVar<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.add(other.re)?,
            im: self.im.add(other.im)?,
        })
    }

    pub fn sub(self, other: CVar<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.sub(other.re)?,
            im: self.im.sub(other.im)?,
        })
    }

    /// `(a_r b_r - a_i b_i) + j (a_r b_i + a_i b_r)`, with broadcasting.
    pub fn cmul(self, other: CVar<'t>) -> Result<Self> {
        let re = self.re.mul(other.re)?.sub(self.im.mul(other.im)?)?;
        let im = self.re.mul(other.im)?.add(self.im.mul(other.re)?)?;
        Ok(Self { re, im })
    }

    /// Scales both planes by the same real factor (broadcasting).
    pub fn mul_real(self, gain: Var<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.mul(gain)?,
            im: self.im.mul(gain)?,
        })
    }

    pub fn concat(parts: &[CVar<'t>], axis: usize) -> Result<Self> {
        let re: Vec<Var<'t>> = parts.iter().map(|p| p.re).collect();
        let im: Vec<Var<'t>> = parts.iter().map(|p| p.im).collect();
        Ok(Self {
            re: Var::concat(&re, axis)?,
            im: Var::concat(&im, axis)?,
        })
    }

    /// `sqrt(re^2 + im^2 + floor)`; the floor keeps the gradient finite at 0.
    pub fn magnitude(self, floor: f64) -> Result<Var<'t>> {
        Ok(self
            .re
            .square()
            .add(self.im.square())?
            .add_scalar(floor)
            .sqrt())
    }
}
