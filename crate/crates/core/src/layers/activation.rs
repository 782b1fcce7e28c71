use crate::error::Result;
use crate::tensor::CVar;

/// LeakyReLU on the real and imaginary planes independently.
pub fn split_leaky_relu<'t>(x: CVar<'t>, slope: f64) -> Result<CVar<'t>> {
    x.map_parts(|v| Ok(v.leaky_relu(slope)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, ComplexTensor, GradCheckOptions, Tape, Tensor};

    #[test]
    fn negative_parts_scale_by_slope() {
        let tape = Tape::no_grad();
        let x = ComplexTensor::new(Tensor::scalar(-1.0), Tensor::scalar(-1.0)).unwrap();
        let y = split_leaky_relu(CVar::constant(&tape, &x), 0.01).unwrap().value();
        assert_eq!((y.re.item().unwrap(), y.im.item().unwrap()), (-0.01, -0.01));

        let pos = ComplexTensor::new(
            Tensor::new(&[3], vec![0.0, 0.5, 2.0]).unwrap(),
            Tensor::new(&[3], vec![1.0, 0.0, 3.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(split_leaky_relu(CVar::constant(&tape, &pos), 0.01).unwrap().value(), pos);
    }

    #[test]
    fn gradient_at_negative_inputs() {
        let x = Tensor::new(&[3], vec![-1.0, -0.3, -2.0]).unwrap();
        let r = grad_check(
            |_, v| {
                let y = split_leaky_relu(CVar::new(v[0], v[1])?, 0.01)?;
                Ok(y.re.add(y.im.scale(2.0))?.sum_all())
            },
            &[x.clone(), x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
