use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, Var};

impl<'t> Var<'t> {
    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false)
    }

    /// `[m, k] x [n, k]^T -> [m, n]`, the layout of a dense layer weight.
    pub fn matmul_bt(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'t>, b_trans: bool) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul expects matrices, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (kb, n) = if b_trans {
            (b.shape()[1], b.shape()[0])
        } else {
            (b.shape()[0], b.shape()[1])
        };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul inner dims differ: {:?} x {:?}{}",
                a.shape(),
                b.shape(),
                if b_trans { "^T" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), b_trans, &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.tape.push_op(out, &[self, other], move |g, need| {
            let ga = need[0].then(|| {
                // dA = dC * op(B)^T
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, b.data(), !b_trans, &mut d, false);
                Tensor::new(&[m, k], d).expect("shape")
            });
            let gb = need[1].then(|| {
                if b_trans {
                    // B is [n, k]: dB = dC^T * A
                    let mut d = vec![0.0; n * k];
                    gemm(n, m, k, g.data(), true, a.data(), false, &mut d, false);
                    Tensor::new(&[n, k], d).expect("shape")
                } else {
                    // B is [k, n]: dB = A^T * dC
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g.data(), false, &mut d, false);
                    Tensor::new(&[k, n], d).expect("shape")
                }
            });
            vec![ga, gb]
        }))
    }

    /// Finite-order memory taps along axis 1 of a padded sequence batch.
    ///
    /// `self` is `[n, lookback + len + lookahead, d]`, already padded with
    /// the context that precedes and follows the `len` positions of interest.
    /// `back` is `[lookback + 1, d]` and `ahead` is `[lookahead, d]`. The
    /// output `[n, len, d]` at position `i` is
    /// `sum_tau back[tau] * p[i - tau] + sum_kappa ahead[kappa - 1] * p[i + kappa]`
    /// with elementwise products, where `p[i]` is padded row `i + lookback`.
    pub fn memory_taps(self, back: Var<'t>, ahead: Option<Var<'t>>) -> Result<Var<'t>> {
        self.same_tape(&back)?;
        let p = self.value();
        let a = back.value();
        let c = match ahead {
            Some(v) => {
                self.same_tape(&v)?;
                Some(v.value())
            }
            None => None,
        };
        if p.rank() != 3 || a.rank() != 2 || a.shape()[1] != p.shape()[2] {
            return Err(Error::shape(format!(
                "memory_taps: sequence {:?}, look-back coefficients {:?}",
                p.shape(),
                a.shape()
            )));
        }
        let (n, padded, d) = (p.shape()[0], p.shape()[1], p.shape()[2]);
        let lookback = a.shape()[0] - 1;
        let lookahead = match &c {
            Some(c) if c.rank() == 2 && c.shape()[1] == d => c.shape()[0],
            Some(c) => {
                return Err(Error::shape(format!(
                    "memory_taps: look-ahead coefficients {:?} for dim {}",
                    c.shape(),
                    d
                )))
            }
            None => 0,
        };
        if padded < lookback + lookahead {
            return Err(Error::shape(format!(
                "memory_taps: padded length {} shorter than context {}",
                padded,
                lookback + lookahead
            )));
        }
        let len = padded - lookback - lookahead;

        // (offset into the padded sequence, which coefficient tensor, row)
        let mut taps: Vec<(usize, bool, usize)> = (0..=lookback)
            .map(|tau| (lookback - tau, false, tau))
            .collect();
        taps.extend((1..=lookahead).map(|k| (lookback + k, true, k - 1)));

        let coef_row = |ahead_tap: bool, row: usize| -> &[f64] {
            let src = if ahead_tap { c.as_ref().expect("look-ahead taps") } else { &a };
            &src.data()[row * d..(row + 1) * d]
        };
        // tap-major loops over whole sequences; each output element still
        // sums its taps in the same order
        let mut out = vec![0.0; n * len * d];
        for s in 0..n {
            let out_s = &mut out[s * len * d..(s + 1) * len * d];
            let p_s = &p.data()[s * padded * d..(s + 1) * padded * d];
            for &(off, ah, row) in &taps {
                let w = coef_row(ah, row);
                for (o, x) in out_s.chunks_exact_mut(d).zip(p_s[off * d..].chunks_exact(d)) {
                    for ((ov, &wv), &xv) in o.iter_mut().zip(w).zip(x) {
                        *ov += wv * xv;
                    }
                }
            }
        }
        let out = Tensor::new(&[n, len, d], out)?;
        let mut parents = vec![self, back];
        if let Some(v) = ahead {
            parents.push(v);
        }
        Ok(self.tape.push_op(out, &parents, move |g, need| {
            let coef_row = |ahead_tap: bool, row: usize| -> &[f64] {
                let src = if ahead_tap { c.as_ref().expect("look-ahead taps") } else { &a };
                &src.data()[row * d..(row + 1) * d]
            };
            let mut gp = need[0].then(|| vec![0.0; n * padded * d]);
            let mut ga = need[1].then(|| vec![0.0; (lookback + 1) * d]);
            let mut gc = (need.len() > 2 && need[2]).then(|| vec![0.0; lookahead * d]);
            for s in 0..n {
                let g_s = &g.data()[s * len * d..(s + 1) * len * d];
                let p_s = &p.data()[s * padded * d..(s + 1) * padded * d];
                for &(off, ah, row) in &taps {
                    if let Some(gp) = gp.as_mut() {
                        let w = coef_row(ah, row);
                        let gp_s = &mut gp[(s * padded + off) * d..(s * padded + off + len) * d];
                        for (dst, gi) in gp_s.chunks_exact_mut(d).zip(g_s.chunks_exact(d)) {
                            for ((dv, &wv), &gv) in dst.iter_mut().zip(w).zip(gi) {
                                *dv += wv * gv;
                            }
                        }
                    }
                    let target = if ah { gc.as_mut() } else { ga.as_mut() };
                    if let Some(gw) = target {
                        let gw = &mut gw[row * d..(row + 1) * d];
                        for (x, gi) in p_s[off * d..].chunks_exact(d).zip(g_s.chunks_exact(d)) {
                            for ((dv, &xv), &gv) in gw.iter_mut().zip(x).zip(gi) {
                                *dv += xv * gv;
                            }
                        }
                    }
                }
            }
            let mut res = vec![
                gp.map(|v| Tensor::new(&[n, padded, d], v).expect("shape")),
                ga.map(|v| Tensor::new(&[lookback + 1, d], v).expect("shape")),
            ];
            if need.len() > 2 {
                res.push(gc.map(|v| Tensor::new(&[lookahead, d], v).expect("shape")));
            }
            res
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckOptions, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_values() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        assert_eq!(a.matmul(b).unwrap().value().data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.matmul_bt(b).unwrap().value().data(), &[17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn matmul_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let bt = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let opts = GradCheckOptions::default();
        let r = grad_check(|_, v| Ok(v[0].matmul(v[1])?.tanh().sum_all()), &[a.clone(), b], &opts)
            .unwrap();
        assert!(r.passed, "{r:?}");
        let r = grad_check(|_, v| Ok(v[0].matmul_bt(v[1])?.tanh().sum_all()), &[a, bt], &opts)
            .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn memory_taps_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, len, d, lb, la) = (2, 5, 3, 2, 1);
        let p = Tensor::randn(&[n, lb + len + la, d], 1.0, &mut rng);
        let a = Tensor::randn(&[lb + 1, d], 1.0, &mut rng);
        let c = Tensor::randn(&[la, d], 1.0, &mut rng);
        let tape = Tape::new();
        let out = tape
            .constant(p.clone())
            .memory_taps(tape.constant(a.clone()), Some(tape.constant(c.clone())))
            .unwrap()
            .value();
        for s in 0..n {
            for i in 0..len {
                for k in 0..d {
                    let mut want = 0.0;
                    for tau in 0..=lb {
                        want += a.get(&[tau, k]) * p.get(&[s, i + lb - tau, k]);
                    }
                    for kappa in 1..=la {
                        want += c.get(&[kappa - 1, k]) * p.get(&[s, i + lb + kappa, k]);
                    }
                    assert!((out.get(&[s, i, k]) - want).abs() < 1e-12);
                }
            }
        }
        let r = grad_check(
            |_, v| Ok(v[0].memory_taps(v[1], Some(v[2]))?.square().sum_all()),
            &[p.clone(), a.clone(), c],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        let r = grad_check(
            |_, v| Ok(v[0].narrow(1, 0, lb + len)?.memory_taps(v[1], None)?.square().sum_all()),
            &[p, a],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
