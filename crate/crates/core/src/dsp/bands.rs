use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CVar, ComplexTensor, Tensor};

/// Inclusive, 0-based bin range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandRange {
    pub start: usize,
    pub end: usize,
}

impl BandRange {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Contiguous, possibly overlapping bands covering `bins` bins. Bands are
/// zero-padded at their upper edge to a common width so they stack into a
/// channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BandLayout {
    ranges: Vec<BandRange>,
    bins: usize,
    width: usize,
    /// 1 / number of bands claiming each bin.
    share: Vec<f64>,
}

impl BandLayout {
    pub fn new(ranges: Vec<BandRange>, bins: usize) -> Result<Self> {
        let bad = |msg: String| Err(Error::config(format!("band layout: {msg}")));
        if ranges.is_empty() {
            return bad("no bands".into());
        }
        if ranges[0].start != 0 || ranges.last().map(|r| r.end) != Some(bins - 1) {
            return bad(format!("bands must span bins 0..={}", bins - 1));
        }
        for r in &ranges {
            if r.start > r.end {
                return bad(format!("empty band {r:?}"));
            }
        }
        for w in ranges.windows(2) {
            if w[1].start > w[0].end + 1 || w[1].start <= w[0].start || w[1].end <= w[0].end {
                return bad(format!("bands {:?} and {:?} leave a gap or are out of order", w[0], w[1]));
            }
        }
        let mut count = vec![0usize; bins];
        for r in &ranges {
            for c in &mut count[r.start..=r.end] {
                *c += 1;
            }
        }
        let width = ranges.iter().map(BandRange::len).max().unwrap_or(0);
        Ok(Self {
            share: count.iter().map(|&c| 1.0 / c as f64).collect(),
            ranges,
            bins,
            width,
        })
    }

    pub fn single(bins: usize) -> Self {
        Self::new(
            vec![BandRange {
                start: 0,
                end: bins - 1,
            }],
            bins,
        )
        .expect("one full band is valid")
    }

    /// `count` bands of near-equal width, neighbours sharing one bin.
    pub fn overlapping(bins: usize, count: usize) -> Result<Self> {
        if count == 0 || bins < 2 * count {
            return Err(Error::config(format!("cannot split {bins} bins into {count} bands")));
        }
        if count == 1 {
            return Ok(Self::single(bins));
        }
        let edge = |c: usize| ((c * (bins - 1)) as f64 / count as f64).round() as usize;
        let ranges = (0..count)
            .map(|c| BandRange {
                start: edge(c),
                end: edge(c + 1),
            })
            .collect();
        Self::new(ranges, bins)
    }

    /// From 1-based inclusive `(first, last)` pairs.
    pub fn from_one_based(pairs: &[(usize, usize)], bins: usize) -> Result<Self> {
        let ranges = pairs
            .iter()
            .map(|&(a, b)| {
                if a == 0 || b == 0 {
                    Err(Error::config("1-based band edges start at 1"))
                } else {
                    Ok(BandRange {
                        start: a - 1,
                        end: b - 1,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranges, bins)
    }

    pub fn ranges(&self) -> &[BandRange] {
        &self.ranges
    }

    pub fn num_bands(&self) -> usize {
        self.ranges.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Common band width after equalization.
    pub fn width(&self) -> usize {
        self.width
    }

    /// `[batch, frames, bins]` to `[batch, bands, frames, width]`.
    pub fn split(&self, spec: &ComplexTensor) -> Result<ComplexTensor> {
        let s = spec.shape();
        if s.len() != 3 || s[2] != self.bins {
            return Err(Error::shape(format!(
                "split expects [batch, frames, {}], got {s:?}",
                self.bins
            )));
        }
        let (b, t) = (s[0], s[1]);
        let (c, w) = (self.ranges.len(), self.width);
        let plane = |x: &Tensor| {
            let mut out = vec![0.0; b * c * t * w];
            for bi in 0..b {
                for (ci, r) in self.ranges.iter().enumerate() {
                    for ti in 0..t {
                        let src = (bi * t + ti) * self.bins;
                        let dst = ((bi * c + ci) * t + ti) * w;
                        out[dst..dst + r.len()].copy_from_slice(&x.data()[src + r.start..=src + r.end]);
                    }
                }
            }
            Tensor::new(&[b, c, t, w], out)
        };
        ComplexTensor::new(plane(&spec.re)?, plane(&spec.im)?)
    }

    fn check_map(&self, s: &[usize]) -> Result<()> {
        if s.len() != 4 || s[1] != self.ranges.len() || s[3] != self.width {
            return Err(Error::shape(format!(
                "merge expects [batch, {}, frames, {}], got {s:?}",
                self.ranges.len(),
                self.width
            )));
        }
        Ok(())
    }

    /// Inverse of [`split`](Self::split); bins claimed by several bands are
    /// averaged, equalization padding is dropped.
    pub fn merge(&self, map: &ComplexTensor) -> Result<ComplexTensor> {
        let s = map.shape();
        self.check_map(s)?;
        let (b, c, t, w) = (s[0], s[1], s[2], s[3]);
        let plane = |x: &Tensor| {
            let mut out = vec![0.0; b * t * self.bins];
            for bi in 0..b {
                for (ci, r) in self.ranges.iter().enumerate() {
                    for ti in 0..t {
                        let src = ((bi * c + ci) * t + ti) * w;
                        let dst = (bi * t + ti) * self.bins;
                        for k in 0..r.len() {
                            out[dst + r.start + k] += x.data()[src + k] * self.share[r.start + k];
                        }
                    }
                }
            }
            Tensor::new(&[b, t, self.bins], out)
        };
        ComplexTensor::new(plane(&map.re)?, plane(&map.im)?)
    }

    /// Differentiable [`merge`](Self::merge).
    pub fn merge_var<'t>(&self, map: CVar<'t>) -> Result<CVar<'t>> {
        let s = map.shape();
        self.check_map(&s)?;
        let tape = map.re.tape();
        let share = tape.constant(Tensor::new(&[self.bins], self.share.clone())?);
        let plane = |x: crate::tensor::Var<'t>| -> Result<crate::tensor::Var<'t>> {
            let mut acc = None;
            for (ci, r) in self.ranges.iter().enumerate() {
                let band = x
                    .narrow(1, ci, 1)?
                    .narrow(3, 0, r.len())?
                    .pad(3, r.start, self.bins - 1 - r.end)?;
                acc = Some(match acc {
                    None => band,
                    Some(a) => band.add(a)?,
                });
            }
            let merged = acc.expect("at least one band").mul(share)?;
            merged.reshape(&[s[0], s[2], self.bins])
        };
        Ok(CVar {
            re: plane(map.re)?,
            im: plane(map.im)?,
        })
    }
}
