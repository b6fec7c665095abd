use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound on a fitted standard deviation.
pub const STD_EPS: f64 = 1e-8;

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits population mean and standard deviation per channel over the steps
    /// in `range` of a `[T, n, c]` series.
    pub fn fit(series: &Tensor, range: Range<usize>) -> Result<Self> {
        let [t, n, c] = *series.shape() else {
            return Err(Error::dim("zscore_fit", format!("expected [T, n, c], got {:?}", series.shape())));
        };
        if range.is_empty() || range.end > t {
            return Err(Error::Config(format!("fit range {range:?} invalid for {t} steps")));
        }
        let rows = &series.data()[range.start * n * c..range.end * n * c];
        let count = (range.len() * n) as f64;
        let mut mean = vec![0.0; c];
        for row in rows.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for row in rows.chunks_exact(c) {
            for ch in 0..c {
                var[ch] += (row[ch] - mean[ch]).powi(2);
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(ch, v)| {
                let s = (v / count).sqrt();
                if s < STD_EPS {
                    log::warn!("channel {ch} is constant over the fit range; std clamped to {STD_EPS}");
                    STD_EPS
                } else {
                    s
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let c = *x.shape().last().unwrap_or(&0);
        if c != self.channels() {
            return Err(Error::dim(
                "normalizer",
                format!("last extent {c}, fitted on {} channels", self.channels()),
            ));
        }
        Ok(c)
    }

    /// `(x - μ) / σ` over the last axis.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.check(x)?;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    /// `z · σ + μ` over the last axis.
    pub fn invert(&self, z: &Tensor) -> Result<Tensor> {
        let c = self.check(z)?;
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % c] + self.mean[i % c])
            .collect();
        Tensor::new(z.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_channel() {
        let x = Tensor::new([2, 1, 1], vec![0.0, 2.0]).unwrap();
        let nz = Normalizer::fit(&x, 0..2).unwrap();
        assert_eq!((nz.mean[0], nz.std[0]), (1.0, 1.0));
        assert_eq!(nz.apply(&x).unwrap().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::full([5, 2, 1], 7.0);
        let nz = Normalizer::fit(&x, 0..5).unwrap();
        assert_eq!(nz.std[0], STD_EPS);
        assert!(nz.apply(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invert_undoes_apply() {
        let x = Tensor::from_fn([40, 3, 3], |i| (i as f64 * 0.61).sin() * 300.0 + 50.0);
        let nz = Normalizer::fit(&x, 0..28).unwrap();
        let back = nz.invert(&nz.apply(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn statistics_ignore_rows_outside_range() {
        let x = Tensor::from_fn([40, 3, 3], |i| (i as f64 * 0.61).sin());
        let mut y = x.clone();
        for v in &mut y.data_mut()[28 * 9..] {
            *v = *v * 1e3 + 5.0;
        }
        let a = Normalizer::fit(&x, 0..28).unwrap();
        let b = Normalizer::fit(&y, 0..28).unwrap();
        assert!(a.mean.iter().zip(&b.mean).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(a.std.iter().zip(&b.std).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
