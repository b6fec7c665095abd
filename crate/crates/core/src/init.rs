//! Parameter initialisers and seed derivation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Independent generator for a named purpose under one run seed.
pub fn substream(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // FNV-1a of the stream label selects the ChaCha stream
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    rng.set_stream(h);
    rng
}

pub fn uniform(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Glorot/Xavier uniform for a `[fan_in, fan_out]` weight.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform([fan_in, fan_out], bound, rng)
}

/// Inverse of softplus, for placing biases so that `softplus(bias) = y`.
pub fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Unary;

    #[test]
    fn inv_softplus_inverts() {
        for y in [1e-3, 0.01, 0.1, 1.0, 5.0] {
            let x = inv_softplus(y);
            let t = crate::autodiff::Tape::new();
            let v = t.constant(Tensor::scalar(x)).unary(Unary::Softplus).unwrap();
            assert!((v.value().item().unwrap() - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn substreams_differ() {
        let a: f64 = substream(1, "a").gen();
        let b: f64 = substream(1, "b").gen();
        let a2: f64 = substream(1, "a").gen();
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }
}
