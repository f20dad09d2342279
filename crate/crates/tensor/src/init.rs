//! Deterministic parameter initialization.
//!
//! Kaiming-uniform fan-in scaling with the PReLU gain, drawn from a
//! ChaCha8 stream so identical seeds give bit-identical parameters on
//! every platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Default PReLU negative slope, also used as the init gain's `a`.
pub const PRELU_SLOPE: f32 = 0.25;

pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        ParamInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in [0, 1) with 24 bits of precision.
    fn unit(&mut self) -> f32 {
        (self.rng.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f32) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| (self.unit() * 2.0 - 1.0) * bound).collect();
        Tensor::parameter(shape, data).expect("shape/data agree by construction")
    }

    fn kaiming(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let gain = (2.0 / (1.0 + PRELU_SLOPE * PRELU_SLOPE)).sqrt();
        let bound = gain * (3.0 / fan_in as f32).sqrt();
        self.uniform(shape, bound)
    }

    /// Convolution weight [Cout, Cin, kH, kW].
    pub fn conv_weight(&mut self, cout: usize, cin: usize, kh: usize, kw: usize) -> Tensor {
        self.kaiming(&[cout, cin, kh, kw], cin * kh * kw)
    }

    /// Transposed-convolution weight [Cin, Cout, kH, kW].
    pub fn deconv_weight(&mut self, cin: usize, cout: usize, kh: usize, kw: usize) -> Tensor {
        self.kaiming(&[cin, cout, kh, kw], cin * kh * kw)
    }

    /// Fully connected weight [OutF, InF].
    pub fn linear_weight(&mut self, out_f: usize, in_f: usize) -> Tensor {
        self.kaiming(&[out_f, in_f], in_f)
    }

    pub fn zero_bias(&mut self, len: usize) -> Tensor {
        Tensor::parameter(&[len], vec![0.0; len]).expect("shape/data agree by construction")
    }

    pub fn prelu_slopes(&mut self, channels: usize) -> Tensor {
        Tensor::parameter(&[channels], vec![PRELU_SLOPE; channels])
            .expect("shape/data agree by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a = ParamInit::new(7).conv_weight(4, 3, 3, 3);
        let b = ParamInit::new(7).conv_weight(4, 3, 3, 3);
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn different_seed_differs() {
        let a = ParamInit::new(7).conv_weight(4, 3, 3, 3);
        let b = ParamInit::new(8).conv_weight(4, 3, 3, 3);
        assert_ne!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn bound_respected() {
        let w = ParamInit::new(1).conv_weight(8, 8, 3, 3);
        let bound = (2.0f32 / (1.0 + 0.0625)).sqrt() * (3.0 / 72.0f32).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }
}
