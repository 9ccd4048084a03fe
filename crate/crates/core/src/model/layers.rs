use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{ConvMode, Parameter, Result, Tape, Tensor, Var};

/// 1-D convolution with weights `[out, in, kernel]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvLayer {
    /// Weights and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng>(
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let w = uniform(rng, &[out_ch, in_ch, kernel], bound);
        let b = uniform(rng, &[out_ch], bound);
        Self {
            weight: Parameter::new(format!("{name}.weight"), w),
            bias: Parameter::new(format!("{name}.bias"), b),
            stride,
            dilation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.conv1d(x, w, b, self.stride, self.dilation, ConvMode::Causal)
    }

    /// Output of a kernel-1 layer for a single column, bias first then inputs in order.
    pub fn pointwise(&self, input: &[f64], out: &mut [f64]) {
        let ci = self.in_channels();
        let w = self.weight.value.data();
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = self.bias.value.data()[o];
            for (i, x) in input.iter().enumerate() {
                acc += w[o * ci + i] * x;
            }
            *slot = acc;
        }
    }

    pub fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}
