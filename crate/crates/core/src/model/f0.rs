use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvLayer;
use super::{ModelConfig, ModelError};
use crate::grad::{Parameter, Tape, Var};

const F0_KERNEL: usize = 3;

/// Training-only head predicting log-f0 at the pitch frame rate from the
/// quantized latents: nearest-neighbour upsampling, then two causal convs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Head {
    pub hidden: ConvLayer,
    pub output: ConvLayer,
}

impl F0Head {
    pub fn new<R: Rng>(rng: &mut R, config: &ModelConfig) -> Self {
        let c = config.f0_channels;
        Self {
            hidden: ConvLayer::new(rng, "f0.hidden", config.latent_dim, c, F0_KERNEL, 1, 1),
            output: ConvLayer::new(rng, "f0.output", c, 1, F0_KERNEL, 1, 1),
        }
    }

    /// `[D, T_f] -> [1, T_f * upsample]`.
    pub fn predict(&self, tape: &mut Tape, quantized: Var, upsample: usize) -> Result<Var, ModelError> {
        let up = tape.repeat_time(quantized, upsample)?;
        let h = self.hidden.forward(tape, up)?;
        let h = tape.relu(h);
        Ok(self.output.forward(tape, h)?)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.hidden.params().into_iter().chain(self.output.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.hidden.params_mut().into_iter().chain(self.output.params_mut())
    }
}
