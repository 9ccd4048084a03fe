use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvLayer;
use super::{ModelConfig, ModelError};
use crate::grad::{Tape, Var};

/// Strided causal convolution stack with latent and speaker projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<ConvLayer>,
    /// 1x1 projection from the last hidden layer to the `D` latent channels.
    pub latent_proj: ConvLayer,
    /// 1x1 projection from the last hidden layer to the `D_s` speaker channels.
    pub speaker_proj: ConvLayer,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// Output of the last strided layer, `[C, T_f]`.
    pub hidden: Var,
    /// Pre-quantization latents, `[D, T_f]`.
    pub latents: Var,
    /// Speaker features before pooling, `[D_s, T_f]`.
    pub speaker_features: Var,
}

impl Encoder {
    pub fn new<R: Rng>(rng: &mut R, config: &ModelConfig) -> Self {
        let c = config.encoder_channels;
        let layers = config
            .strides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let in_ch = if i == 0 { 1 } else { c };
                ConvLayer::new(rng, &format!("encoder.conv{i}"), in_ch, c, 2 * s, s, 1)
            })
            .collect();
        Self {
            layers,
            latent_proj: ConvLayer::new(rng, "encoder.latent_proj", c, config.latent_dim, 1, 1, 1),
            speaker_proj: ConvLayer::new(rng, "encoder.speaker_proj", c, config.speaker_dim, 1, 1, 1),
        }
    }

    pub fn downsampling_factor(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// `audio` is a `[1, T]` waveform with `T` divisible by the downsampling factor.
    pub fn forward(&self, tape: &mut Tape, audio: Var) -> Result<EncoderOutput, ModelError> {
        let len = tape.shape(audio)[1];
        let factor = self.downsampling_factor();
        if !len.is_multiple_of(factor) {
            return Err(ModelError::Length { len, factor });
        }
        let mut h = audio;
        for layer in &self.layers {
            h = layer.forward(tape, h)?;
            h = tape.relu(h);
        }
        let latents = self.latent_proj.forward(tape, h)?;
        let speaker_features = self.speaker_proj.forward(tape, h)?;
        Ok(EncoderOutput { hidden: h, latents, speaker_features })
    }

    pub fn params(&self) -> impl Iterator<Item = &crate::grad::Parameter> {
        self.layers
            .iter()
            .chain([&self.latent_proj, &self.speaker_proj])
            .flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut crate::grad::Parameter> {
        self.layers
            .iter_mut()
            .chain([&mut self.latent_proj, &mut self.speaker_proj])
            .flat_map(|l| l.params_mut())
    }
}
