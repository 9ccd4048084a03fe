use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dsp::PITCH_RATE;

/// Architecture and rate configuration of the codec network.
///
/// Strided encoder layers use kernel size `2 * stride`. Every field is required
/// when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub strides: Vec<usize>,
    pub encoder_channels: usize,
    pub num_maps: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub speaker_codebook_size: usize,
    pub speaker_dim: usize,
    pub decoder_layers: usize,
    pub decoder_dilations: Vec<usize>,
    pub decoder_channels: usize,
    pub decoder_kernel: usize,
    pub f0_channels: usize,
    pub f0_rate: u32,
}

impl Default for ModelConfig {
    /// 1600 bps: strides `[2,2,2,2,2,5]`, two maps of 256 codewords over a
    /// 64-dimensional latent, a 10-layer decoder with 32 residual channels.
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            strides: vec![2, 2, 2, 2, 2, 5],
            encoder_channels: 64,
            num_maps: 2,
            codebook_size: 256,
            latent_dim: 64,
            speaker_codebook_size: 256,
            speaker_dim: 32,
            decoder_layers: 10,
            decoder_dilations: (0..10).map(|i| 1 << i).collect(),
            decoder_channels: 32,
            decoder_kernel: 2,
            f0_channels: 32,
            f0_rate: PITCH_RATE,
        }
    }
}

impl ModelConfig {
    /// Same rates and codebooks as the default with a narrow, shallow network
    /// sized for quick CPU training runs.
    pub fn tiny() -> Self {
        Self {
            encoder_channels: 32,
            decoder_layers: 6,
            decoder_dilations: (0..6).map(|i| 1 << i).collect(),
            decoder_channels: 16,
            f0_channels: 16,
            ..Self::default()
        }
    }

    /// Appends `n` stride-2 encoder layers, halving the frame rate each time.
    pub fn with_extra_stride2(mut self, n: usize) -> Self {
        self.strides.extend(std::iter::repeat_n(2, n));
        self
    }

    pub fn downsampling_factor(&self) -> usize {
        self.strides.iter().product()
    }

    /// Latent frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.downsampling_factor() as f64
    }

    pub fn per_map_dim(&self) -> usize {
        self.latent_dim / self.num_maps
    }

    pub fn bits_per_index(&self) -> u32 {
        bits_for(self.codebook_size)
    }

    pub fn bits_per_frame(&self) -> u32 {
        self.num_maps as u32 * self.bits_per_index()
    }

    /// Pitch frames per latent frame.
    pub fn f0_upsample(&self) -> usize {
        self.downsampling_factor() * self.f0_rate as usize / self.sample_rate as usize
    }

    /// Channels of the decoder conditioning: latent plus speaker embedding.
    pub fn conditioning_dim(&self) -> usize {
        self.latent_dim + self.speaker_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.strides.is_empty() || self.strides.iter().any(|&s| s == 0 || s > 255) {
            return bad(format!("strides must be non-empty and in 1..=255, got {:?}", self.strides));
        }
        if self.strides.len() > 255 {
            return bad("at most 255 encoder layers".into());
        }
        let factor = self.downsampling_factor();
        if !(self.sample_rate as usize).is_multiple_of(factor) {
            return bad(format!("sample_rate {} not divisible by downsampling factor {factor}", self.sample_rate));
        }
        if self.f0_rate != PITCH_RATE {
            return bad(format!("f0_rate must be {PITCH_RATE}"));
        }
        if !self.sample_rate.is_multiple_of(self.f0_rate) {
            return bad(format!("sample_rate {} not divisible by f0_rate {}", self.sample_rate, self.f0_rate));
        }
        if !(factor * self.f0_rate as usize).is_multiple_of(self.sample_rate as usize) {
            return bad(format!("latent frame rate {} Hz does not divide the f0 rate", self.frame_rate()));
        }
        if self.num_maps == 0 || self.latent_dim == 0 || !self.latent_dim.is_multiple_of(self.num_maps) {
            return bad(format!("latent_dim {} must be a positive multiple of num_maps {}", self.latent_dim, self.num_maps));
        }
        if self.num_maps > 255 {
            return bad("num_maps must fit one byte".into());
        }
        for (name, k) in [("codebook_size", self.codebook_size), ("speaker_codebook_size", self.speaker_codebook_size)] {
            if !(1..=u16::MAX as usize).contains(&k) {
                return bad(format!("{name} must be in 1..=65535, got {k}"));
            }
        }
        let positive = [
            ("encoder_channels", self.encoder_channels),
            ("speaker_dim", self.speaker_dim),
            ("decoder_layers", self.decoder_layers),
            ("decoder_channels", self.decoder_channels),
            ("decoder_kernel", self.decoder_kernel),
            ("f0_channels", self.f0_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.decoder_dilations.len() != self.decoder_layers || self.decoder_dilations.contains(&0) {
            return bad(format!(
                "decoder_dilations must list {} positive values, got {:?}",
                self.decoder_layers, self.decoder_dilations
            ));
        }
        Ok(())
    }
}

/// `ceil(log2(k))`, the width of one index into a codebook of `k` entries.
pub fn bits_for(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rates() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.downsampling_factor(), 160);
        assert_eq!(c.frame_rate(), 100.0);
        assert_eq!(c.per_map_dim(), 32);
        assert_eq!(c.bits_per_frame(), 16);
        assert_eq!(c.f0_upsample(), 2);
        ModelConfig::tiny().validate().unwrap();
        let c = ModelConfig::default().with_extra_stride2(2);
        c.validate().unwrap();
        assert_eq!(c.f0_upsample(), 8);
    }

    #[test]
    fn index_widths() {
        assert_eq!(bits_for(1), 0);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(3), 2);
        assert_eq!(bits_for(256), 8);
        assert_eq!(bits_for(257), 9);
        assert_eq!(bits_for(65535), 16);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ModelConfig { latent_dim: 63, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { strides: vec![3, 7], ..ModelConfig::default() }.validate().is_err());
        let mut c = ModelConfig::default();
        c.decoder_dilations.pop();
        assert!(c.validate().is_err());
        assert!(ModelConfig { codebook_size: 0, ..ModelConfig::default() }.validate().is_err());
        let deep = ModelConfig { strides: vec![2, 2, 2, 2, 2, 2, 2, 2, 5], ..ModelConfig::default() };
        assert!(deep.validate().is_err());
    }

    #[test]
    fn json_requires_every_field() {
        let json = serde_json::to_value(ModelConfig::default()).unwrap();
        let back: ModelConfig = serde_json::from_value(json.clone()).unwrap();
        assert_eq!(back, ModelConfig::default());
        let mut missing = json;
        missing.as_object_mut().unwrap().remove("num_maps");
        assert!(serde_json::from_value::<ModelConfig>(missing).is_err());
    }
}
