//! The codec network: encoder, product quantizer, speaker code, decoder and the
//! training-only f0 head.

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod f0;
mod layers;
mod quantizer;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{bits_for, ModelConfig};
pub use decoder::{sample_symbol, Decoder, IncrementalDecoder, ResidualBlock};
pub use encoder::{Encoder, EncoderOutput};
pub use f0::F0Head;
pub use layers::ConvLayer;
pub use quantizer::{
    nearest_index, nearest_index_with, quantize, quantize_with, restart_dead_codes, speaker_code, CodebookSet, EmaAccumulator,
    EmaState, EmaStats, Quantized, SpeakerCode, TieBreak,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, AudioBuffer, PitchTrack, MU_LAW_SILENCE};
use crate::grad::{GradError, Parameter, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("input length {len} is not a multiple of the downsampling factor {factor}")]
    Length { len: usize, factor: usize },
    #[error("pitch track has {got} frames, expected {expected}")]
    MisalignedPitch { expected: usize, got: usize },
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("index {index} out of range for codebook of size {size}")]
    InvalidIndex { index: usize, size: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-frame code indices plus the utterance-level speaker index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSequence {
    /// `frames[t][m]` indexes codebook `m` at frame `t`.
    pub frames: Vec<Vec<u16>>,
    pub speaker_index: u16,
    /// Length of the audio before padding.
    pub num_samples: u32,
}

impl CodeSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction_nll: f64,
    pub codebook_loss: f64,
    pub commitment_loss: f64,
    pub f0_loss: f64,
    pub commitment_weight: f64,
    pub f0_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(nll: f64, codebook: f64, commitment: f64, f0: f64, beta: f64, lambda_f0: f64) -> Self {
        Self {
            reconstruction_nll: nll,
            codebook_loss: codebook,
            commitment_loss: commitment,
            f0_loss: f0,
            commitment_weight: beta,
            f0_weight: lambda_f0,
            total: Self::combine(nll, codebook, commitment, f0, beta, lambda_f0),
        }
    }

    fn combine(nll: f64, codebook: f64, commitment: f64, f0: f64, beta: f64, lambda_f0: f64) -> f64 {
        nll + codebook + beta * commitment + lambda_f0 * f0
    }

    /// True when `total` equals the weighted sum of the components bit for bit.
    pub fn identity_holds(&self) -> bool {
        let t = Self::combine(
            self.reconstruction_nll,
            self.codebook_loss,
            self.commitment_loss,
            self.f0_loss,
            self.commitment_weight,
            self.f0_weight,
        );
        t.to_bits() == self.total.to_bits()
    }

    pub fn is_finite(&self) -> bool {
        [self.reconstruction_nll, self.codebook_loss, self.commitment_loss, self.f0_loss, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Component-wise mean, with the total recombined from the means.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        let first = items.first()?;
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().fold(0.0, |a, b| a + f(b)) / n;
        Some(LossBreakdown::new(
            avg(|l| l.reconstruction_nll),
            avg(|l| l.codebook_loss),
            avg(|l| l.commitment_loss),
            avg(|l| l.f0_loss),
            first.commitment_weight,
            first.f0_weight,
        ))
    }
}

/// Audio and pitch annotation ready for a training forward pass.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    /// Normalized waveform, length a multiple of the downsampling factor.
    pub samples: Vec<f64>,
    /// Mu-law symbols of the waveform (decoder targets).
    pub targets: Vec<u8>,
    /// Targets shifted right with silence at position 0.
    pub inputs: Vec<u8>,
    pub pitch: PitchTrack,
}

impl PreparedExample {
    pub fn new(audio: &AudioBuffer, pitch: &PitchTrack, config: &ModelConfig) -> Result<Self, ModelError> {
        let factor = config.downsampling_factor();
        if !audio.len().is_multiple_of(factor) {
            return Err(ModelError::Length { len: audio.len(), factor });
        }
        let expected = audio.len() / factor * config.f0_upsample();
        if pitch.len() != expected {
            return Err(ModelError::MisalignedPitch { expected, got: pitch.len() });
        }
        let mu = dsp::mu_law_compress(audio);
        Ok(Self {
            samples: audio.normalized(),
            inputs: mu.shifted_right().symbols,
            targets: mu.symbols,
            pitch: pitch.clone(),
        })
    }

    pub fn num_frames(&self, config: &ModelConfig) -> usize {
        self.samples.len() / config.downsampling_factor()
    }
}

/// Everything a training step needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub breakdown: LossBreakdown,
    pub total: Var,
    pub logits: Var,
    pub latents: Var,
    pub quantized: Var,
    pub indices: Vec<Vec<u16>>,
    pub speaker_index: u16,
    pub speaker_pooled: Var,
    pub f0_prediction: Var,
}

/// Nearest-neighbour upsampling of frame latents plus a broadcast speaker
/// embedding: `[D, T_f]`, `[D_s]` to `[D + D_s, target_len]`.
pub fn condition_upsample(tape: &mut Tape, quantized: Var, speaker: Var, target_len: usize) -> Result<Var, ModelError> {
    let frames = tape.shape(quantized)[1];
    if frames == 0 || !target_len.is_multiple_of(frames) {
        return Err(ModelError::Shape(format!("cannot upsample {frames} frames to {target_len} samples")));
    }
    let up = tape.repeat_time(quantized, target_len / frames)?;
    let spk = tape.broadcast_time(speaker, target_len)?;
    Ok(tape.concat_channels(up, spk)?)
}

/// Frame-rate conditioning `[D + D_s, T_f]`.
fn frame_conditioning(tape: &mut Tape, quantized: Var, speaker: Var) -> Result<Var, ModelError> {
    let frames = tape.shape(quantized)[1];
    let spk = tape.broadcast_time(speaker, frames)?;
    Ok(tape.concat_channels(quantized, spk)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub codebooks: CodebookSet,
    pub decoder: Decoder,
    pub f0_head: F0Head,
}

impl CodecModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&mut rng, &config);
        let codebooks = CodebookSet::new(
            &mut rng,
            config.num_maps,
            config.codebook_size,
            config.per_map_dim(),
            config.speaker_codebook_size,
            config.speaker_dim,
        );
        let decoder = Decoder::new(&mut rng, &config);
        let f0_head = F0Head::new(&mut rng, &config);
        Ok(Self { config, encoder, codebooks, decoder, f0_head })
    }

    /// Trainable network weights, excluding codebooks.
    pub fn network_params(&self) -> impl Iterator<Item = &Parameter> {
        self.encoder.params().chain(self.decoder.params()).chain(self.f0_head.params())
    }

    pub fn network_params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.encoder
            .params_mut()
            .chain(self.decoder.params_mut())
            .chain(self.f0_head.params_mut())
    }

    pub fn num_network_params(&self) -> usize {
        self.network_params().map(|p| p.value.len()).sum()
    }

    pub fn num_codebook_params(&self) -> usize {
        self.codebooks.all().map(|p| p.value.len()).sum()
    }

    fn bind_codebooks(&self, tape: &mut Tape) -> (Vec<Var>, Var) {
        let maps = self.codebooks.maps.iter().map(|p| tape.param(p)).collect();
        let spk = tape.param(&self.codebooks.speaker);
        (maps, spk)
    }

    /// Runs the encoder on a waveform whose length divides the downsampling factor.
    pub fn encode_latents(&self, tape: &mut Tape, samples: &[f64]) -> Result<EncoderOutput, ModelError> {
        let audio = tape.constant(Tensor::new(vec![1, samples.len()], samples.to_vec())?);
        self.encoder.forward(tape, audio)
    }

    /// Pads `audio`, encodes it and returns the discrete codes.
    pub fn encode(&self, audio: &AudioBuffer) -> Result<CodeSequence, ModelError> {
        if audio.sample_rate != self.config.sample_rate {
            return Err(ModelError::Config(format!(
                "audio is {} Hz, model expects {} Hz",
                audio.sample_rate, self.config.sample_rate
            )));
        }
        let padded = dsp::pad_to_multiple(audio, self.config.downsampling_factor());
        let mut tape = Tape::new();
        let enc = self.encode_latents(&mut tape, &padded.normalized())?;
        let (maps, spk) = self.bind_codebooks(&mut tape);
        let q = quantize(&mut tape, enc.latents, &maps)?;
        let index = if q.indices.is_empty() {
            0
        } else {
            speaker_code(&mut tape, enc.speaker_features, spk)?.index
        };
        Ok(CodeSequence { frames: q.indices, speaker_index: index, num_samples: audio.len() as u32 })
    }

    /// Looks up codewords for `codes`, producing frame-rate conditioning `[D + D_s, T_f]`.
    pub fn conditioning_from_codes(&self, codes: &CodeSequence) -> Result<Tensor, ModelError> {
        let cfg = &self.config;
        let dim = cfg.per_map_dim();
        let t = codes.frames.len();
        let mut out = Tensor::zeros(&[cfg.conditioning_dim(), t]);
        let spk = codes.speaker_index as usize;
        if spk >= cfg.speaker_codebook_size {
            return Err(ModelError::InvalidIndex { index: spk, size: cfg.speaker_codebook_size });
        }
        for (f, frame) in codes.frames.iter().enumerate() {
            if frame.len() != cfg.num_maps {
                return Err(ModelError::Shape(format!("frame {f} has {} maps, expected {}", frame.len(), cfg.num_maps)));
            }
            for (m, &idx) in frame.iter().enumerate() {
                let idx = idx as usize;
                if idx >= cfg.codebook_size {
                    return Err(ModelError::InvalidIndex { index: idx, size: cfg.codebook_size });
                }
                let row = self.codebooks.maps[m].value.row(idx);
                for (c, v) in row.iter().enumerate() {
                    out.data_mut()[(m * dim + c) * t + f] = *v;
                }
            }
            let row = self.codebooks.speaker.value.row(spk);
            for (c, v) in row.iter().enumerate() {
                out.data_mut()[(cfg.latent_dim + c) * t + f] = *v;
            }
        }
        Ok(out)
    }

    /// Autoregressively generates `T_f * downsampling_factor` samples.
    ///
    /// Symbols are drawn from `softmax(logits / temperature)` with a ChaCha
    /// generator seeded by `seed`; temperature 0 takes the argmax.
    pub fn sample_waveform(&self, codes: &CodeSequence, seed: u64, temperature: f64) -> Result<AudioBuffer, ModelError> {
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(ModelError::Config(format!("temperature must be finite and >= 0, got {temperature}")));
        }
        let cond = self.conditioning_from_codes(codes)?;
        let factor = self.config.downsampling_factor();
        let total = codes.frames.len() * factor;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inc = IncrementalDecoder::new(&self.decoder, &cond, factor);
        let mut symbols = Vec::with_capacity(total);
        let mut prev = MU_LAW_SILENCE;
        for _ in 0..total {
            let logits = inc.step(prev);
            prev = sample_symbol(&logits, temperature, &mut rng);
            symbols.push(prev);
        }
        Ok(dsp::mu_law_expand(&dsp::MuLawStream { symbols }, self.config.sample_rate))
    }

    /// Teacher-forced decoder logits from frame-rate conditioning.
    pub fn decoder_logits(&self, tape: &mut Tape, inputs: &[u8], conditioning: Var) -> Result<Var, ModelError> {
        self.decoder.logits(tape, inputs, conditioning, self.config.downsampling_factor())
    }

    pub fn predict_f0(&self, tape: &mut Tape, quantized: Var) -> Result<Var, ModelError> {
        self.f0_head.predict(tape, quantized, self.config.f0_upsample())
    }

    /// Full training forward pass: reconstruction NLL, VQ terms over all maps and
    /// the speaker codebook, and the masked f0 regression.
    pub fn forward(&self, tape: &mut Tape, ex: &PreparedExample, beta: f64, lambda_f0: f64) -> Result<ForwardPass, ModelError> {
        if ex.samples.is_empty() {
            return Err(ModelError::Shape("empty training example".into()));
        }
        let enc = self.encode_latents(tape, &ex.samples)?;
        let (maps, spk_book) = self.bind_codebooks(tape);
        let q = quantize(tape, enc.latents, &maps)?;
        let spk = speaker_code(tape, enc.speaker_features, spk_book)?;

        let cond = frame_conditioning(tape, q.quantized, spk.embedding)?;
        let logits = self.decoder_logits(tape, &ex.inputs, cond)?;
        let targets: Vec<usize> = ex.targets.iter().map(|&s| s as usize).collect();
        let nll = tape.softmax_cross_entropy(logits, &targets)?;

        let f0_pred = self.predict_f0(tape, q.quantized)?;
        let n = ex.pitch.len();
        let f0_target = tape.constant(Tensor::new(vec![1, n], ex.pitch.log_f0.clone())?);
        let f0_loss = tape.mse(f0_pred, f0_target, Some(&ex.pitch.voiced))?;

        let codebook = tape.add(q.codebook_loss, spk.codebook_loss)?;
        let commitment = tape.add(q.commitment_loss, spk.commitment_loss)?;
        let weighted_commit = tape.scale(commitment, beta);
        let weighted_f0 = tape.scale(f0_loss, lambda_f0);
        let total = tape.add(nll, codebook)?;
        let total = tape.add(total, weighted_commit)?;
        let total = tape.add(total, weighted_f0)?;

        let breakdown = LossBreakdown::new(
            tape.item(nll),
            tape.item(codebook),
            tape.item(commitment),
            tape.item(f0_loss),
            beta,
            lambda_f0,
        );
        debug_assert_eq!(breakdown.total.to_bits(), tape.item(total).to_bits());
        Ok(ForwardPass {
            breakdown,
            total,
            logits,
            latents: enc.latents,
            quantized: q.quantized,
            indices: q.indices,
            speaker_index: spk.index,
            speaker_pooled: spk.pooled,
            f0_prediction: f0_pred,
        })
    }

    /// Loss of one example without gradients.
    pub fn compute_loss(&self, ex: &PreparedExample, beta: f64, lambda_f0: f64) -> Result<LossBreakdown, ModelError> {
        let mut tape = Tape::new();
        Ok(self.forward(&mut tape, ex, beta, lambda_f0)?.breakdown)
    }

    /// Adds gradients recorded on `tape` to every bound parameter.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        let mut visit = |p: &mut Parameter| {
            if let Some(v) = tape.param_var(&p.name) {
                p.accumulate_grad(&tape.grad_or_zeros(v));
            }
        };
        self.network_params_mut().for_each(&mut visit);
        self.codebooks.all_mut().for_each(&mut visit);
    }

    pub fn zero_grads(&mut self) {
        self.network_params_mut().for_each(Parameter::zero_grad);
        self.codebooks.all_mut().for_each(Parameter::zero_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_identity() {
        let l = LossBreakdown::new(5.5, 0.1, 0.3, 2.0, 0.25, 1.0);
        assert_eq!(l.total, 5.5 + 0.1 + 0.25 * 0.3 + 2.0);
        assert!(l.identity_holds());
        let m = LossBreakdown::mean(&[l, LossBreakdown::new(1.0, 0.0, 0.0, 0.0, 0.25, 1.0)]).unwrap();
        assert!(m.identity_holds());
        assert_eq!(m.reconstruction_nll, 3.25);
    }

    #[test]
    fn param_names_are_unique() {
        let m = CodecModel::new(ModelConfig::tiny(), 1).unwrap();
        let mut names: Vec<&str> = m.network_params().chain(m.codebooks.all()).map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
