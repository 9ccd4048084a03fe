//! Autoregressive decoder over 8-bit mu-law symbols.
//!
//! Symbols are embedded, passed through a stack of dilated causal residual
//! blocks with gated `tanh * sigmoid` units, and projected to 256 logits per
//! sample from the summed skip connections. Each block adds a 1x1 projection of
//! the conditioning. Projections are computed at the latent frame rate and
//! repeated, which equals projecting the repeated conditioning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{uniform, ConvLayer};
use super::{ModelConfig, ModelError};
use crate::dsp::MU_LAW_LEVELS;
use crate::grad::{Parameter, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    /// Dilated causal conv, `C -> 2C` (filter half then gate half).
    pub dilated: ConvLayer,
    /// 1x1 conditioning projection, `D + D_s -> 2C`.
    pub conditioning: ConvLayer,
    pub residual: ConvLayer,
    pub skip: ConvLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    /// `[256, C]` symbol embedding.
    pub embedding: Parameter,
    pub blocks: Vec<ResidualBlock>,
    pub post: ConvLayer,
    pub output: ConvLayer,
}

impl Decoder {
    pub fn new<R: Rng>(rng: &mut R, config: &ModelConfig) -> Self {
        let c = config.decoder_channels;
        let cond = config.conditioning_dim();
        let blocks = config
            .decoder_dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ResidualBlock {
                dilated: ConvLayer::new(rng, &format!("decoder.block{i}.dilated"), c, 2 * c, config.decoder_kernel, 1, d),
                conditioning: ConvLayer::new(rng, &format!("decoder.block{i}.conditioning"), cond, 2 * c, 1, 1, 1),
                residual: ConvLayer::new(rng, &format!("decoder.block{i}.residual"), c, c, 1, 1, 1),
                skip: ConvLayer::new(rng, &format!("decoder.block{i}.skip"), c, c, 1, 1, 1),
            })
            .collect();
        Self {
            embedding: Parameter::new("decoder.embedding", uniform(rng, &[MU_LAW_LEVELS, c], 3f64.sqrt())),
            blocks,
            post: ConvLayer::new(rng, "decoder.post", c, c, 1, 1, 1),
            output: ConvLayer::new(rng, "decoder.output", c, MU_LAW_LEVELS, 1, 1, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.embedding.value.shape()[1]
    }

    /// Receptive field in samples, including the current input.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .map(|b| (b.dilated.kernel() - 1) * b.dilated.dilation)
            .sum::<usize>()
    }

    /// Teacher-forced logits `[256, T]`.
    ///
    /// `inputs` are the previous symbols (already shifted right), so the logits
    /// at position `t` depend only on `inputs[..=t]`. `conditioning` has
    /// `T / upsample` frames.
    pub fn logits(&self, tape: &mut Tape, inputs: &[u8], conditioning: Var, upsample: usize) -> Result<Var, ModelError> {
        let t = inputs.len();
        let frames = tape.shape(conditioning)[1];
        if frames * upsample != t {
            return Err(ModelError::Shape(format!(
                "{frames} conditioning frames x {upsample} != {t} samples"
            )));
        }
        let c = self.channels();
        let table = tape.param(&self.embedding);
        let idx: Vec<usize> = inputs.iter().map(|&s| s as usize).collect();
        let mut h = tape.gather_rows(table, &idx)?;
        let mut skips: Option<Var> = None;
        for block in &self.blocks {
            let z = block.dilated.forward(tape, h)?;
            let mut cond = block.conditioning.forward(tape, conditioning)?;
            if upsample > 1 {
                cond = tape.repeat_time(cond, upsample)?;
            }
            let z = tape.add(z, cond)?;
            let filter = tape.slice_channels(z, 0, c)?;
            let gate = tape.slice_channels(z, c, c)?;
            let filter = tape.tanh(filter);
            let gate = tape.sigmoid(gate);
            let act = tape.mul(filter, gate)?;
            let s = block.skip.forward(tape, act)?;
            skips = Some(match skips {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
            let r = block.residual.forward(tape, act)?;
            h = tape.add(h, r)?;
        }
        let mut out = match skips {
            Some(s) => s,
            None => h,
        };
        out = tape.relu(out);
        out = self.post.forward(tape, out)?;
        out = tape.relu(out);
        Ok(self.output.forward(tape, out)?)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        std::iter::once(&self.embedding).chain(
            self.blocks
                .iter()
                .flat_map(|b| [&b.dilated, &b.conditioning, &b.residual, &b.skip])
                .chain([&self.post, &self.output])
                .flat_map(|l| l.params()),
        )
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        std::iter::once(&mut self.embedding).chain(
            self.blocks
                .iter_mut()
                .flat_map(|b| [&mut b.dilated, &mut b.conditioning, &mut b.residual, &mut b.skip])
                .chain([&mut self.post, &mut self.output])
                .flat_map(|l| l.params_mut()),
        )
    }
}

/// Cached single-step evaluation of a [`Decoder`] for autoregressive generation.
///
/// Keeps a ring buffer of each block's recent inputs so every step costs one
/// column per layer.
pub struct IncrementalDecoder<'a> {
    decoder: &'a Decoder,
    /// Per block, conditioning projection `[2C, frames]`.
    cond: Vec<Tensor>,
    upsample: usize,
    history: Vec<Vec<Vec<f64>>>,
    t: usize,
}

impl<'a> IncrementalDecoder<'a> {
    /// `conditioning` is `[D + D_s, frames]`; each frame covers `upsample` samples.
    pub fn new(decoder: &'a Decoder, conditioning: &Tensor, upsample: usize) -> Self {
        let frames = conditioning.shape()[1];
        let cond = decoder
            .blocks
            .iter()
            .map(|b| {
                let out_ch = b.conditioning.out_channels();
                let mut proj = Tensor::zeros(&[out_ch, frames]);
                let mut col = vec![0.0; out_ch];
                for f in 0..frames {
                    b.conditioning.pointwise(&conditioning.column(f), &mut col);
                    for (o, v) in col.iter().enumerate() {
                        proj.data_mut()[o * frames + f] = *v;
                    }
                }
                proj
            })
            .collect();
        let c = decoder.channels();
        let history = decoder
            .blocks
            .iter()
            .map(|b| vec![vec![0.0; c]; (b.dilated.kernel() - 1) * b.dilated.dilation + 1])
            .collect();
        Self { decoder, cond, upsample, history, t: 0 }
    }

    pub fn position(&self) -> usize {
        self.t
    }

    /// Feeds the input symbol at the current position and returns its 256 logits.
    pub fn step(&mut self, symbol: u8) -> Vec<f64> {
        let dec = self.decoder;
        let c = dec.channels();
        let frame = self.t / self.upsample;
        let mut h = dec.embedding.value.row(symbol as usize).to_vec();
        let mut skips: Option<Vec<f64>> = None;
        let mut z = vec![0.0; 2 * c];
        let mut act = vec![0.0; c];
        let mut tmp = vec![0.0; c];
        for (l, block) in dec.blocks.iter().enumerate() {
            let ring = &mut self.history[l];
            let len = ring.len();
            ring[self.t % len].copy_from_slice(&h);
            let k = block.dilated.kernel();
            let d = block.dilated.dilation;
            let w = block.dilated.weight.value.data();
            let b = block.dilated.bias.value.data();
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = b[o];
                for i in 0..c {
                    for j in 0..k {
                        let back = (k - 1 - j) * d;
                        if back <= self.t {
                            acc += w[(o * c + i) * k + j] * ring[(self.t - back) % len][i];
                        }
                    }
                }
                let cond = &self.cond[l];
                *zo = acc + cond.data()[o * cond.shape()[1] + frame];
            }
            for i in 0..c {
                let f = z[i].tanh();
                let g = 1.0 / (1.0 + (-z[c + i]).exp());
                act[i] = f * g;
            }
            block.skip.pointwise(&act, &mut tmp);
            match skips.as_mut() {
                Some(acc) => acc.iter_mut().zip(&tmp).for_each(|(a, v)| *a += v),
                None => skips = Some(tmp.clone()),
            }
            block.residual.pointwise(&act, &mut tmp);
            h.iter_mut().zip(&tmp).for_each(|(a, v)| *a += v);
        }
        let mut out = skips.unwrap_or(h);
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut post = vec![0.0; c];
        dec.post.pointwise(&out, &mut post);
        post.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut logits = vec![0.0; MU_LAW_LEVELS];
        dec.output.pointwise(&post, &mut logits);
        self.t += 1;
        logits
    }
}

/// Draws a symbol from `softmax(logits / temperature)`; argmax when the
/// temperature is zero (ties to the lowest symbol).
pub fn sample_symbol<R: Rng>(logits: &[f64], temperature: f64, rng: &mut R) -> u8 {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        return best as u8;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as u8;
        }
        u -= w;
    }
    // Rounding left `u` past the last bucket.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u8
}
