//! Product vector quantization with straight-through gradients and optional
//! exponential-moving-average codebook learning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::uniform;
use super::ModelError;
use crate::grad::{Parameter, Tape, Tensor, Var};

/// Which of several equidistant codewords wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    Lowest,
    /// Only used to exercise the verification suite's failure path.
    Highest,
}

/// Index of the row of `codebook` nearest to `v` in squared Euclidean
/// distance. Ties resolve to the lowest index.
pub fn nearest_index(codebook: &Tensor, v: &[f64]) -> usize {
    nearest_index_with(codebook, v, TieBreak::Lowest)
}

pub fn nearest_index_with(codebook: &Tensor, v: &[f64], tie: TieBreak) -> usize {
    let k = codebook.shape()[0];
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for r in 0..k {
        let d = codebook.row(r).iter().zip(v).fold(0.0, |acc, (e, x)| acc + (x - e) * (x - e));
        if d < best_dist || (tie == TieBreak::Highest && d == best_dist) {
            best_dist = d;
            best = r;
        }
    }
    best
}

/// Result of quantizing a `[D, T]` latent sequence.
#[derive(Debug, Clone)]
pub struct Quantized {
    /// `indices[t][m]` is the codeword chosen by map `m` at frame `t`.
    pub indices: Vec<Vec<u16>>,
    /// Straight-through output with the value of the chosen codewords.
    pub quantized: Var,
    /// Sum over maps of `mean ||sg(z) - e||^2`.
    pub codebook_loss: Var,
    /// Sum over maps of `mean ||z - sg(e)||^2`.
    pub commitment_loss: Var,
}

/// Splits each frame into `codebooks.len()` contiguous sub-vectors and snaps
/// each to its nearest codeword.
pub fn quantize(tape: &mut Tape, latents: Var, codebooks: &[Var]) -> Result<Quantized, ModelError> {
    quantize_with(tape, latents, codebooks, TieBreak::Lowest)
}

pub fn quantize_with(tape: &mut Tape, latents: Var, codebooks: &[Var], tie: TieBreak) -> Result<Quantized, ModelError> {
    let (d, t) = match tape.shape(latents) {
        [d, t] => (*d, *t),
        s => return Err(ModelError::Shape(format!("latents must be [D, T], got {s:?}"))),
    };
    let maps = codebooks.len();
    if maps == 0 || d % maps != 0 {
        return Err(ModelError::Shape(format!("{d} latent channels cannot split over {maps} maps")));
    }
    let dim = d / maps;
    let mut indices = vec![Vec::with_capacity(maps); t];
    let mut q_data = Vec::with_capacity(d * t);
    let mut cb_total: Option<Var> = None;
    let mut commit_total: Option<Var> = None;
    for (m, &cb) in codebooks.iter().enumerate() {
        let book = tape.value(cb);
        if book.shape().len() != 2 || book.shape()[0] == 0 {
            return Err(ModelError::EmptyCodebook);
        }
        if book.shape()[1] != dim {
            return Err(ModelError::Shape(format!("codebook width {} for sub-vector size {dim}", book.shape()[1])));
        }
        let z = tape.slice_channels(latents, m * dim, dim)?;
        let zv = tape.value(z);
        let chosen: Vec<usize> = (0..t).map(|tt| nearest_index_with(tape.value(cb), &zv.column(tt), tie)).collect();
        for (frame, &c) in indices.iter_mut().zip(&chosen) {
            frame.push(c as u16);
        }
        let e = tape.gather_rows(cb, &chosen)?;
        q_data.extend_from_slice(tape.value(e).data());
        let z_stop = tape.detach(z);
        let e_stop = tape.detach(e);
        let cb_loss = tape.mse(z_stop, e, None)?;
        let commit = tape.mse(z, e_stop, None)?;
        cb_total = Some(match cb_total {
            Some(acc) => tape.add(acc, cb_loss)?,
            None => cb_loss,
        });
        commit_total = Some(match commit_total {
            Some(acc) => tape.add(acc, commit)?,
            None => commit,
        });
    }
    let q_value = Tensor::new(vec![d, t], q_data)?;
    let quantized = tape.straight_through(latents, &q_value)?;
    Ok(Quantized {
        indices,
        quantized,
        codebook_loss: cb_total.expect("at least one map"),
        commitment_loss: commit_total.expect("at least one map"),
    })
}

/// Utterance-level speaker code.
#[derive(Debug, Clone)]
pub struct SpeakerCode {
    pub index: u16,
    /// Straight-through embedding, shape `[D_s]`.
    pub embedding: Var,
    /// Time-pooled features before quantization.
    pub pooled: Var,
    pub codebook_loss: Var,
    pub commitment_loss: Var,
}

/// Mean-pools `[D_s, T]` features over time and quantizes the result against
/// the speaker codebook.
pub fn speaker_code(tape: &mut Tape, features: Var, codebook: Var) -> Result<SpeakerCode, ModelError> {
    let ds = tape.shape(features)[0];
    let pooled = tape.mean_over_time(features)?;
    let column = tape.reshape(pooled, &[ds, 1])?;
    let q = quantize(tape, column, &[codebook])?;
    let embedding = tape.reshape(q.quantized, &[ds])?;
    Ok(SpeakerCode {
        index: q.indices[0][0],
        embedding,
        pooled,
        codebook_loss: q.codebook_loss,
        commitment_loss: q.commitment_loss,
    })
}

/// Running assignment statistics for one codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaStats {
    pub counts: Vec<f64>,
    pub sums: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    pub epsilon: f64,
    pub maps: Vec<EmaStats>,
    pub speaker: EmaStats,
}

/// The per-map codebooks plus the speaker codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSet {
    pub maps: Vec<Parameter>,
    pub speaker: Parameter,
    pub ema: Option<EmaState>,
}

impl CodebookSet {
    /// Entries drawn from `U(-1/K, 1/K)`.
    pub fn new<R: Rng>(rng: &mut R, num_maps: usize, k: usize, dim: usize, k_s: usize, dim_s: usize) -> Self {
        let maps = (0..num_maps)
            .map(|m| Parameter::new(format!("codebook.map{m}"), uniform(rng, &[k, dim], 1.0 / k as f64)))
            .collect();
        let speaker = Parameter::new("codebook.speaker", uniform(rng, &[k_s, dim_s], 1.0 / k_s as f64));
        Self { maps, speaker, ema: None }
    }

    pub fn all(&self) -> impl Iterator<Item = &Parameter> {
        self.maps.iter().chain(std::iter::once(&self.speaker))
    }

    pub fn all_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.maps.iter_mut().chain(std::iter::once(&mut self.speaker))
    }

    /// Switches to moving-average learning. Statistics start from zero counts
    /// with sums chosen so every codeword keeps its current value.
    pub fn enable_ema(&mut self, decay: f64, epsilon: f64) {
        if self.ema.as_ref().is_some_and(|e| e.decay == decay && e.epsilon == epsilon) {
            return;
        }
        let mut init = |p: &mut Parameter| {
            let k = p.value.shape()[0];
            let mut sums = p.value.clone();
            for v in sums.data_mut() {
                *v *= epsilon;
            }
            let counts = vec![0.0; k];
            rederive(p, &counts, &sums, epsilon);
            EmaStats { counts, sums }
        };
        let maps = self.maps.iter_mut().map(&mut init).collect();
        let speaker = init(&mut self.speaker);
        self.ema = Some(EmaState { decay, epsilon, maps, speaker });
    }

    pub fn disable_ema(&mut self) {
        self.ema = None;
    }

    /// Applies one moving-average step from batch statistics.
    pub fn apply_ema(&mut self, batch: &EmaAccumulator) {
        let Some(state) = self.ema.as_mut() else { return };
        let (decay, eps) = (state.decay, state.epsilon);
        let step = |p: &mut Parameter, stats: &mut EmaStats, acc: &EmaStats| {
            for (c, n) in stats.counts.iter_mut().zip(&acc.counts) {
                *c = decay * *c + (1.0 - decay) * n;
            }
            for (s, x) in stats.sums.data_mut().iter_mut().zip(acc.sums.data()) {
                *s = decay * *s + (1.0 - decay) * x;
            }
            rederive(p, &stats.counts, &stats.sums, eps);
        };
        for ((p, stats), acc) in self.maps.iter_mut().zip(&mut state.maps).zip(&batch.maps) {
            step(p, stats, acc);
        }
        step(&mut self.speaker, &mut state.speaker, &batch.speaker);
    }
}

/// Moves every codeword whose moving-average count is below `threshold` onto
/// a vector drawn uniformly from `pool`, resetting its statistics to a zero
/// count. Returns how many codewords moved.
pub fn restart_dead_codes<R: Rng>(
    book: &mut Parameter,
    stats: &mut EmaStats,
    epsilon: f64,
    threshold: f64,
    pool: &[Vec<f64>],
    rng: &mut R,
) -> usize {
    if pool.is_empty() {
        return 0;
    }
    let mut moved = 0;
    for r in 0..stats.counts.len() {
        if stats.counts[r] >= threshold {
            continue;
        }
        let v = &pool[rng.random_range(0..pool.len())];
        stats.counts[r] = 0.0;
        for (s, x) in stats.sums.row_mut(r).iter_mut().zip(v) {
            *s = x * epsilon;
        }
        moved += 1;
    }
    rederive(book, &stats.counts, &stats.sums, epsilon);
    moved
}

fn rederive(p: &mut Parameter, counts: &[f64], sums: &Tensor, eps: f64) {
    let dim = p.value.shape()[1];
    for (r, &c) in counts.iter().enumerate() {
        let denom = c + eps;
        for (e, s) in p.value.row_mut(r).iter_mut().zip(&sums.data()[r * dim..(r + 1) * dim]) {
            *e = s / denom;
        }
    }
}

/// Per-batch codeword assignment counts and vector sums.
#[derive(Debug, Clone)]
pub struct EmaAccumulator {
    pub maps: Vec<EmaStats>,
    pub speaker: EmaStats,
}

impl EmaAccumulator {
    pub fn new(set: &CodebookSet) -> Self {
        let empty = |p: &Parameter| EmaStats {
            counts: vec![0.0; p.value.shape()[0]],
            sums: Tensor::zeros(p.value.shape()),
        };
        Self { maps: set.maps.iter().map(empty).collect(), speaker: empty(&set.speaker) }
    }

    fn add(stats: &mut EmaStats, index: usize, v: &[f64]) {
        stats.counts[index] += 1.0;
        for (s, x) in stats.sums.row_mut(index).iter_mut().zip(v) {
            *s += x;
        }
    }

    /// Records the pre-quantization latents `[D, T]` of one utterance.
    pub fn add_frames(&mut self, latents: &Tensor, indices: &[Vec<u16>]) {
        let maps = self.maps.len();
        let dim = latents.shape()[0] / maps;
        for (t, frame) in indices.iter().enumerate() {
            let col = latents.column(t);
            for (m, &idx) in frame.iter().enumerate() {
                Self::add(&mut self.maps[m], idx as usize, &col[m * dim..(m + 1) * dim]);
            }
        }
    }

    pub fn add_speaker(&mut self, pooled: &[f64], index: u16) {
        Self::add(&mut self.speaker, index as usize, pooled);
    }
}
