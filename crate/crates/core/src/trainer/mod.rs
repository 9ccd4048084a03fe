//! Optimization loop, synthetic data and metrics.

mod metrics;
mod synthetic;

pub use metrics::{csv_header, perplexity, CodeUsage, MetricsRow, MetricsWriter, SnrAccumulator};
pub use synthetic::{generate_synthetic, harmonic_tone, pitch_labels, MAX_F0, MIN_F0, PEAK};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, AudioBuffer, DspError, PitchTrack, PITCH_RATE};
use crate::grad::{Parameter, Tape};
use crate::model::{restart_dead_codes, sample_symbol, CodecModel, EmaAccumulator, LossBreakdown, ModelConfig, ModelError, PreparedExample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFinite { step: usize, breakdown: LossBreakdown },
    #[error("no examples to evaluate")]
    EmptyExamples,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the commitment term.
    pub commitment_weight: f64,
    pub f0_weight: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ema_enabled: bool,
    pub ema_decay: f64,
    pub ema_epsilon: f64,
    /// EMA codewords whose count falls below this are re-seeded from batch
    /// latents after each step; 0 disables restarts.
    pub dead_code_threshold: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Samples per batch item; a multiple of the downsampling factor.
    pub crop_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            commitment_weight: 0.25,
            f0_weight: 1.0,
            steps: 1000,
            batch_size: 4,
            seed: 0,
            ema_enabled: true,
            ema_decay: 0.99,
            ema_epsilon: 1e-5,
            dead_code_threshold: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            crop_samples: 5120,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        // A zero learning rate is allowed for dry runs.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("commitment_weight", self.commitment_weight),
            ("f0_weight", self.f0_weight),
            ("ema_epsilon", self.ema_epsilon),
            ("dead_code_threshold", self.dead_code_threshold),
            ("adam_epsilon", self.adam_epsilon),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("ema_decay", self.ema_decay), ("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive".into());
        }
        let factor = model.downsampling_factor();
        if self.crop_samples == 0 || !self.crop_samples.is_multiple_of(factor) {
            return bad(format!("crop_samples {} is not a positive multiple of {factor}", self.crop_samples));
        }
        Ok(())
    }
}

/// One utterance with its pitch annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceExample {
    pub audio: AudioBuffer,
    pub pitch: PitchTrack,
    pub id: String,
}

impl UtteranceExample {
    /// Pads to the downsampling factor and annotates pitch with the tracker.
    pub fn from_audio(audio: &AudioBuffer, id: impl Into<String>, config: &ModelConfig) -> Result<Self, TrainError> {
        let audio = dsp::pad_to_multiple(audio, config.downsampling_factor());
        let pitch = dsp::extract_f0(&audio)?;
        Ok(Self { audio, pitch, id: id.into() })
    }

    pub fn prepare(&self, config: &ModelConfig) -> Result<PreparedExample, TrainError> {
        Ok(PreparedExample::new(&self.audio, &self.pitch, config)?)
    }

    /// `len` samples starting at `start`, both multiples of the downsampling factor.
    pub fn crop(&self, start: usize, len: usize, config: &ModelConfig) -> Result<PreparedExample, TrainError> {
        let hop = (config.sample_rate / PITCH_RATE) as usize;
        let audio = AudioBuffer::new(self.audio.samples[start..start + len].to_vec(), self.audio.sample_rate);
        let pitch = PitchTrack::new(
            self.pitch.log_f0[start / hop..(start + len) / hop].to_vec(),
            self.pitch.voiced[start / hop..(start + len) / hop].to_vec(),
        );
        Ok(PreparedExample::new(&audio, &pitch, config)?)
    }
}

/// Reads every `.wav` in `dir` (sorted by name) and annotates it with the pitch tracker.
pub fn load_wav_dir(dir: &Path, config: &ModelConfig) -> Result<Vec<UtteranceExample>, TrainError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(TrainError::EmptyExamples);
    }
    paths
        .iter()
        .map(|p| {
            let audio = dsp::read_wav(p)?;
            if audio.sample_rate != config.sample_rate {
                return Err(TrainError::Config(format!(
                    "{} has sample rate {}, model expects {}",
                    p.display(),
                    audio.sample_rate,
                    config.sample_rate
                )));
            }
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            UtteranceExample::from_audio(&audio, id, config)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction; moments are keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Adam {
    pub step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, p: &mut Parameter, cfg: &TrainConfig) {
        let n = p.value.len();
        let mom = self
            .moments
            .entry(p.name.clone())
            .or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let grad = p.grad.data();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
            mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
            let m_hat = mom.m[i] / c1;
            let v_hat = mom.v[i] / c2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Mean over batch items.
    pub loss: LossBreakdown,
    pub usage: CodeUsage,
    pub snr: SnrAccumulator,
}

/// Forward and backward over `batch`, then one Adam step on the network (and
/// on the codebooks unless EMA is enabled) and one EMA codebook step followed
/// by dead-code restarts. Restart draws use a generator seeded from
/// `(cfg.seed, step)`.
pub fn train_step(
    model: &mut CodecModel,
    optimizer: &mut Adam,
    batch: &[PreparedExample],
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyExamples);
    }
    sync_ema(model, cfg);
    model.zero_grads();
    let mut losses = Vec::with_capacity(batch.len());
    let mut usage = CodeUsage::new(model.config.num_maps, model.config.codebook_size);
    let mut snr = SnrAccumulator::default();
    let mut ema = EmaAccumulator::new(&model.codebooks);
    let maps = model.config.num_maps;
    let dim = model.config.per_map_dim();
    let mut pools: Vec<Vec<Vec<f64>>> = vec![Vec::new(); maps];
    let mut speaker_pool = Vec::new();
    for ex in batch {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, ex, cfg.commitment_weight, cfg.f0_weight)?;
        if !fwd.breakdown.is_finite() {
            return Err(TrainError::NonFinite { step, breakdown: fwd.breakdown });
        }
        let scaled = tape.scale(fwd.total, 1.0 / batch.len() as f64);
        tape.backward(scaled).map_err(ModelError::from)?;
        model.accumulate_grads(&tape);

        usage.add(&fwd.indices);
        snr.add(&ex.samples, &argmax_symbols(tape.value(fwd.logits)));
        if model.codebooks.ema.is_some() {
            let latents = tape.value(fwd.latents);
            ema.add_frames(latents, &fwd.indices);
            ema.add_speaker(tape.value(fwd.speaker_pooled).data(), fwd.speaker_index);
            for t in 0..latents.shape()[1] {
                let col = latents.column(t);
                for (m, pool) in pools.iter_mut().enumerate() {
                    pool.push(col[m * dim..(m + 1) * dim].to_vec());
                }
            }
            speaker_pool.push(tape.value(fwd.speaker_pooled).data().to_vec());
        }
        losses.push(fwd.breakdown);
    }
    let loss = LossBreakdown::mean(&losses).expect("non-empty batch");

    optimizer.begin_step();
    for p in model.network_params_mut() {
        optimizer.update(p, cfg);
    }
    if model.codebooks.ema.is_some() {
        model.codebooks.apply_ema(&ema);
        if cfg.dead_code_threshold > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let books = &mut model.codebooks;
            let state = books.ema.as_mut().expect("ema enabled");
            let eps = state.epsilon;
            for ((book, stats), pool) in books.maps.iter_mut().zip(&mut state.maps).zip(&pools) {
                restart_dead_codes(book, stats, eps, cfg.dead_code_threshold, pool, &mut rng);
            }
            restart_dead_codes(&mut books.speaker, &mut state.speaker, eps, cfg.dead_code_threshold, &speaker_pool, &mut rng);
        }
    } else {
        for p in model.codebooks.all_mut() {
            optimizer.update(p, cfg);
        }
    }
    Ok(StepReport { loss, usage, snr })
}

fn sync_ema(model: &mut CodecModel, cfg: &TrainConfig) {
    if cfg.ema_enabled {
        model.codebooks.enable_ema(cfg.ema_decay, cfg.ema_epsilon);
    } else {
        model.codebooks.disable_ema();
    }
}

/// Per-column argmax of `[256, T]` logits.
fn argmax_symbols(logits: &crate::grad::Tensor) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..logits.shape()[1]).map(|t| sample_symbol(&logits.column(t), 0.0, &mut rng)).collect()
}

/// Mean loss, per-map perplexity and teacher-forced SNR over whole examples.
pub fn evaluate(
    model: &CodecModel,
    examples: &[PreparedExample],
    cfg: &TrainConfig,
    step: usize,
) -> Result<MetricsRow, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyExamples);
    }
    let mut losses = Vec::with_capacity(examples.len());
    let mut usage = CodeUsage::new(model.config.num_maps, model.config.codebook_size);
    let mut snr = SnrAccumulator::default();
    for ex in examples {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, ex, cfg.commitment_weight, cfg.f0_weight)?;
        usage.add(&fwd.indices);
        snr.add(&ex.samples, &argmax_symbols(tape.value(fwd.logits)));
        losses.push(fwd.breakdown);
    }
    Ok(MetricsRow {
        step,
        loss: LossBreakdown::mean(&losses).expect("non-empty"),
        perplexity: usage.perplexity(),
        teacher_forced_snr_db: snr.db(),
    })
}

/// Owns a training run: model, optimizer, corpus and the crop sampler.
pub struct Trainer {
    pub model: CodecModel,
    pub config: TrainConfig,
    pub optimizer: Adam,
    corpus: Vec<UtteranceExample>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: CodecModel, config: TrainConfig, corpus: Vec<UtteranceExample>) -> Result<Self, TrainError> {
        config.validate(&model.config)?;
        if corpus.is_empty() {
            return Err(TrainError::EmptyExamples);
        }
        for u in &corpus {
            u.prepare(&model.config)?;
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { model, config, optimizer: Adam::new(), corpus, rng, step: 0 })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn corpus(&self) -> &[UtteranceExample] {
        &self.corpus
    }

    /// Random factor-aligned crops; utterances shorter than the crop are used whole.
    pub fn next_batch(&mut self) -> Result<Vec<PreparedExample>, TrainError> {
        let factor = self.model.config.downsampling_factor();
        (0..self.config.batch_size)
            .map(|_| {
                let u = &self.corpus[self.rng.random_range(0..self.corpus.len())];
                let len = u.audio.len();
                if len <= self.config.crop_samples {
                    return u.prepare(&self.model.config);
                }
                let slots = (len - self.config.crop_samples) / factor;
                let start = self.rng.random_range(0..=slots) * factor;
                u.crop(start, self.config.crop_samples, &self.model.config)
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<MetricsRow, TrainError> {
        let batch = self.next_batch()?;
        self.step += 1;
        let report = train_step(&mut self.model, &mut self.optimizer, &batch, &self.config, self.step)?;
        Ok(MetricsRow {
            step: self.step,
            loss: report.loss,
            perplexity: report.usage.perplexity(),
            teacher_forced_snr_db: report.snr.db(),
        })
    }

    /// Runs the remaining configured steps, passing each row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow) -> Result<(), TrainError>) -> Result<Vec<MetricsRow>, TrainError> {
        let mut rows = Vec::with_capacity(self.config.steps.saturating_sub(self.step));
        while self.step < self.config.steps {
            let row = self.step()?;
            on_row(&row)?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn evaluate(&self) -> Result<MetricsRow, TrainError> {
        let examples: Vec<PreparedExample> =
            self.corpus.iter().map(|u| u.prepare(&self.model.config)).collect::<Result<_, _>>()?;
        evaluate(&self.model, &examples, &self.config, self.step)
    }
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub seed: u64,
    pub initial_total: f64,
    pub final_total: f64,
    pub total_ratio: f64,
    pub initial_f0: f64,
    pub final_f0: f64,
    pub f0_reduction: f64,
    pub evaluation: MetricsRow,
}

/// Mean of `f` over the first 10 rows and the last 20.
fn head_tail(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> (f64, f64) {
    let mean = |s: &[MetricsRow]| s.iter().map(&f).sum::<f64>() / s.len().max(1) as f64;
    (mean(&rows[..rows.len().min(10)]), mean(&rows[rows.len().saturating_sub(20)..]))
}

impl TrainSummary {
    pub fn new(rows: &[MetricsRow], seed: u64, evaluation: MetricsRow) -> Self {
        let (initial_total, final_total) = head_tail(rows, |r| r.loss.total);
        let (initial_f0, final_f0) = head_tail(rows, |r| r.loss.f0_loss);
        Self {
            steps: rows.len(),
            seed,
            initial_total,
            final_total,
            total_ratio: final_total / initial_total,
            initial_f0,
            final_f0,
            f0_reduction: 1.0 - final_f0 / initial_f0,
            evaluation,
        }
    }
}
