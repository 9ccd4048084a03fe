//! Harmonic-tone corpus with exact pitch labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use super::{TrainError, UtteranceExample};
use crate::dsp::{AudioBuffer, PitchTrack, PITCH_RATE};
use crate::model::ModelConfig;

/// Peak amplitude of generated audio relative to full scale.
pub const PEAK: f64 = 0.5;
pub const MIN_F0: f64 = 80.0;
pub const MAX_F0: f64 = 300.0;

/// Renders `sum_h a_h sin(h * phase)` where the phase follows `f0_hz` per
/// sample. Samples with `f0_hz <= 0` are silent and reset nothing; the phase
/// simply holds. The result is scaled to a peak of [`PEAK`].
pub fn harmonic_tone(f0_hz: &[f64], amplitudes: &[f64], sample_rate: u32) -> AudioBuffer {
    let mut phase = 0.0;
    let raw: Vec<f64> = f0_hz
        .iter()
        .map(|&f| {
            if f <= 0.0 {
                return 0.0;
            }
            let v = amplitudes.iter().enumerate().map(|(h, a)| a * ((h + 1) as f64 * phase).sin()).sum();
            phase = (phase + TAU * f / sample_rate as f64) % TAU;
            v
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    let scaled: Vec<f64> = raw.iter().map(|v| v * gain).collect();
    AudioBuffer::from_normalized(&scaled, sample_rate)
}

/// Pitch labels at 200 Hz read from the per-sample contour at each frame centre.
pub fn pitch_labels(f0_hz: &[f64], sample_rate: u32) -> PitchTrack {
    let hop = (sample_rate / PITCH_RATE) as usize;
    let frames = f0_hz.len() / hop;
    let (log_f0, voiced) = (0..frames)
        .map(|i| {
            let f = f0_hz[i * hop + hop / 2];
            if f > 0.0 {
                (f.ln(), true)
            } else {
                (0.0, false)
            }
        })
        .unzip();
    PitchTrack::new(log_f0, voiced)
}

fn draw_contour(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    let base = rng.random_range(MIN_F0..=MAX_F0);
    let depth = rng.random_range(0.0..0.15);
    let rate = rng.random_range(0.3..2.0);
    let offset = rng.random_range(0.0..TAU);
    let mut f0: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / sample_rate as f64;
            (base * (depth * (TAU * rate * t + offset).sin()).exp()).clamp(MIN_F0, MAX_F0)
        })
        .collect();
    if rng.random_bool(0.5) {
        let gap = (len as f64 * rng.random_range(0.1..0.3)) as usize;
        let start = rng.random_range(0..=len - gap);
        f0[start..start + gap].fill(0.0);
    }
    f0
}

/// `num_utterances` tones of `duration_s` seconds each. The fundamental
/// starts in `[80, 300]` Hz and drifts slowly; three harmonics have random
/// amplitudes; about half the utterances contain one silent gap.
pub fn generate_synthetic(
    num_utterances: usize,
    duration_s: f64,
    seed: u64,
    config: &ModelConfig,
) -> Result<Vec<UtteranceExample>, TrainError> {
    let sr = config.sample_rate;
    let exact = duration_s * sr as f64;
    let len = exact.round() as usize;
    let factor = config.downsampling_factor();
    if duration_s <= 0.0 || (exact - len as f64).abs() > 1e-6 || !len.is_multiple_of(factor) {
        return Err(TrainError::Config(format!(
            "duration {duration_s} s is not a positive multiple of {factor} samples at {sr} Hz"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..num_utterances)
        .map(|i| {
            let f0 = draw_contour(&mut rng, len, sr);
            let amplitudes: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
            UtteranceExample {
                audio: harmonic_tone(&f0, &amplitudes, sr),
                pitch: pitch_labels(&f0, sr),
                id: format!("synthetic-{seed}-{i:04}"),
            }
        })
        .collect())
}
