//! Deterministic signal plumbing: companding, WAV I/O, padding and pitch tracking.

mod mulaw;
mod pitch;
mod wav;

pub use mulaw::{compress_sample, expand_symbol, mu_law_compress, mu_law_expand, MuLawStream, MU, MU_LAW_LEVELS, MU_LAW_SILENCE};
pub use pitch::{extract_f0, sine_tone, PitchTrack, PITCH_RATE};
pub use wav::{read_wav, write_wav};

use thiserror::Error;

/// Full-scale divisor for normalizing 16-bit PCM into `[-1, 1)`.
pub const FULL_SCALE: f64 = 32768.0;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("not a RIFF/WAVE file: {0}")]
    NotWave(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("sample rate {0} Hz is not divisible by the {1} Hz pitch rate")]
    PitchRate(u32, u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pitch track: {0}")]
    PitchCsv(String),
}

/// Mono 16-bit PCM waveform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioBuffer {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self { samples, sample_rate }
    }

    /// Builds a buffer from normalized floats, rounding and clamping to the int16 range.
    pub fn from_normalized(values: &[f64], sample_rate: u32) -> Self {
        let samples = values
            .iter()
            .map(|&v| (v * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16)
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples scaled into `[-1, 1)`.
    pub fn normalized(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64 / FULL_SCALE).collect()
    }
}

/// Appends trailing zeros until the length is a multiple of `factor`.
pub fn pad_to_multiple(buffer: &AudioBuffer, factor: usize) -> AudioBuffer {
    assert!(factor >= 1, "padding factor must be at least 1");
    let len = buffer.samples.len();
    let padded = len.div_ceil(factor) * factor;
    let mut samples = buffer.samples.clone();
    samples.resize(padded, 0);
    AudioBuffer::new(samples, buffer.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_examples() {
        let b = AudioBuffer::new(vec![1; 16000], 16000);
        assert_eq!(pad_to_multiple(&b, 160).len(), 16000);
        let b = AudioBuffer::new(vec![1; 16001], 16000);
        let p = pad_to_multiple(&b, 160);
        assert_eq!(p.len(), 16160);
        assert_eq!(&p.samples[..16001], &b.samples[..]);
        assert!(p.samples[16001..].iter().all(|&s| s == 0));
        let b = AudioBuffer::new(vec![], 16000);
        assert_eq!(pad_to_multiple(&b, 160).len(), 0);
    }

    #[test]
    fn from_normalized_clamps() {
        let b = AudioBuffer::from_normalized(&[1.5, -2.0, 0.5], 16000);
        assert_eq!(b.samples, vec![32767, -32768, 16384]);
    }

    proptest::proptest! {
        #[test]
        fn pad_law(samples in proptest::collection::vec(proptest::num::i16::ANY, 0..600), factor in 1usize..200) {
            let b = AudioBuffer::new(samples.clone(), 16000);
            let p = pad_to_multiple(&b, factor);
            proptest::prop_assert_eq!(p.len() % factor, 0);
            proptest::prop_assert!(p.len() >= samples.len() && p.len() < samples.len() + factor);
            proptest::prop_assert_eq!(&p.samples[..samples.len()], &samples[..]);
        }
    }
}
