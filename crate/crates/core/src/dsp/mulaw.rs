//! Continuous mu-law companding (mu = 255) onto 256 symbols.
//!
//! This is the floating-point formula used by sample-level generative models,
//! not the segmented G.711 table. Symbols index the decoder's softmax classes.

use super::{AudioBuffer, FULL_SCALE};

pub const MU: f64 = 255.0;
pub const MU_LAW_LEVELS: usize = 256;
/// Symbol that encodes digital silence.
pub const MU_LAW_SILENCE: u8 = 128;

/// Sequence of 8-bit mu-law symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuLawStream {
    pub symbols: Vec<u8>,
}

impl MuLawStream {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Teacher-forcing input: shifted right by one with silence at position 0.
    pub fn shifted_right(&self) -> MuLawStream {
        let mut symbols = Vec::with_capacity(self.symbols.len());
        if !self.symbols.is_empty() {
            symbols.push(MU_LAW_SILENCE);
            symbols.extend_from_slice(&self.symbols[..self.symbols.len() - 1]);
        }
        MuLawStream { symbols }
    }
}

/// Mu-law symbol of one 16-bit sample.
pub fn compress_sample(sample: i16) -> u8 {
    let x = sample as f64 / FULL_SCALE;
    let f = x.signum() * (1.0 + MU * x.abs()).ln() / (1.0 + MU).ln();
    // f64::round rounds half away from zero.
    ((f + 1.0) / 2.0 * MU).round() as u8
}

/// 16-bit sample reconstructed from one mu-law symbol.
pub fn expand_symbol(symbol: u8) -> i16 {
    let y = symbol as f64 / MU * 2.0 - 1.0;
    let x = y.signum() * (((1.0 + MU).powf(y.abs()) - 1.0) / MU);
    (x * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn mu_law_compress(buffer: &AudioBuffer) -> MuLawStream {
    MuLawStream {
        symbols: buffer.samples.iter().map(|&s| compress_sample(s)).collect(),
    }
}

pub fn mu_law_expand(stream: &MuLawStream, sample_rate: u32) -> AudioBuffer {
    AudioBuffer::new(
        stream.symbols.iter().map(|&s| expand_symbol(s)).collect(),
        sample_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(compress_sample(0), 128);
        assert_eq!(compress_sample(32767), 255);
        assert_eq!(compress_sample(-32768), 0);
        assert_eq!(expand_symbol(255), 32767);
        assert_eq!(expand_symbol(0), -32768);
    }

    #[test]
    fn exhaustive_properties() {
        let mut prev = 0u8;
        let mut max_err = 0.0f64;
        for s in i16::MIN..=i16::MAX {
            let c = compress_sample(s);
            assert!(c >= prev, "compressor not monotone at {s}");
            prev = c;
            let err = (s as f64 - expand_symbol(c) as f64).abs() / FULL_SCALE;
            max_err = max_err.max(err);
        }
        assert!(max_err <= 0.025, "max error {max_err}");
        for s in 0..=255u8 {
            assert_eq!(compress_sample(expand_symbol(s)), s, "symbol {s}");
        }
    }

    #[test]
    fn shift_for_teacher_forcing() {
        let s = MuLawStream { symbols: vec![1, 2, 3] };
        assert_eq!(s.shifted_right().symbols, vec![128, 1, 2]);
        assert!(MuLawStream { symbols: vec![] }.shifted_right().is_empty());
    }

    #[test]
    fn stream_lengths_match() {
        let b = AudioBuffer::new(vec![5, -5, 1000, -32768], 8000);
        let m = mu_law_compress(&b);
        assert_eq!(m.len(), 4);
        let e = mu_law_expand(&m, 8000);
        assert_eq!(e.len(), 4);
        assert_eq!(e.sample_rate, 8000);
    }
}
