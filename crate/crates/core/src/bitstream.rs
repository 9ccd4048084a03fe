//! The `.vqsc` container: a fixed little-endian header followed by the code
//! indices packed MSB-first at `ceil(log2 K)` bits each.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VQSC"
//! 4       1     version (1)
//! 5       4     sample_rate (u32 LE)
//! 9       1     num_strides = n
//! 10      n     strides, one byte each
//! 10+n    1     num_maps
//! 11+n    2     codebook_size (u16 LE)
//! 13+n    2     speaker_codebook_size (u16 LE)
//! 15+n    2     speaker_index (u16 LE)
//! 17+n    4     num_frames (u32 LE)
//! 21+n    4     num_samples (u32 LE)
//! 25+n          payload
//! ```
//!
//! Payload indices run frame-major then map-major; the final byte is padded
//! with zero bits.

use thiserror::Error;

use crate::model::{bits_for, CodeSequence, ModelConfig};

pub const MAGIC: [u8; 4] = *b"VQSC";
pub const VERSION: u8 = 1;
/// Header bytes excluding the stride list.
pub const FIXED_HEADER_BYTES: usize = 25;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("bad magic {0:02x?}, expected \"VQSC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    UnsupportedVersion(u8),
    #[error("truncated stream: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("{0} unexpected bytes after the payload")]
    TrailingData(usize),
    #[error("nonzero padding bits in final payload byte")]
    NonzeroPadding,
    #[error("index {index} out of range for codebook of size {size} (frame {frame}, map {map})")]
    IndexOutOfRange { frame: usize, map: usize, index: u32, size: usize },
    #[error("speaker index {index} out of range for codebook of size {size}")]
    SpeakerOutOfRange { index: u16, size: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("stream does not match model config: {0}")]
    ConfigMismatch(String),
}

/// The configuration fields a stream carries: enough to check it against a
/// model and to compute its rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamLayout {
    pub sample_rate: u32,
    pub strides: Vec<u8>,
    pub num_maps: u8,
    pub codebook_size: u16,
    pub speaker_codebook_size: u16,
}

impl StreamLayout {
    pub fn from_config(config: &ModelConfig) -> Result<Self, BitstreamError> {
        config.validate().map_err(|e| BitstreamError::InvalidHeader(e.to_string()))?;
        Ok(Self {
            sample_rate: config.sample_rate,
            strides: config.strides.iter().map(|&s| s as u8).collect(),
            num_maps: config.num_maps as u8,
            codebook_size: config.codebook_size as u16,
            speaker_codebook_size: config.speaker_codebook_size as u16,
        })
    }

    pub fn downsampling_factor(&self) -> u64 {
        self.strides.iter().map(|&s| s as u64).product()
    }

    pub fn bits_per_index(&self) -> u32 {
        bits_for(self.codebook_size as usize)
    }

    /// Errors with a description of the first field that differs from `config`.
    pub fn check_matches(&self, config: &ModelConfig) -> Result<(), BitstreamError> {
        let want = Self::from_config(config)?;
        let mismatch = |field: &str, got: String, want: String| {
            Err(BitstreamError::ConfigMismatch(format!("{field}: stream has {got}, model has {want}")))
        };
        if self.sample_rate != want.sample_rate {
            return mismatch("sample_rate", self.sample_rate.to_string(), want.sample_rate.to_string());
        }
        if self.strides != want.strides {
            return mismatch("strides", format!("{:?}", self.strides), format!("{:?}", want.strides));
        }
        if self.num_maps != want.num_maps {
            return mismatch("num_maps", self.num_maps.to_string(), want.num_maps.to_string());
        }
        if self.codebook_size != want.codebook_size {
            return mismatch("codebook_size", self.codebook_size.to_string(), want.codebook_size.to_string());
        }
        if self.speaker_codebook_size != want.speaker_codebook_size {
            return mismatch(
                "speaker_codebook_size",
                self.speaker_codebook_size.to_string(),
                want.speaker_codebook_size.to_string(),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub layout: StreamLayout,
    pub speaker_index: u16,
    pub num_frames: u32,
    pub num_samples: u32,
}

impl BitstreamHeader {
    pub fn size(&self) -> usize {
        header_size(self.layout.strides.len())
    }

    pub fn payload_bits(&self) -> u64 {
        self.num_frames as u64 * self.layout.num_maps as u64 * self.layout.bits_per_index() as u64
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits().div_ceil(8) as usize
    }

    fn write(&self, out: &mut Vec<u8>) {
        let l = &self.layout;
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&l.sample_rate.to_le_bytes());
        out.push(l.strides.len() as u8);
        out.extend_from_slice(&l.strides);
        out.push(l.num_maps);
        out.extend_from_slice(&l.codebook_size.to_le_bytes());
        out.extend_from_slice(&l.speaker_codebook_size.to_le_bytes());
        out.extend_from_slice(&self.speaker_index.to_le_bytes());
        out.extend_from_slice(&self.num_frames.to_le_bytes());
        out.extend_from_slice(&self.num_samples.to_le_bytes());
    }

    fn parse(bytes: &[u8]) -> Result<Self, BitstreamError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(BitstreamError::Truncated { need: n, got: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(BitstreamError::BadMagic(magic));
        }
        need(5)?;
        if bytes[4] != VERSION {
            return Err(BitstreamError::UnsupportedVersion(bytes[4]));
        }
        need(10)?;
        let n = bytes[9] as usize;
        need(header_size(n))?;
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let header = Self {
            layout: StreamLayout {
                sample_rate: u32_at(5),
                strides: bytes[10..10 + n].to_vec(),
                num_maps: bytes[10 + n],
                codebook_size: u16_at(11 + n),
                speaker_codebook_size: u16_at(13 + n),
            },
            speaker_index: u16_at(15 + n),
            num_frames: u32_at(17 + n),
            num_samples: u32_at(21 + n),
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<(), BitstreamError> {
        let l = &self.layout;
        let bad = |m: String| Err(BitstreamError::InvalidHeader(m));
        if l.strides.is_empty() || l.strides.contains(&0) {
            return bad(format!("strides must be non-empty and positive, got {:?}", l.strides));
        }
        if l.num_maps == 0 || l.codebook_size == 0 || l.speaker_codebook_size == 0 {
            return bad("num_maps and codebook sizes must be positive".into());
        }
        if self.speaker_index >= l.speaker_codebook_size {
            return Err(BitstreamError::SpeakerOutOfRange {
                index: self.speaker_index,
                size: l.speaker_codebook_size as usize,
            });
        }
        let covered = self.num_frames as u128 * l.downsampling_factor() as u128;
        if covered < self.num_samples as u128 {
            return bad(format!(
                "{} frames cover {covered} samples, fewer than num_samples {}",
                self.num_frames, self.num_samples
            ));
        }
        Ok(())
    }
}

/// Header size in bytes for a given number of encoder layers.
pub fn header_size(num_strides: usize) -> usize {
    FIXED_HEADER_BYTES + num_strides
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedStream {
    pub header: BitstreamHeader,
    pub payload: Vec<u8>,
}

impl PackedStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header.size() + self.payload.len());
        self.header.write(&mut out);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a container, checking the header and the exact payload length.
    /// Padding and index ranges are checked by [`unpack`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BitstreamError> {
        let header = BitstreamHeader::parse(bytes)?;
        let start = header.size();
        let end = start + header.payload_bytes();
        if bytes.len() < end {
            return Err(BitstreamError::Truncated { need: end, got: bytes.len() });
        }
        if bytes.len() > end {
            return Err(BitstreamError::TrailingData(bytes.len() - end));
        }
        Ok(Self { header, payload: bytes[start..end].to_vec() })
    }

    /// Payload bits per second of audio. `None` for an empty stream.
    pub fn measured_bitrate(&self) -> Option<f64> {
        if self.header.num_samples == 0 {
            return None;
        }
        let bits = self.header.payload_bits() as u128 * self.header.layout.sample_rate as u128;
        Some(bits as f64 / self.header.num_samples as f64)
    }
}

/// Payload bits per second: frame rate times `num_maps * ceil(log2 K)`.
pub fn bitrate(config: &ModelConfig) -> f64 {
    (config.sample_rate as u64 * config.bits_per_frame() as u64) as f64 / config.downsampling_factor() as f64
}

pub fn pack(codes: &CodeSequence, config: &ModelConfig) -> Result<PackedStream, BitstreamError> {
    let layout = StreamLayout::from_config(config)?;
    let num_frames = u32::try_from(codes.num_frames())
        .map_err(|_| BitstreamError::InvalidHeader(format!("{} frames exceed u32", codes.num_frames())))?;
    let header = BitstreamHeader {
        layout,
        speaker_index: codes.speaker_index,
        num_frames,
        num_samples: codes.num_samples,
    };
    header.validate()?;
    let k = config.codebook_size;
    let bits = header.layout.bits_per_index();
    let mut writer = BitWriter::with_capacity(header.payload_bytes());
    for (t, frame) in codes.frames.iter().enumerate() {
        if frame.len() != config.num_maps {
            return Err(BitstreamError::InvalidHeader(format!(
                "frame {t} has {} indices, expected {}",
                frame.len(),
                config.num_maps
            )));
        }
        for (m, &idx) in frame.iter().enumerate() {
            if idx as usize >= k {
                return Err(BitstreamError::IndexOutOfRange { frame: t, map: m, index: idx as u32, size: k });
            }
            writer.push(idx as u32, bits);
        }
    }
    Ok(PackedStream { header, payload: writer.finish() })
}

/// Inverse of [`pack`].
pub fn unpack(stream: &PackedStream) -> Result<(CodeSequence, StreamLayout), BitstreamError> {
    let h = &stream.header;
    h.validate()?;
    let expected = h.payload_bytes();
    if stream.payload.len() < expected {
        return Err(BitstreamError::Truncated { need: expected, got: stream.payload.len() });
    }
    if stream.payload.len() > expected {
        return Err(BitstreamError::TrailingData(stream.payload.len() - expected));
    }
    let bits = h.layout.bits_per_index();
    let k = h.layout.codebook_size as usize;
    let maps = h.layout.num_maps as usize;
    let mut reader = BitReader::new(&stream.payload);
    let mut frames = Vec::with_capacity(h.num_frames as usize);
    for t in 0..h.num_frames as usize {
        let mut frame = Vec::with_capacity(maps);
        for m in 0..maps {
            let idx = reader.read(bits);
            if idx as usize >= k {
                return Err(BitstreamError::IndexOutOfRange { frame: t, map: m, index: idx, size: k });
            }
            frame.push(idx as u16);
        }
        frames.push(frame);
    }
    if !reader.rest_is_zero() {
        return Err(BitstreamError::NonzeroPadding);
    }
    let codes = CodeSequence { frames, speaker_index: h.speaker_index, num_samples: h.num_samples };
    Ok((codes, h.layout.clone()))
}

struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn with_capacity(n: usize) -> Self {
        Self { bytes: Vec::with_capacity(n), used: 8 }
    }

    fn push(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            if self.used == 8 {
                self.bytes.push(0);
                self.used = 0;
            }
            let bit = (value >> i) & 1;
            *self.bytes.last_mut().unwrap() |= (bit as u8) << (7 - self.used);
            self.used += 1;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn read(&mut self, width: u32) -> u32 {
        let mut v = 0;
        for _ in 0..width {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        v
    }

    fn rest_is_zero(&self) -> bool {
        let total = self.bytes.len() * 8;
        (self.pos..total).all(|p| (self.bytes[p / 8] >> (7 - p % 8)) & 1 == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3_config() -> ModelConfig {
        ModelConfig { num_maps: 1, codebook_size: 3, latent_dim: 4, ..ModelConfig::tiny() }
    }

    #[test]
    fn k3_worked_example() {
        let codes = CodeSequence {
            frames: vec![vec![0], vec![1], vec![2], vec![0]],
            speaker_index: 0,
            num_samples: 640,
        };
        let s = pack(&codes, &k3_config()).unwrap();
        assert_eq!(s.payload, vec![0x18]);
        assert_eq!(unpack(&s).unwrap().0, codes);
    }

    #[test]
    fn index_three_of_k3_rejected() {
        let mut s = pack(
            &CodeSequence { frames: vec![vec![0]], speaker_index: 0, num_samples: 160 },
            &k3_config(),
        )
        .unwrap();
        s.payload[0] = 0b1100_0000;
        assert!(matches!(unpack(&s), Err(BitstreamError::IndexOutOfRange { index: 3, .. })));
    }

    #[test]
    fn header_layout() {
        let codes = CodeSequence { frames: vec![], speaker_index: 0x0102, num_samples: 0 };
        let cfg = ModelConfig { speaker_codebook_size: 1000, ..ModelConfig::default() };
        let bytes = pack(&codes, &cfg).unwrap().to_bytes();
        assert_eq!(bytes.len(), 31);
        assert_eq!(&bytes[..5], b"VQSC\x01");
        assert_eq!(&bytes[5..9], &16000u32.to_le_bytes());
        assert_eq!(&bytes[9..16], &[6, 2, 2, 2, 2, 2, 5]);
        assert_eq!(bytes[16], 2);
        assert_eq!(&bytes[17..19], &256u16.to_le_bytes());
        assert_eq!(&bytes[19..21], &1000u16.to_le_bytes());
        assert_eq!(&bytes[21..23], &[2, 1]);
        assert_eq!(&bytes[23..31], &[0; 8]);
    }

    #[test]
    fn one_entry_codebook_packs_nothing() {
        let cfg = ModelConfig { codebook_size: 1, ..ModelConfig::tiny() };
        let codes = CodeSequence { frames: vec![vec![0, 0]; 5], speaker_index: 3, num_samples: 800 };
        let s = pack(&codes, &cfg).unwrap();
        assert!(s.payload.is_empty());
        assert_eq!(unpack(&s).unwrap().0, codes);
        assert_eq!(bitrate(&cfg), 0.0);
    }
}
