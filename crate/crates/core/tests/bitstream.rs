use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqcodec::bitstream::{bitrate, header_size, pack, unpack, BitstreamError, PackedStream};
use vqcodec::dsp::AudioBuffer;
use vqcodec::model::{CodeSequence, CodecModel, ModelConfig};

/// Independent packer: render each index as a binary string, concatenate, pad.
fn string_packer(codes: &CodeSequence, k: usize) -> Vec<u8> {
    let width = (0..).find(|&b| (1usize << b) >= k).unwrap();
    let mut s = String::new();
    for frame in &codes.frames {
        for &i in frame {
            if width > 0 {
                s.push_str(&format!("{:0width$b}", i, width = width));
            }
        }
    }
    while !s.len().is_multiple_of(8) {
        s.push('0');
    }
    s.as_bytes().chunks(8).map(|c| u8::from_str_radix(std::str::from_utf8(c).unwrap(), 2).unwrap()).collect()
}

fn config_with(k: usize, maps: usize) -> ModelConfig {
    ModelConfig { codebook_size: k, num_maps: maps, latent_dim: maps * 4, ..ModelConfig::tiny() }
}

fn random_codes(rng: &mut ChaCha8Rng, cfg: &ModelConfig, frames: usize) -> CodeSequence {
    let factor = cfg.downsampling_factor();
    CodeSequence {
        frames: (0..frames).map(|_| (0..cfg.num_maps).map(|_| rng.random_range(0..cfg.codebook_size) as u16).collect()).collect(),
        speaker_index: rng.random_range(0..cfg.speaker_codebook_size) as u16,
        num_samples: if frames == 0 { 0 } else { (frames * factor - rng.random_range(0..factor)) as u32 },
    }
}

#[test]
fn rates_for_stride_schedules() {
    assert_eq!(bitrate(&ModelConfig::default()), 1600.0);
    assert_eq!(bitrate(&ModelConfig::default().with_extra_stride2(1)), 800.0);
    assert_eq!(bitrate(&ModelConfig::default().with_extra_stride2(2)), 400.0);
    for n in 0..3 {
        let c = ModelConfig::default().with_extra_stride2(n);
        assert_eq!(bitrate(&c.clone().with_extra_stride2(1)) * 2.0, bitrate(&c));
    }
}

#[test]
fn payload_sizes() {
    let cfg = ModelConfig::default();
    let codes = CodeSequence { frames: vec![vec![255, 0]; 100], speaker_index: 1, num_samples: 16000 };
    let s = pack(&codes, &cfg).unwrap();
    assert_eq!(s.payload.len(), 200);
    assert_eq!(s.to_bytes().len(), header_size(6) + 200);
    assert_eq!(s.measured_bitrate(), Some(1600.0));

    let empty = CodeSequence { frames: vec![], speaker_index: 0, num_samples: 0 };
    let s = pack(&empty, &cfg).unwrap();
    assert!(s.payload.is_empty());
    assert_eq!(s.to_bytes().len(), header_size(6));
}

#[test]
fn one_second_encode_is_200_bytes() {
    let model = CodecModel::new(ModelConfig::tiny(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let audio = AudioBuffer::new((0..16000).map(|_| rng.random_range(-9000..9000)).collect(), 16000);
    let codes = model.encode(&audio).unwrap();
    let s = pack(&codes, &model.config).unwrap();
    assert_eq!(s.payload.len(), 200);
}

#[test]
fn measured_rate_equals_config_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for extra in 0..3 {
        for k in [2, 3, 17, 256, 1000] {
            let cfg = config_with(k, 2).with_extra_stride2(extra);
            let frames = rng.random_range(1..300);
            let mut codes = random_codes(&mut rng, &cfg, frames);
            codes.num_samples = (frames * cfg.downsampling_factor()) as u32;
            let s = pack(&codes, &cfg).unwrap();
            assert_eq!(s.measured_bitrate().unwrap(), bitrate(&cfg));
        }
    }
}

#[test]
fn overhead_is_header_only_and_speaker_takes_two_bytes() {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for frames in [0, 1, 7, 100, 1000] {
        let codes = random_codes(&mut rng, &cfg, frames);
        let s = pack(&codes, &cfg).unwrap();
        assert_eq!(s.to_bytes().len() - s.payload.len(), header_size(6));
        let mut other = codes.clone();
        other.speaker_index ^= 0xff;
        let a = s.to_bytes();
        let b = pack(&other, &cfg).unwrap().to_bytes();
        let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert!(diff.iter().all(|&i| i == 21 || i == 22), "{diff:?}");
    }
}

#[test]
fn matches_string_packer() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let k = rng.random_range(1..=5000);
        let maps = rng.random_range(1..=4);
        let cfg = config_with(k, maps);
        let frames = rng.random_range(0..40);
        let codes = random_codes(&mut rng, &cfg, frames);
        assert_eq!(pack(&codes, &cfg).unwrap().payload, string_packer(&codes, k));
    }
}

#[test]
fn decode_errors_are_distinct() {
    let cfg = config_with(3, 1);
    let codes = CodeSequence { frames: vec![vec![0], vec![1], vec![2]], speaker_index: 0, num_samples: 480 };
    let bytes = pack(&codes, &cfg).unwrap().to_bytes();
    assert!(PackedStream::from_bytes(&bytes).is_ok());

    let mut b = bytes.clone();
    b[0] = b'X';
    assert!(matches!(PackedStream::from_bytes(&b), Err(BitstreamError::BadMagic(_))));
    let mut b = bytes.clone();
    b[4] = 2;
    assert_eq!(PackedStream::from_bytes(&b), Err(BitstreamError::UnsupportedVersion(2)));
    assert!(matches!(
        PackedStream::from_bytes(&bytes[..bytes.len() - 1]),
        Err(BitstreamError::Truncated { .. })
    ));
    assert!(matches!(PackedStream::from_bytes(&bytes[..12]), Err(BitstreamError::Truncated { .. })));
    let mut b = bytes.clone();
    b.push(0);
    assert_eq!(PackedStream::from_bytes(&b), Err(BitstreamError::TrailingData(1)));
    let mut b = bytes.clone();
    *b.last_mut().unwrap() |= 1;
    let s = PackedStream::from_bytes(&b).unwrap();
    assert_eq!(unpack(&s).map(|_| ()), Err(BitstreamError::NonzeroPadding));

    let bad = CodeSequence { frames: vec![vec![3]], speaker_index: 0, num_samples: 160 };
    assert!(matches!(pack(&bad, &cfg), Err(BitstreamError::IndexOutOfRange { .. })));
    let bad = CodeSequence { frames: vec![vec![0]], speaker_index: 256, num_samples: 160 };
    assert!(matches!(pack(&bad, &cfg), Err(BitstreamError::SpeakerOutOfRange { .. })));
    let bad = CodeSequence { frames: vec![vec![0]], speaker_index: 0, num_samples: 161 };
    assert!(matches!(pack(&bad, &cfg), Err(BitstreamError::InvalidHeader(_))));
}

#[test]
fn layout_checks_against_model() {
    let cfg = ModelConfig::default();
    let codes = CodeSequence { frames: vec![vec![1, 2]], speaker_index: 0, num_samples: 160 };
    let (back, layout) = unpack(&pack(&codes, &cfg).unwrap()).unwrap();
    assert_eq!(back, codes);
    assert!(layout.check_matches(&cfg).is_ok());
    assert!(matches!(
        layout.check_matches(&cfg.clone().with_extra_stride2(1)),
        Err(BitstreamError::ConfigMismatch(_))
    ));
}

fn arb_codes() -> impl Strategy<Value = (ModelConfig, CodeSequence)> {
    (1usize..=65535, 1usize..=4, 0usize..=2, 0usize..60, any::<u64>()).prop_map(|(k, maps, extra, frames, seed)| {
        let cfg = config_with(k, maps).with_extra_stride2(extra);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = random_codes(&mut rng, &cfg, frames);
        (cfg, codes)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn round_trip((cfg, codes) in arb_codes()) {
        let bytes = pack(&codes, &cfg).unwrap().to_bytes();
        let stream = PackedStream::from_bytes(&bytes).unwrap();
        let (back, layout) = unpack(&stream).unwrap();
        prop_assert_eq!(back, codes);
        prop_assert!(layout.check_matches(&cfg).is_ok());
    }
}
