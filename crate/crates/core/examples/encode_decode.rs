//! Encodes a WAV file (or a generated tone) with a fresh or saved model,
//! writes the `.vqsc` stream and decodes it back by sampling.
//!
//! ```text
//! cargo run --release --example encode_decode -- [input.wav] [checkpoint.json]
//! ```

use vqcodec::bitstream::{self, PackedStream};
use vqcodec::dsp::{read_wav, write_wav};
use vqcodec::model::{Checkpoint, CodecModel, ModelConfig};
use vqcodec::trainer::harmonic_tone;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let audio = match args.next() {
        Some(path) => read_wav(path)?,
        None => harmonic_tone(&vec![160.0; 8000], &[1.0, 0.6, 0.3], 16000),
    };
    let model = match args.next() {
        Some(path) => Checkpoint::load(path)?.model,
        None => CodecModel::new(ModelConfig::tiny(), 0)?,
    };
    let dir = std::env::temp_dir();

    let codes = model.encode(&audio)?;
    let bytes = bitstream::pack(&codes, &model.config)?.to_bytes();
    let stream_path = dir.join("encode_decode.vqsc");
    std::fs::write(&stream_path, &bytes)?;
    println!(
        "{} samples -> {} frames, speaker {}, {} bytes ({})",
        audio.len(),
        codes.num_frames(),
        codes.speaker_index,
        bytes.len(),
        stream_path.display()
    );

    let parsed = PackedStream::from_bytes(&std::fs::read(&stream_path)?)?;
    let (decoded_codes, layout) = bitstream::unpack(&parsed)?;
    layout.check_matches(&model.config)?;
    assert_eq!(decoded_codes, codes);

    for temperature in [0.0, 1.0] {
        let mut out = model.sample_waveform(&decoded_codes, 1, temperature)?;
        out.samples.truncate(decoded_codes.num_samples as usize);
        let path = dir.join(format!("encode_decode_t{temperature}.wav"));
        write_wav(&path, &out)?;
        println!("temperature {temperature}: {} samples -> {}", out.len(), path.display());
    }
    Ok(())
}
