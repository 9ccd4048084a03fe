//! Rate arithmetic and packed stream sizes for the 1600, 800 and 400 bps
//! stride schedules.
//!
//! ```text
//! cargo run --example bitrates
//! ```

use vqcodec::bitstream::{self, header_size};
use vqcodec::model::{CodeSequence, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>6} {:>8} {:>9} {:>10} {:>13} {:>12}", "extra", "factor", "frame Hz", "bps", "payload B/s", "header B");
    for extra in 0..3 {
        let cfg = ModelConfig::default().with_extra_stride2(extra);
        let frames = cfg.frame_rate() as usize;
        let codes = CodeSequence {
            frames: (0..frames).map(|t| vec![(t % 256) as u16, (255 - t % 256) as u16]).collect(),
            speaker_index: 42,
            num_samples: cfg.sample_rate,
        };
        let stream = bitstream::pack(&codes, &cfg)?;
        assert_eq!(stream.measured_bitrate(), Some(bitstream::bitrate(&cfg)));
        println!(
            "{extra:>6} {:>8} {:>9} {:>10} {:>13} {:>12}",
            cfg.downsampling_factor(),
            cfg.frame_rate(),
            bitstream::bitrate(&cfg),
            stream.payload.len(),
            header_size(cfg.strides.len()),
        );
    }

    let mut k3 = ModelConfig::tiny();
    k3.codebook_size = 3;
    let codes = CodeSequence { frames: vec![vec![0, 1], vec![2, 0]], speaker_index: 0, num_samples: 320 };
    let stream = bitstream::pack(&codes, &k3)?;
    println!("K=3, frames [[0,1],[2,0]] -> payload {:02x?}", stream.payload);
    Ok(())
}
