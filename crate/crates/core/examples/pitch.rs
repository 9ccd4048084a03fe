//! Autocorrelation pitch tracking on a gliding tone and on silence.
//!
//! ```text
//! cargo run --example pitch [out.csv]
//! ```

use vqcodec::dsp::{extract_f0, AudioBuffer};
use vqcodec::trainer::harmonic_tone;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sr = 16000;
    let contour: Vec<f64> = (0..sr as usize)
        .map(|n| if n < 12000 { 100.0 + 150.0 * n as f64 / 12000.0 } else { 0.0 })
        .collect();
    let audio = harmonic_tone(&contour, &[1.0, 0.5, 0.25], sr);
    let track = extract_f0(&audio)?;
    println!("{} frames at 200 Hz", track.len());
    for i in (0..track.len()).step_by(20) {
        let truth = contour[i * 80 + 40];
        match track.f0_hz(i) {
            Some(f) => println!("frame {i:3}: {f:7.2} Hz (true {truth:6.2})"),
            None => println!("frame {i:3}: unvoiced (true {truth:6.2})"),
        }
    }
    let silent = extract_f0(&AudioBuffer::new(vec![0; 1600], sr))?;
    println!("silence: {} of {} frames voiced", silent.voiced.iter().filter(|&&v| v).count(), silent.len());
    if let Some(path) = std::env::args().nth(1) {
        track.write_csv(std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
