//! Mu-law companding: symbol table, round-trip error and a tone through the
//! 8-bit channel.
//!
//! ```text
//! cargo run --example mulaw
//! ```

use vqcodec::dsp::{compress_sample, expand_symbol, mu_law_compress, mu_law_expand, sine_tone, FULL_SCALE};

fn main() {
    println!("{:>8} {:>7} {:>8}", "input", "symbol", "decoded");
    for x in [-32768i16, -8000, -1000, -100, -1, 0, 1, 100, 1000, 8000, 32767] {
        let y = compress_sample(x);
        println!("{x:>8} {y:>7} {:>8}", expand_symbol(y));
    }

    let (worst, err) = (i16::MIN..=i16::MAX)
        .map(|x| (x, (expand_symbol(compress_sample(x)) as f64 - x as f64).abs() / FULL_SCALE))
        .fold((0, 0.0), |acc, (x, e)| if e > acc.1 { (x, e) } else { acc });
    println!("max normalized error {err:.5} at input {worst}");

    let tone = sine_tone(440.0, 0.5, 1600, 16000);
    let decoded = mu_law_expand(&mu_law_compress(&tone), tone.sample_rate);
    let signal: f64 = tone.normalized().iter().map(|x| x * x).sum();
    let noise: f64 = tone.normalized().iter().zip(decoded.normalized()).map(|(a, b)| (a - b) * (a - b)).sum();
    println!("440 Hz tone through mu-law: SNR {:.1} dB", 10.0 * (signal / noise).log10());
}
