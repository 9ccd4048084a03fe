//! Compares reverse-mode gradients with central differences for a small
//! causal convolution stack and prints the JSON report.
//!
//! ```text
//! cargo run --example gradcheck
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqcodec::grad::{grad_check, ConvMode, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![
        random(&mut rng, &[2, 12]),
        random(&mut rng, &[3, 2, 2]),
        random(&mut rng, &[3]),
        random(&mut rng, &[1, 3, 3]),
        random(&mut rng, &[1]),
    ];
    let report = grad_check(
        |tape, v| {
            let h = tape.conv1d(v[0], v[1], v[2], 1, 2, ConvMode::Causal)?;
            let h = tape.tanh(h);
            let y = tape.conv1d(h, v[3], v[4], 2, 1, ConvMode::Causal)?;
            let y = tape.mul(y, y)?;
            tape.mean_over_time(y)
        },
        &inputs,
        1e-5,
        1e-4,
    )?;
    println!("{}", report.to_json());
    println!("max relative error {:.3e}: {}", report.max_rel_error(), if report.passed { "ok" } else { "FAILED" });
    Ok(())
}
