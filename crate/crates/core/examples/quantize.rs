//! Product quantization of random latents: indices, straight-through values
//! and the two VQ losses.
//!
//! ```text
//! cargo run --example quantize
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqcodec::grad::{Tape, Tensor};
use vqcodec::model::{nearest_index, quantize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (maps, k, dim, frames) = (2, 8, 4, 5);
    let sub = dim / maps;
    let mut tensor = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let books: Vec<Tensor> = (0..maps).map(|_| tensor(&[k, sub])).collect::<Result<_, _>>()?;
    let latents = tensor(&[dim, frames])?;

    let mut tape = Tape::new();
    let z = tape.variable(latents.clone());
    let vars: Vec<_> = books.iter().map(|b| tape.variable(b.clone())).collect();
    let q = quantize(&mut tape, z, &vars)?;

    for (t, idx) in q.indices.iter().enumerate() {
        let column: Vec<f64> = (0..dim).map(|d| latents.data()[d * frames + t]).collect();
        let direct: Vec<usize> = (0..maps).map(|m| nearest_index(&books[m], &column[m * sub..(m + 1) * sub])).collect();
        println!("frame {t}: indices {idx:?} (direct search {direct:?})");
    }
    println!("codebook loss   {:.6}", tape.item(q.codebook_loss));
    println!("commitment loss {:.6}", tape.item(q.commitment_loss));

    let total = tape.add(q.codebook_loss, q.commitment_loss)?;
    tape.backward(total)?;
    let g = tape.grad_or_zeros(z);
    println!("latent gradient norm {:.6}", g.data().iter().map(|x| x * x).sum::<f64>().sqrt());
    Ok(())
}
