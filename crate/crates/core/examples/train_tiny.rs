//! Trains the tiny model on a synthetic harmonic corpus and prints the metrics
//! stream.
//!
//! ```text
//! cargo run --release --example train_tiny -- [steps]
//! ```

use std::time::Instant;

use vqcodec::model::{CodecModel, ModelConfig};
use vqcodec::trainer::{generate_synthetic, TrainConfig, TrainSummary, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let model_config = ModelConfig::tiny();
    let config = TrainConfig {
        steps,
        learning_rate: 1e-3,
        batch_size: 2,
        crop_samples: 1600,
        ..TrainConfig::default()
    };
    let corpus = generate_synthetic(8, 1.0, 7, &model_config)?;
    let model = CodecModel::new(model_config, 7)?;
    let mut trainer = Trainer::new(model, config.clone(), corpus)?;
    let start = Instant::now();
    let rows = trainer.run(|row| {
        if row.step % 25 == 0 || row.step == 1 {
            println!(
                "step {:5}  total {:8.4}  nll {:6.4}  f0 {:8.4}  vq {:7.5}  ppl {:?}  snr {:6.2} dB",
                row.step,
                row.loss.total,
                row.loss.reconstruction_nll,
                row.loss.f0_loss,
                row.loss.codebook_loss,
                row.perplexity.iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>(),
                row.teacher_forced_snr_db,
            );
        }
        Ok(())
    })?;
    let summary = TrainSummary::new(&rows, config.seed, trainer.evaluate()?);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("{:.1} s for {} steps", start.elapsed().as_secs_f64(), rows.len());
    Ok(())
}
