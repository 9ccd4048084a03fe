use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dsp::{self, MuLawStream, FULL_SCALE};
use crate::model::LossBreakdown;

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: LossBreakdown,
    /// `exp(entropy)` of the index histogram, one entry per map.
    pub perplexity: Vec<f64>,
    pub teacher_forced_snr_db: f64,
}

/// `exp` of the entropy of a histogram; 1 when empty.
pub fn perplexity(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 1.0;
    }
    let n = total as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    entropy.exp()
}

/// Index histograms per map.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeUsage {
    pub counts: Vec<Vec<u64>>,
}

impl CodeUsage {
    pub fn new(num_maps: usize, k: usize) -> Self {
        Self { counts: vec![vec![0; k]; num_maps] }
    }

    pub fn add(&mut self, frames: &[Vec<u16>]) {
        for frame in frames {
            for (m, &i) in frame.iter().enumerate() {
                self.counts[m][i as usize] += 1;
            }
        }
    }

    pub fn perplexity(&self) -> Vec<f64> {
        self.counts.iter().map(|c| perplexity(c)).collect()
    }
}

/// Signal and error energy of an argmax mu-law reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnrAccumulator {
    pub signal: f64,
    pub error: f64,
}

impl SnrAccumulator {
    pub fn add(&mut self, reference: &[f64], symbols: &[u8]) {
        let recon = dsp::mu_law_expand(&MuLawStream { symbols: symbols.to_vec() }, 1);
        for (x, &y) in reference.iter().zip(&recon.samples) {
            let y = y as f64 / FULL_SCALE;
            self.signal += x * x;
            self.error += (x - y) * (x - y);
        }
    }

    /// `10 log10(signal / error)`; infinite for an exact reconstruction.
    pub fn db(&self) -> f64 {
        10.0 * (self.signal / self.error).log10()
    }
}

pub fn csv_header(num_maps: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "total",
        "reconstruction_nll",
        "codebook_loss",
        "commitment_loss",
        "f0_loss",
        "commitment_weight",
        "f0_weight",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..num_maps).map(|m| format!("perplexity_map{m}")));
    h.push("teacher_forced_snr_db".into());
    h
}

/// Writes rows as CSV with a header line.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W, num_maps: usize) -> Result<Self, TrainError> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(csv_header(num_maps))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        let l = &row.loss;
        let mut rec = vec![row.step.to_string()];
        rec.extend(
            [
                l.total,
                l.reconstruction_nll,
                l.codebook_loss,
                l.commitment_loss,
                l.f0_loss,
                l.commitment_weight,
                l.f0_weight,
            ]
            .iter()
            .map(f64::to_string),
        );
        rec.extend(row.perplexity.iter().map(f64::to_string));
        rec.push(row.teacher_forced_snr_db.to_string());
        self.inner.write_record(rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.inner.flush().map_err(TrainError::Io)
    }
}
