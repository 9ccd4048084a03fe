//! Normalized cross-correlation pitch tracker producing 200 Hz log-f0 frames.

use std::io::{Read, Write};

use super::{AudioBuffer, DspError};

/// Frame rate of pitch annotations in Hz.
pub const PITCH_RATE: u32 = 200;

const VOICING_THRESHOLD: f64 = 0.5;
const SILENCE_RMS: f64 = 1e-3;
/// Among candidate peaks, the shortest lag within this fraction of the best wins.
const OCTAVE_TOLERANCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    /// Natural log of f0 in Hz; 0 where unvoiced.
    pub log_f0: Vec<f64>,
    pub voiced: Vec<bool>,
    pub rate: u32,
}

impl PitchTrack {
    pub fn new(log_f0: Vec<f64>, voiced: Vec<bool>) -> Self {
        assert_eq!(log_f0.len(), voiced.len());
        let log_f0 = log_f0
            .into_iter()
            .zip(&voiced)
            .map(|(v, &on)| if on { v } else { 0.0 })
            .collect();
        Self { log_f0, voiced, rate: PITCH_RATE }
    }

    pub fn len(&self) -> usize {
        self.voiced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voiced.is_empty()
    }

    /// f0 in Hz for voiced frames.
    pub fn f0_hz(&self, frame: usize) -> Option<f64> {
        self.voiced[frame].then(|| self.log_f0[frame].exp())
    }

    /// Writes `frame_index,voiced,log_f0` rows with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DspError> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| DspError::PitchCsv(e.to_string());
        w.write_record(["frame_index", "voiced", "log_f0"]).map_err(to_err)?;
        for (i, (&lf, &v)) in self.log_f0.iter().zip(&self.voiced).enumerate() {
            w.write_record([i.to_string(), (v as u8).to_string(), lf.to_string()])
                .map_err(to_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, DspError> {
        let mut r = csv::Reader::from_reader(input);
        let mut log_f0 = Vec::new();
        let mut voiced = Vec::new();
        for (expected, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| DspError::PitchCsv(e.to_string()))?;
            let field = |i: usize| rec.get(i).ok_or_else(|| DspError::PitchCsv(format!("row {expected}: missing column {i}")));
            let bad = |what: &str| DspError::PitchCsv(format!("row {expected}: bad {what}"));
            let index: usize = field(0)?.parse().map_err(|_| bad("frame_index"))?;
            if index != expected {
                return Err(bad("frame_index order"));
            }
            let v = match field(1)? {
                "0" => false,
                "1" => true,
                _ => return Err(bad("voiced flag")),
            };
            let lf: f64 = field(2)?.parse().map_err(|_| bad("log_f0"))?;
            voiced.push(v);
            log_f0.push(lf);
        }
        Ok(Self::new(log_f0, voiced))
    }
}

/// Tracks f0 with one frame per `sample_rate / 200` samples.
///
/// Each frame correlates a window of `sample_rate / 40` samples centred on the
/// hop against lagged copies for lags covering 40..400 Hz. A frame is voiced when
/// the best normalized correlation reaches 0.5 and the window RMS is at least
/// 1e-3 of full scale.
pub fn extract_f0(buffer: &AudioBuffer) -> Result<PitchTrack, DspError> {
    let sr = buffer.sample_rate;
    if !sr.is_multiple_of(PITCH_RATE) {
        return Err(DspError::PitchRate(sr, PITCH_RATE));
    }
    let hop = (sr / PITCH_RATE) as usize;
    let window = (sr / 40) as usize;
    let min_lag = (sr / 400) as usize;
    let max_lag = (sr / 40) as usize;
    let x = buffer.normalized();
    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize]
        }
    };

    let frames = x.len() / hop;
    let mut log_f0 = Vec::with_capacity(frames);
    let mut voiced = Vec::with_capacity(frames);
    let mut corr = vec![0.0; max_lag + 2];
    for frame in 0..frames {
        let start = (frame * hop + hop / 2) as isize - (window / 2) as isize;
        let seg: Vec<f64> = (0..window + max_lag + 1).map(|n| at(start + n as isize)).collect();
        let energy0: f64 = seg[..window].iter().map(|v| v * v).sum();
        let rms = (energy0 / window as f64).sqrt();
        if rms < SILENCE_RMS {
            log_f0.push(0.0);
            voiced.push(false);
            continue;
        }
        // Sliding energy of the lagged window.
        let mut energy_lag: f64 = seg[min_lag - 1..min_lag - 1 + window].iter().map(|v| v * v).sum();
        for lag in min_lag - 1..=max_lag + 1 {
            if lag > min_lag - 1 {
                energy_lag += seg[lag + window - 1].powi(2) - seg[lag - 1].powi(2);
            }
            let dot: f64 = (0..window).map(|n| seg[n] * seg[n + lag]).sum();
            let denom = (energy0 * energy_lag.max(0.0)).sqrt();
            corr[lag] = if denom > 0.0 { dot / denom } else { 0.0 };
        }
        match pick_peak(&corr, min_lag, max_lag) {
            Some(period) => {
                log_f0.push((sr as f64 / period).ln());
                voiced.push(true);
            }
            None => {
                log_f0.push(0.0);
                voiced.push(false);
            }
        }
    }
    Ok(PitchTrack::new(log_f0, voiced))
}

/// Returns the interpolated period (in samples) of the shortest strong peak.
fn pick_peak(corr: &[f64], min_lag: usize, max_lag: usize) -> Option<f64> {
    let is_peak = |l: usize| corr[l] >= corr[l - 1] && corr[l] >= corr[l + 1];
    let best = (min_lag..=max_lag)
        .filter(|&l| is_peak(l))
        .map(|l| corr[l])
        .fold(f64::NEG_INFINITY, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    let lag = (min_lag..=max_lag).find(|&l| is_peak(l) && corr[l] >= OCTAVE_TOLERANCE * best)?;
    let (a, b, c) = (corr[lag - 1], corr[lag], corr[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let delta = if curvature.abs() > 1e-12 { 0.5 * (a - c) / curvature } else { 0.0 };
    Some(lag as f64 + delta.clamp(-0.5, 0.5))
}

/// Pure sine test tone; `amplitude` is a fraction of full scale.
pub fn sine_tone(freq: f64, amplitude: f64, len: usize, sample_rate: u32) -> AudioBuffer {
    let values: Vec<f64> = (0..len)
        .map(|n| amplitude * (2.0 * std::f64::consts::PI * freq * n as f64 / sample_rate as f64).sin())
        .collect();
    AudioBuffer::from_normalized(&values, sample_rate)
}
