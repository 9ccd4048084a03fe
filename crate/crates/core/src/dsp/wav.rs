use std::path::Path;

use super::{AudioBuffer, DspError};

/// Reads a 16-bit PCM mono RIFF/WAVE file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, DspError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DspError::MissingFile(path.display().to_string()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => DspError::Io(io),
        hound::Error::Unsupported => {
            DspError::UnsupportedFormat(format!("{}: unsupported encoding", path.display()))
        }
        other => DspError::NotWave(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DspError::UnsupportedFormat(format!(
            "{} channels (mono required)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedFormat(format!(
            "{}-bit {:?} samples (16-bit PCM required)",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let sample_rate = spec.sample_rate;
    let samples = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DspError::NotWave(e.to_string()))?;
    Ok(AudioBuffer::new(samples, sample_rate))
}

pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => DspError::Io(io),
        other => DspError::UnsupportedFormat(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &buffer.samples {
        writer.write_sample(s).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}
