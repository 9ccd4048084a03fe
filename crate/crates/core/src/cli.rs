//! Command implementations behind the `vqsc` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! malformed input, config mismatch, non-finite training loss), 3 a
//! verification check failed.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bitstream::{self, PackedStream};
use crate::dsp::{self, AudioBuffer};
use crate::model::{Checkpoint, CodecModel, ModelConfig, TieBreak};
use crate::trainer::{self, MetricsWriter, TrainConfig, TrainError, TrainSummary, Trainer};
use crate::verify::{self, Suite, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Contents of a `--config` file. `train` may be omitted, in which case the
/// training defaults apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        cfg.model.validate().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Verify(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "vqsc", version, about = "Low bit-rate VQ speech codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print rate arithmetic and parameter counts for a config.
    Info {
        /// JSON config file; the built-in default model when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write an untrained checkpoint for a config.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Encode a WAV file to a .vqsc stream.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Decode a .vqsc stream to a WAV file by sampling the decoder.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Softmax temperature; 0 selects the most likely symbol.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Encode then decode a WAV file without writing the stream.
    Roundtrip {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Print the header of a .vqsc stream.
    Inspect {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run built-in property suites.
    Verify {
        #[arg(value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: make the quantizer under test break ties upward.
        #[arg(long, hide = true)]
        fault_vq_tie_break: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint plus a metrics CSV.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of mono 16-bit WAV files.
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        data_dir: Option<PathBuf>,
        /// Train on generated harmonic tones instead of a data directory.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 8)]
        synthetic_utterances: usize,
        #[arg(long, default_value_t = 1.0)]
        synthetic_seconds: f64,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        /// Optional JSON summary of the run.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Replaces the configured step count.
        #[arg(long)]
        steps_override: Option<usize>,
        /// Replaces the configured seed (model init, data and sampling).
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Mulaw,
    Vq,
    Grad,
    Bitstream,
    All,
}

impl SuiteArg {
    fn suites(self) -> Vec<Suite> {
        match self {
            SuiteArg::Mulaw => vec![Suite::Mulaw],
            SuiteArg::Vq => vec![Suite::Vq],
            SuiteArg::Grad => vec![Suite::Grad],
            SuiteArg::Bitstream => vec![Suite::Bitstream],
            SuiteArg::All => Suite::ALL.to_vec(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn load_model_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile { model: ModelConfig::default(), train: None }),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(data(path.display()))
}

fn check_temperature(t: f64) -> Result<(), CliError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--temperature must be finite and non-negative, got {t}")))
    }
}

fn print_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), CliError> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json value")).map_err(data("stdout"))
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Info { config, common } => cmd_info(config.as_deref(), common.json, out),
        Command::Init { config, checkpoint, seed, common } => {
            let cfg = load_model_config(config.as_deref())?;
            let model = CodecModel::new(cfg.model, seed).map_err(data("config"))?;
            Checkpoint::new(model, seed).save(&checkpoint).map_err(data(checkpoint.display()))?;
            if common.json {
                print_json(out, &json!({ "checkpoint": checkpoint, "seed": seed }))
            } else {
                writeln!(out, "wrote {}", checkpoint.display()).map_err(data("stdout"))
            }
        }
        Command::Encode { checkpoint, input, output, common } => {
            let ck = load_checkpoint(&checkpoint)?;
            let (stream, audio) = encode_file(&ck.model, &input)?;
            fs::write(&output, stream.to_bytes()).map_err(data(output.display()))?;
            report_stream(out, common.json, &stream, &ck.model.config, audio.len(), &output)
        }
        Command::Decode { checkpoint, input, output, seed, temperature, common } => {
            check_temperature(temperature)?;
            let ck = load_checkpoint(&checkpoint)?;
            let bytes = fs::read(&input).map_err(data(input.display()))?;
            let stream = PackedStream::from_bytes(&bytes).map_err(data(input.display()))?;
            let audio = decode_stream(&ck.model, &stream, seed, temperature)?;
            dsp::write_wav(&output, &audio).map_err(data(output.display()))?;
            if common.json {
                print_json(
                    out,
                    &json!({
                        "output": output,
                        "num_samples": audio.len(),
                        "sample_rate": audio.sample_rate,
                        "seed": seed,
                        "temperature": temperature,
                    }),
                )
            } else {
                writeln!(out, "wrote {} ({} samples)", output.display(), audio.len()).map_err(data("stdout"))
            }
        }
        Command::Roundtrip { checkpoint, input, output, seed, temperature, common } => {
            check_temperature(temperature)?;
            let ck = load_checkpoint(&checkpoint)?;
            let (stream, _) = encode_file(&ck.model, &input)?;
            let audio = decode_stream(&ck.model, &stream, seed, temperature)?;
            dsp::write_wav(&output, &audio).map_err(data(output.display()))?;
            report_stream(out, common.json, &stream, &ck.model.config, audio.len(), &output)
        }
        Command::Inspect { input, common } => {
            let bytes = fs::read(&input).map_err(data(input.display()))?;
            let stream = PackedStream::from_bytes(&bytes).map_err(data(input.display()))?;
            let (codes, _) = bitstream::unpack(&stream).map_err(data(input.display()))?;
            let h = &stream.header;
            let value = json!({
                "version": bitstream::VERSION,
                "sample_rate": h.layout.sample_rate,
                "strides": h.layout.strides,
                "num_maps": h.layout.num_maps,
                "codebook_size": h.layout.codebook_size,
                "speaker_codebook_size": h.layout.speaker_codebook_size,
                "speaker_index": h.speaker_index,
                "num_frames": h.num_frames,
                "num_samples": h.num_samples,
                "header_bytes": h.size(),
                "payload_bytes": stream.payload.len(),
                "measured_bitrate_bps": stream.measured_bitrate(),
            });
            if common.json {
                print_json(out, &value)
            } else {
                for (k, v) in value.as_object().expect("object") {
                    writeln!(out, "{k:>22}: {v}").map_err(data("stdout"))?;
                }
                let preview: Vec<String> = codes.frames.iter().take(4).map(|f| format!("{f:?}")).collect();
                writeln!(out, "{:>22}: {}", "first_frames", preview.join(" ")).map_err(data("stdout"))
            }
        }
        Command::Verify { suite, seed, fault_vq_tie_break, common } => {
            let opts = VerifyOptions {
                seed,
                tie_break: if fault_vq_tie_break { TieBreak::Highest } else { TieBreak::Lowest },
            };
            cmd_verify(suite, &opts, common.json, out)
        }
        Command::Train {
            config,
            data_dir,
            synthetic,
            synthetic_utterances,
            synthetic_seconds,
            checkpoint,
            metrics,
            summary,
            steps_override,
            seed,
            common,
        } => {
            let cfg = load_model_config(config.as_deref())?;
            let mut tc = cfg.train.unwrap_or_default();
            if let Some(s) = steps_override {
                tc.steps = s;
            }
            if let Some(s) = seed {
                tc.seed = s;
            }
            tc.validate(&cfg.model).map_err(|e| CliError::Data(e.to_string()))?;
            let corpus = if synthetic {
                trainer::generate_synthetic(synthetic_utterances, synthetic_seconds, tc.seed, &cfg.model)
                    .map_err(|e| CliError::Usage(e.to_string()))?
            } else {
                let dir = data_dir.expect("clap enforces one data source");
                trainer::load_wav_dir(&dir, &cfg.model).map_err(data(dir.display()))?
            };
            let model = CodecModel::new(cfg.model.clone(), tc.seed).map_err(data("config"))?;
            let mut trainer = Trainer::new(model, tc.clone(), corpus).map_err(|e| CliError::Data(e.to_string()))?;
            let file = fs::File::create(&metrics).map_err(data(metrics.display()))?;
            let mut writer =
                MetricsWriter::new(std::io::BufWriter::new(file), cfg.model.num_maps).map_err(data(metrics.display()))?;
            let rows = trainer
                .run(|row| {
                    if !common.json && (row.step % 50 == 0 || row.step == 1) {
                        let _ = writeln!(
                            err,
                            "step {:>6} total {:.4} nll {:.4} f0 {:.4}",
                            row.step, row.loss.total, row.loss.reconstruction_nll, row.loss.f0_loss
                        );
                    }
                    writer.write(row)
                })
                .map_err(|e| match e {
                    TrainError::NonFinite { step, .. } => CliError::Data(format!("non-finite loss at step {step}: {e}")),
                    other => CliError::Data(other.to_string()),
                })?;
            writer.flush().map_err(data(metrics.display()))?;
            let evaluation = trainer.evaluate().map_err(|e| CliError::Data(e.to_string()))?;
            let report = TrainSummary::new(&rows, tc.seed, evaluation);
            Checkpoint::new(trainer.model, tc.seed).save(&checkpoint).map_err(data(checkpoint.display()))?;
            let value = serde_json::to_value(&report).expect("summary serializes");
            if let Some(path) = summary {
                fs::write(&path, serde_json::to_string_pretty(&value).expect("json") + "\n")
                    .map_err(data(path.display()))?;
            }
            if common.json {
                print_json(out, &value)
            } else {
                writeln!(
                    out,
                    "{} steps: total {:.4} -> {:.4} (ratio {:.3}), f0 reduced {:.1}%, perplexity {:?}",
                    report.steps,
                    report.initial_total,
                    report.final_total,
                    report.total_ratio,
                    100.0 * report.f0_reduction,
                    report.evaluation.perplexity.iter().map(|p| (p * 10.0).round() / 10.0).collect::<Vec<_>>()
                )
                .map_err(data("stdout"))
            }
        }
    }
}

fn cmd_info(config: Option<&Path>, as_json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_model_config(config)?.model;
    let model = CodecModel::new(cfg.clone(), 0).map_err(data("config"))?;
    let value = json!({
        "sample_rate": cfg.sample_rate,
        "strides": cfg.strides,
        "downsampling_factor": cfg.downsampling_factor(),
        "frame_rate_hz": cfg.frame_rate(),
        "num_maps": cfg.num_maps,
        "codebook_size": cfg.codebook_size,
        "bits_per_index": cfg.bits_per_index(),
        "bits_per_frame": cfg.bits_per_frame(),
        "payload_bitrate_bps": bitstream::bitrate(&cfg),
        "header_bytes": bitstream::header_size(cfg.strides.len()),
        "network_parameters": model.num_network_params(),
        "codebook_parameters": model.num_codebook_params(),
        "decoder_receptive_field": model.decoder.receptive_field(),
    });
    if as_json {
        return print_json(out, &value);
    }
    let w = |out: &mut dyn Write, k: &str, v: String| writeln!(out, "{k:<26}{v}").map_err(data("stdout"));
    w(out, "downsampling factor", cfg.downsampling_factor().to_string())?;
    w(out, "frame rate", format!("{} Hz", cfg.frame_rate()))?;
    w(out, "bits per frame", format!("{} ({} maps x {} bits)", cfg.bits_per_frame(), cfg.num_maps, cfg.bits_per_index()))?;
    w(out, "payload bitrate", format!("{} bps", bitstream::bitrate(&cfg)))?;
    w(out, "header overhead", format!("{} bytes per stream", bitstream::header_size(cfg.strides.len())))?;
    w(out, "network parameters", model.num_network_params().to_string())?;
    w(out, "codebook parameters", model.num_codebook_params().to_string())?;
    w(out, "decoder receptive field", format!("{} samples", model.decoder.receptive_field()))
}

fn encode_file(model: &CodecModel, input: &Path) -> Result<(PackedStream, AudioBuffer), CliError> {
    let audio = dsp::read_wav(input).map_err(data(input.display()))?;
    let codes = model.encode(&audio).map_err(data(input.display()))?;
    let stream = bitstream::pack(&codes, &model.config).map_err(data(input.display()))?;
    Ok((stream, audio))
}

fn decode_stream(model: &CodecModel, stream: &PackedStream, seed: u64, temperature: f64) -> Result<AudioBuffer, CliError> {
    let (codes, layout) = bitstream::unpack(stream).map_err(data("stream"))?;
    layout.check_matches(&model.config).map_err(data("stream"))?;
    let mut audio = model.sample_waveform(&codes, seed, temperature).map_err(data("decode"))?;
    audio.samples.truncate(codes.num_samples as usize);
    Ok(audio)
}

fn report_stream(
    out: &mut dyn Write,
    as_json: bool,
    stream: &PackedStream,
    cfg: &ModelConfig,
    num_samples: usize,
    output: &Path,
) -> Result<(), CliError> {
    let value = json!({
        "output": output,
        "num_samples": num_samples,
        "num_frames": stream.header.num_frames,
        "speaker_index": stream.header.speaker_index,
        "header_bytes": stream.header.size(),
        "payload_bytes": stream.payload.len(),
        "payload_bitrate_bps": bitstream::bitrate(cfg),
        "measured_bitrate_bps": stream.measured_bitrate(),
    });
    if as_json {
        print_json(out, &value)
    } else {
        writeln!(
            out,
            "{}: {} frames, {} payload bytes + {} header bytes, {} bps",
            output.display(),
            stream.header.num_frames,
            stream.payload.len(),
            stream.header.size(),
            bitstream::bitrate(cfg)
        )
        .map_err(data("stdout"))
    }
}

fn cmd_verify(suite: SuiteArg, opts: &VerifyOptions, as_json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let checks: Vec<verify::Check> = suite.suites().into_iter().flat_map(|s| verify::run_suite(s, opts)).collect();
    let failed = checks.iter().filter(|c| !c.passed).count();
    if as_json {
        print_json(out, &json!({ "passed": failed == 0, "failed": failed, "checks": checks }))?;
    } else {
        for c in &checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let detail = if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) };
            writeln!(out, "{mark} [{}] {}{detail}", c.suite, c.name).map_err(data("stdout"))?;
        }
        writeln!(out, "{} checks, {failed} failed", checks.len()).map_err(data("stdout"))?;
    }
    if failed > 0 {
        Err(CliError::Verify(format!("{failed} verification checks failed")))
    } else {
        Ok(())
    }
}
