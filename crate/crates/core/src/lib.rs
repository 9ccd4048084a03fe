//! A low bit-rate speech codec built on a vector-quantized autoencoder.
//!
//! Audio is encoded by a stack of strided causal convolutions into frame-rate
//! latents, split across several product-quantized codebooks, and paired with a
//! single utterance-level speaker code obtained by mean pooling. The indices are
//! packed into the `.vqsc` bitstream. Decoding runs an autoregressive
//! dilated-convolution network over 8-bit mu-law symbols conditioned on the
//! looked-up codewords.
//!
//! Modules:
//!
//! - [`dsp`]: mu-law companding, WAV I/O, padding, pitch tracking
//! - [`grad`]: the reverse-mode autodiff core used for training
//! - [`model`]: encoder, quantizers, decoder, f0 head and losses
//! - [`bitstream`]: bit-exact wire format and rate accounting
//! - [`trainer`]: synthetic data, optimizer loop, metrics, evaluation
//! - [`verify`]: self-check suites behind `vqsc verify`
//! - [`cli`]: command implementations behind the `vqsc` binary

pub mod bitstream;
pub mod cli;
pub mod dsp;
pub mod grad;
pub mod model;
pub mod trainer;
pub mod verify;
