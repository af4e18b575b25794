//! Raw-waveform speech feature extraction.
//!
//! Three front-ends share a 10 ms frame grid: FIR Gammatone features,
//! supervised-convolutional features, and wav2vec-style convolutional
//! features. Per-utterance i-vectors, frame-wise combination and audio
//! chunking tie them together, and [`analysis`] computes parameter counts
//! and receptive fields without running anything.

pub mod analysis;
pub mod combine;
pub mod convstack;
pub mod dsp;
pub mod error;
pub mod frontend;
pub mod gammatone;
pub mod io;
pub mod ivector;

pub use dsp::{FeatureMatrix, Waveform, SAMPLE_RATE};
pub use error::{Error, Result};
