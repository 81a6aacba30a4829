//! Signal-path voice transformation toolkit: pitch-synchronous time and
//! pitch scaling driven by control curves, pitch tracking, discrete pitch
//! and linguistic-unit codecs, an LPC cross-synthesis converter, and the
//! objective evaluation metrics that score the results.

pub mod audio;
pub mod curves;
pub mod error;
pub mod eval;
pub mod lpc;
pub mod pipeline;
pub mod pitch;
pub mod psola;
pub mod units;
pub mod vq;

mod fft;
mod par;
mod persist;

pub use audio::{
    frame_count, frame_signal, mel_spectrogram, read_wav, resample, synth_signal, write_wav,
    AudioBuffer, MelConfig, MelSpectrogram, SynthKind,
};
pub use error::{Error, Result};
