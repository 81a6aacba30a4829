//! Mono PCM buffers, framing, and the signal-level plumbing the rest of
//! the pipeline is built on. The canonical pipeline rate is 16 kHz with a
//! 20 ms frame / 5 ms hop analysis grid.

mod mel;
mod resample;
mod synth;
mod wav;

pub use mel::{mel_spectrogram, MelConfig, MelSpectrogram};
pub(crate) use mel::mel_filterbank;
pub use resample::resample;
pub use synth::{synth_signal, SynthKind};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Mono audio: samples nominally in [-1, 1] plus a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Build a buffer, rejecting non-finite samples and a zero rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample {bad}")));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// Number of full frames for `frame_len`/`hop` over `len` samples, with no
/// padding: `floor((len - frame_len)/hop) + 1`.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> Option<usize> {
    if len < frame_len || hop == 0 {
        None
    } else {
        Some((len - frame_len) / hop + 1)
    }
}

/// Split into overlapping frames; frame `t` covers `[t*hop, t*hop + frame_len)`.
/// The trailing partial frame is dropped.
pub fn frame_signal(samples: &[f64], frame_len: usize, hop: usize) -> Result<Vec<&[f64]>> {
    if frame_len < hop || hop == 0 {
        return Err(Error::Domain(format!(
            "need frame_len >= hop >= 1, got frame_len={frame_len} hop={hop}"
        )));
    }
    let count = frame_count(samples.len(), frame_len, hop).ok_or(Error::EmptySignal)?;
    Ok((0..count)
        .map(|t| &samples[t * hop..t * hop + frame_len])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_matches_formula() {
        // (16000 - 320)/80 + 1 = 197
        assert_eq!(frame_count(16000, 320, 80), Some(197));
    }

    #[test]
    fn one_frame_when_len_equals_frame() {
        let x = vec![0.0; 320];
        let frames = frame_signal(&x, 320, 80).unwrap();
        assert_eq!(frames.len(), 1);
    }

    #[test]
    fn short_signal_is_empty_signal() {
        let x = vec![0.0; 319];
        assert!(matches!(
            frame_signal(&x, 320, 80),
            Err(Error::EmptySignal)
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AudioBuffer::new(vec![0.0, f64::NAN], 16000).is_err());
    }
}
