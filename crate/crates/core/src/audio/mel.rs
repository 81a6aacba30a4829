//! Mel-spectrogram computation: Hann-windowed magnitude STFT projected
//! through an HTK-scale triangular filterbank spanning 0 Hz to Nyquist.

use super::{frame_count, AudioBuffer};
use crate::error::{Error, Result};
use crate::fft::{hann, RealFft};
use crate::par;

/// STFT / filterbank parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_mels: 80,
            frame_len: 1024,
            hop: 256,
        }
    }
}

/// Non-negative mel-band magnitudes, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f64>,
    n_frames: usize,
    n_mels: usize,
    pub frame_len: usize,
    pub hop: usize,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_mels)
    }
}

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank as per-filter (bin, weight) lists. Edges are
/// `n_mels + 2` equally spaced points on the mel axis from 0 to Nyquist.
pub(crate) fn mel_filterbank(
    n_mels: usize,
    fft_len: usize,
    sample_rate: u32,
) -> Vec<Vec<(usize, f64)>> {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = fft_len / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_len as f64;

    (0..n_mels)
        .map(|k| {
            let (lo, center, hi) = (edges[k], edges[k + 1], edges[k + 2]);
            let mut taps = Vec::new();
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let w = if f > lo && f < center {
                    (f - lo) / (center - lo)
                } else if (f - center).abs() < 1e-12 {
                    1.0
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    taps.push((bin, w));
                }
            }
            taps
        })
        .collect()
}

/// Compute the mel spectrogram on the buffer's own rate. Deterministic:
/// the same input always yields bit-identical output.
pub fn mel_spectrogram(buffer: &AudioBuffer, config: &MelConfig) -> Result<MelSpectrogram> {
    let x = buffer.samples();
    let n_frames =
        frame_count(x.len(), config.frame_len, config.hop).ok_or(Error::EmptySignal)?;
    let window = hann(config.frame_len);
    let fft = RealFft::new(config.frame_len);
    let fbank = mel_filterbank(config.n_mels, config.frame_len, buffer.sample_rate());

    let rows = par::map_indexed(n_frames, |t| {
        let start = t * config.hop;
        let frame: Vec<f64> = x[start..start + config.frame_len]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        let mag = fft.magnitude(&frame);
        fbank
            .iter()
            .map(|taps| taps.iter().map(|&(bin, w)| w * mag[bin]).sum::<f64>())
            .collect::<Vec<f64>>()
    });

    Ok(MelSpectrogram {
        data: rows.concat(),
        n_frames,
        n_mels: config.n_mels,
        frame_len: config.frame_len,
        hop: config.hop,
    })
}
