//! Thin wrapper over rustfft for magnitude spectra of real frames.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) struct RealFft {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl RealFft {
    pub(crate) fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        RealFft { fft, len }
    }

    /// Magnitude spectrum of `frame` (zero-padded to the FFT length);
    /// returns `len/2 + 1` bins.
    pub(crate) fn magnitude(&self, frame: &[f64]) -> Vec<f64> {
        debug_assert!(frame.len() <= self.len);
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&s| Complex::new(s, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.len)
            .collect();
        self.fft.process(&mut buf);
        buf[..self.len / 2 + 1].iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window of length `n`.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}
