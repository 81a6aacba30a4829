//! Shared measurement oracles for the integration suites. These stay
//! independent of the library code paths they are used to check: spectra
//! are measured with plain DFT sums and expected values are recomputed
//! from first principles in the tests themselves.

#![allow(dead_code)]

use paravox_core::AudioBuffer;

/// Frequency of the strongest spectral component, via a zero-padded DFT
/// magnitude scan with parabolic peak interpolation.
pub fn fft_peak_hz(x: &[f64], rate: u32) -> f64 {
    let n = x.len();
    let pad = (4 * n).next_power_of_two();
    let mags = dft_magnitudes(x, pad);
    let mut best = 1;
    for (k, &m) in mags.iter().enumerate().skip(1) {
        if m > mags[best] {
            best = k;
        }
    }
    let mut bin = best as f64;
    if best > 0 && best + 1 < mags.len() {
        let (ym, y0, yp) = (mags[best - 1], mags[best], mags[best + 1]);
        let denom = ym - 2.0 * y0 + yp;
        if denom < 0.0 {
            bin += 0.5 * (ym - yp) / denom;
        }
    }
    bin * rate as f64 / pad as f64
}

/// Magnitude spectrum of `x` zero-padded to `pad` points (first half).
/// Straightforward O(n^2)-ish real DFT via Goertzel-style sums; slow but
/// oracle-simple.
pub fn dft_magnitudes(x: &[f64], pad: usize) -> Vec<f64> {
    // A radix-2 FFT would be faster, but the test signals are short and a
    // direct DFT keeps the oracle trivially auditable.
    let half = pad / 2;
    let step = std::f64::consts::TAU / pad as f64;
    (0..half)
        .map(|k| {
            let w = step * k as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &s) in x.iter().enumerate() {
                let ph = w * i as f64;
                re += s * ph.cos();
                im -= s * ph.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Magnitude at one exact frequency (Goertzel-style direct sum).
pub fn tone_magnitude(x: &[f64], rate: u32, hz: f64) -> f64 {
    let w = std::f64::consts::TAU * hz / rate as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &s) in x.iter().enumerate() {
        let ph = w * i as f64;
        re += s * ph.cos();
        im -= s * ph.sin();
    }
    (re * re + im * im).sqrt()
}

/// Median of a slice (empty -> NaN).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Pearson correlation of the overlapping prefix of two signals.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let ea: f64 = a.iter().map(|x| x * x).sum();
    let eb: f64 = b.iter().map(|x| x * x).sum();
    dot / (ea * eb).sqrt().max(1e-12)
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64).sqrt()
}

/// Duration in seconds.
pub fn seconds(buf: &AudioBuffer) -> f64 {
    buf.len() as f64 / buf.sample_rate() as f64
}
