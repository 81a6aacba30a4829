//! Band-limited sample-rate conversion with a Kaiser-windowed sinc kernel.

use super::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;

/// Zero crossings of the sinc on each side of the kernel center.
const ZERO_CROSSINGS: f64 = 32.0;
/// Kaiser shape parameter; ~90 dB stopband.
const KAISER_BETA: f64 = 9.0;
/// Cutoff backs off from Nyquist to leave a transition band.
const ROLLOFF: f64 = 0.945;

/// Resample to `target_rate`. Output length is `round(len * target/source)`;
/// content above the target Nyquist is attenuated by the kernel stopband.
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::Domain("target rate must be positive".into()));
    }
    let source_rate = buffer.sample_rate();
    if target_rate == source_rate {
        return Ok(buffer.clone());
    }
    let x = buffer.samples();
    let ratio = target_rate as f64 / source_rate as f64;
    let out_len = (x.len() as f64 * ratio).round() as usize;
    if x.is_empty() || out_len == 0 {
        return AudioBuffer::new(vec![], target_rate);
    }

    // Cutoff in cycles per input sample; shrink when downsampling.
    let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
    let step = 1.0 / ratio;

    let out = par::map_indexed(out_len, |n| {
        let center = n as f64 * step;
        let lo = ((center - half_width).ceil() as isize).max(0) as usize;
        let hi = ((center + half_width).floor() as isize).min(x.len() as isize - 1) as usize;
        let mut acc = 0.0;
        for (k, &xv) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let t = k as f64 - center;
            acc += xv * kernel(t, cutoff, half_width);
        }
        acc
    });

    AudioBuffer::new(out, target_rate)
}

fn kernel(t: f64, cutoff: f64, half_width: f64) -> f64 {
    let s = 2.0 * cutoff * sinc(2.0 * cutoff * t);
    s * kaiser(t / half_width)
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        let p = std::f64::consts::PI * t;
        p.sin() / p
    }
}

fn kaiser(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..=40 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}
