//! Deterministic synthetic test signals. The chirp sweeps its instantaneous
//! frequency log-linearly from `f0_start` to `f0_end`; the other kinds hold
//! `f0_start` constant.

use super::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Sine,
    Sawtooth,
    PulseTrain,
    Chirp,
}

const TONE_AMPLITUDE: f64 = 0.8;

pub fn synth_signal(
    kind: SynthKind,
    f0_start: f64,
    f0_end: f64,
    duration_s: f64,
    rate: u32,
) -> Result<AudioBuffer> {
    let nyquist = rate as f64 / 2.0;
    for f in [f0_start, f0_end] {
        if !(f > 0.0 && f < nyquist) {
            return Err(Error::InvalidFrequency { f0: f, rate });
        }
    }
    let n = (duration_s * rate as f64).round() as usize;
    let total = duration_s;

    // Closed-form phase of the log-linear sweep: for r = f_end/f_start,
    // phase(t) = 2*pi * f_start * T/ln(r) * (r^(t/T) - 1), reducing to
    // 2*pi*f_start*t when r = 1.
    let ratio = f0_end / f0_start;
    let cycles = |t: f64| -> f64 {
        if (ratio - 1.0).abs() < 1e-12 {
            f0_start * t
        } else {
            f0_start * total / ratio.ln() * (ratio.powf(t / total) - 1.0)
        }
    };

    let sweep = kind == SynthKind::Chirp;
    let mut samples = Vec::with_capacity(n);
    let mut prev_cycle = -1i64;
    for i in 0..n {
        let t = i as f64 / rate as f64;
        let c = if sweep {
            cycles(t)
        } else {
            i as f64 * f0_start / rate as f64
        };
        let phase = std::f64::consts::TAU * c;
        let s = match kind {
            SynthKind::Sine | SynthKind::Chirp => TONE_AMPLITUDE * phase.sin(),
            SynthKind::Sawtooth => TONE_AMPLITUDE * (2.0 * c.fract() - 1.0),
            SynthKind::PulseTrain => {
                let k = c.floor() as i64;
                let hit = k > prev_cycle;
                prev_cycle = k.max(prev_cycle);
                if hit {
                    1.0
                } else {
                    0.0
                }
            }
        };
        samples.push(s);
    }
    AudioBuffer::new(samples, rate)
}
