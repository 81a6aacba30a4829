//! Linear-prediction analysis and the cross-synthesis converter built on
//! it: the source signal's prediction residual is filtered through the
//! target's spectral-envelope filter frame by frame, transferring timbre
//! while the excitation keeps the source's pitch and timing.

use crate::audio::{frame_count, AudioBuffer};
use crate::curves::ControlCurve;
use crate::error::{Error, Result};
use crate::fft::hann;
use crate::par;
use crate::pitch::{track_pitch, TrackerConfig};
use crate::psola::{detect_epochs, pitch_scale, time_scale};

/// Default prediction order at 16 kHz (rate/1000 + 2).
pub const DEFAULT_ORDER: usize = 18;
/// Analysis frame and hop in samples (30 ms / 7.5 ms at 16 kHz).
pub const LPC_FRAME: usize = 480;
pub const LPC_HOP: usize = 120;
const PREEMPHASIS: f64 = 0.97;

/// One frame's prediction model: coefficients of
/// `x[t] ~ sum a_i * x[t-i]`, the reflection coefficients from the
/// Levinson recursion, and the residual RMS as gain.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcFrame {
    pub coefficients: Vec<f64>,
    pub reflection: Vec<f64>,
    pub gain: f64,
}

/// Autocorrelation-method LPC via the Levinson-Durbin recursion. The
/// recursion keeps every reflection magnitude below one, so the synthesis
/// filter is stable; a zero-energy frame yields zero coefficients.
pub fn lpc_analyze(frame: &[f64], order: usize) -> Result<LpcFrame> {
    if frame.len() <= order {
        return Err(Error::OrderTooHigh {
            order,
            len: frame.len(),
        });
    }
    let mut r = vec![0.0f64; order + 1];
    for (k, rv) in r.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t in k..frame.len() {
            acc += frame[t] * frame[t - k];
        }
        *rv = acc;
    }
    if r[0] <= 0.0 {
        return Ok(LpcFrame {
            coefficients: vec![0.0; order],
            reflection: vec![0.0; order],
            gain: 0.0,
        });
    }
    r[0] *= 1.0 + 1e-9; // tiny ridge against singular tones

    let mut a = vec![0.0f64; order + 1];
    let mut reflection = vec![0.0f64; order];
    let mut energy = r[0];
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / energy;
        if k.abs() >= 1.0 {
            // degenerate frame: stop at the stable lower order
            break;
        }
        reflection[i - 1] = k;
        let mut next = a.clone();
        next[i] = k;
        for j in 1..i {
            next[j] = a[j] - k * a[i - j];
        }
        a = next;
        energy *= 1.0 - k * k;
    }
    Ok(LpcFrame {
        coefficients: a[1..].to_vec(),
        reflection,
        gain: (energy / frame.len() as f64).sqrt(),
    })
}

/// Inverse filter: e[t] = x[t] - sum a_i * x[t-i].
pub fn residual(frame: &[f64], lpc: &LpcFrame) -> Vec<f64> {
    let a = &lpc.coefficients;
    (0..frame.len())
        .map(|t| {
            let mut e = frame[t];
            for (i, &ai) in a.iter().enumerate() {
                if t > i {
                    e -= ai * frame[t - i - 1];
                }
            }
            e
        })
        .collect()
}

/// Synthesis filter: y[t] = e[t] + sum a_i * y[t-i]; exact inverse of
/// `residual` from zero state.
pub fn synthesize(excitation: &[f64], lpc: &LpcFrame) -> Vec<f64> {
    let a = &lpc.coefficients;
    let mut y = vec![0.0f64; excitation.len()];
    for t in 0..excitation.len() {
        let mut v = excitation[t];
        for (i, &ai) in a.iter().enumerate() {
            if t > i {
                v += ai * y[t - i - 1];
            }
        }
        y[t] = v;
    }
    y
}

fn preemphasize(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for &s in x {
        out.push(s - PREEMPHASIS * prev);
        prev = s;
    }
    out
}

fn deemphasize(x: &mut [f64]) {
    let mut prev = 0.0;
    for s in x.iter_mut() {
        *s += PREEMPHASIS * prev;
        prev = *s;
    }
}

/// Filter the source's residual through the target's per-frame envelope.
/// Target frames are stretched over the source frame count by
/// nearest-index mapping, so non-parallel inputs of any lengths pair up.
pub fn cross_synthesize(source: &AudioBuffer, target: &AudioBuffer) -> Result<AudioBuffer> {
    cross_synthesize_with_order(source, target, DEFAULT_ORDER)
}

pub fn cross_synthesize_with_order(
    source: &AudioBuffer,
    target: &AudioBuffer,
    order: usize,
) -> Result<AudioBuffer> {
    if source.sample_rate() != target.sample_rate() {
        return Err(Error::RateMismatch {
            a: source.sample_rate(),
            b: target.sample_rate(),
        });
    }
    let n_src = frame_count(source.len(), LPC_FRAME, LPC_HOP).ok_or(Error::EmptySignal)?;
    let n_tgt = frame_count(target.len(), LPC_FRAME, LPC_HOP).ok_or(Error::EmptySignal)?;

    let src = preemphasize(source.samples());
    let tgt = preemphasize(target.samples());
    let window = hann(LPC_FRAME);

    let frames: Vec<Vec<f64>> = par::map_indexed(n_src, |i| {
        let s = &src[i * LPC_HOP..i * LPC_HOP + LPC_FRAME];
        let tgt_idx = if n_src <= 1 {
            0
        } else {
            ((i as f64) * (n_tgt - 1) as f64 / (n_src - 1) as f64).round() as usize
        };
        let t = &tgt[tgt_idx * LPC_HOP..tgt_idx * LPC_HOP + LPC_FRAME];
        let win_s: Vec<f64> = s.iter().zip(&window).map(|(x, w)| x * w).collect();
        let win_t: Vec<f64> = t.iter().zip(&window).map(|(x, w)| x * w).collect();
        let lpc_s = lpc_analyze(&win_s, order).expect("frame longer than order");
        let lpc_t = lpc_analyze(&win_t, order).expect("frame longer than order");
        let excitation = residual(&win_s, &lpc_s);
        let mut out = synthesize(&excitation, &lpc_t);
        // keep the source frame's energy so dynamics follow the source
        let rms_in = rms(&win_s);
        let rms_out = rms(&out);
        if rms_out > 1e-12 {
            let scale = rms_in / rms_out;
            for v in &mut out {
                *v *= scale;
            }
        }
        out
    });

    let mut acc = vec![0.0f64; source.len()];
    let mut wsum = vec![0.0f64; source.len()];
    for (i, frame) in frames.iter().enumerate() {
        let start = i * LPC_HOP;
        for (j, (&v, &w)) in frame.iter().zip(&window).enumerate() {
            acc[start + j] += v;
            wsum[start + j] += w;
        }
    }
    for (v, &w) in acc.iter_mut().zip(&wsum) {
        *v /= w.max(0.25);
    }
    deemphasize(&mut acc);
    AudioBuffer::new(acc, source.sample_rate())
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64).sqrt()
}

/// The full baseline conversion: time-scale the source per the speed
/// curve, re-analyze, pitch-scale per the pitch curve, then transfer the
/// target's envelope by cross-synthesis. Deterministic end to end.
pub fn p_lpc_convert(
    source: &AudioBuffer,
    target: &AudioBuffer,
    speed_curve: &ControlCurve,
    pitch_curve: &ControlCurve,
) -> Result<AudioBuffer> {
    let tracker = TrackerConfig::default();
    let track = track_pitch(source, &tracker)?;
    let marks = detect_epochs(source, &track);
    let speed_mod = time_scale(source, &marks, &track, speed_curve)?;

    // pitch analysis re-runs on the speed-modified signal
    let track2 = track_pitch(&speed_mod, &tracker)?;
    let marks2 = detect_epochs(&speed_mod, &track2);
    let pitch_mod = pitch_scale(&speed_mod, &marks2, &track2, pitch_curve)?;

    cross_synthesize(&pitch_mod, target)
}
