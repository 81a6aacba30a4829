//! Pitch-synchronous overlap-add: epoch detection, time-varying time-scale
//! modification, and time-varying pitch-scale modification.
//!
//! Grains are two-sided raised-cosine windows spanning one analysis-mark
//! interval on each side, so unmodified overlap-add reconstructs the input
//! exactly; synthesis re-spaces, duplicates or skips grains. Stretch and
//! shift amounts come from a control curve over normalized input time.

use crate::audio::AudioBuffer;
use crate::curves::{ControlCurve, RATIO_MAX, RATIO_MIN};
use crate::error::{Error, Result};
use crate::par;
use crate::pitch::PitchTrack;

/// Spacing of synthetic marks in unvoiced or silent regions.
const UNVOICED_SPACING_S: f64 = 0.010;
/// Low-pass cutoff for the epoch-picking signal, above the tracker's
/// default F0 ceiling.
const EPOCH_LOWPASS_HZ: f64 = 600.0;
/// Floor for the overlap-add window-sum normalization.
const WSUM_FLOOR: f64 = 0.3;

/// Pitch marks covering a whole utterance: strictly increasing sample
/// positions, one per local period in voiced spans, fixed 10 ms spacing in
/// unvoiced spans.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMarks {
    positions: Vec<usize>,
    voiced_span: Vec<bool>,
}

impl EpochMarks {
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn voiced_span(&self) -> &[bool] {
        &self.voiced_span
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// (left, right) half-lengths of each grain, taken from the spacing to
    /// the neighboring marks.
    fn spans(&self, fallback: usize) -> Vec<(usize, usize)> {
        let n = self.positions.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 {
                    self.positions[i] - self.positions[i - 1]
                } else if n > 1 {
                    self.positions[1] - self.positions[0]
                } else {
                    fallback
                };
                let right = if i + 1 < n {
                    self.positions[i + 1] - self.positions[i]
                } else {
                    left
                };
                (left.max(1), right.max(1))
            })
            .collect()
    }

    fn nearest(&self, pos: f64) -> usize {
        let idx = self.positions.partition_point(|&m| (m as f64) < pos);
        if idx == 0 {
            return 0;
        }
        if idx >= self.positions.len() {
            return self.positions.len() - 1;
        }
        let before = pos - self.positions[idx - 1] as f64;
        let after = self.positions[idx] as f64 - pos;
        if before <= after {
            idx - 1
        } else {
            idx
        }
    }
}

/// Zero-phase FIR low-pass used to stabilize epoch picking.
fn lowpass(x: &[f64], rate: u32) -> Vec<f64> {
    let fc = EPOCH_LOWPASS_HZ / rate as f64;
    let half = 64usize;
    let mut h = Vec::with_capacity(2 * half + 1);
    for j in -(half as isize)..=(half as isize) {
        let t = j as f64;
        let sinc = if t == 0.0 {
            2.0 * fc
        } else {
            (std::f64::consts::TAU * fc * t).sin() / (std::f64::consts::PI * t)
        };
        let w = 0.5 + 0.5 * (std::f64::consts::PI * t / half as f64).cos();
        h.push(sinc * w);
    }
    let norm: f64 = h.iter().sum();
    for v in &mut h {
        *v /= norm;
    }
    par::map_indexed(x.len(), |n| {
        let mut acc = 0.0;
        for (ji, &hv) in h.iter().enumerate() {
            let j = ji as isize - half as isize;
            let idx = n as isize - j;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += hv * x[idx as usize];
            }
        }
        acc
    })
}

/// Place pitch marks over the buffer. In voiced regions marks sit on local
/// maxima of the low-passed signal one period apart; unvoiced gaps get
/// synthetic marks every 10 ms. Silence still yields the synthetic grid.
pub fn detect_epochs(buffer: &AudioBuffer, track: &PitchTrack) -> EpochMarks {
    let x = buffer.samples();
    let rate = buffer.sample_rate();
    let len = x.len();
    let uv_step = (UNVOICED_SPACING_S * rate as f64).round() as usize;
    if len == 0 {
        return EpochMarks {
            positions: vec![],
            voiced_span: vec![],
        };
    }
    let lp = lowpass(x, rate);

    let mut positions: Vec<usize> = Vec::new();
    let mut voiced_span: Vec<bool> = Vec::new();
    loop {
        let prev = positions.last().copied();
        let probe = prev.map_or(0, |p| p + uv_step / 2);
        let f0 = track.f0_at_sample(probe as f64, rate);
        let next = match (prev, f0) {
            (None, Some(f0)) => {
                let period = (rate as f64 / f0).round() as usize;
                argmax(&lp, 0, period.min(len))
            }
            (None, None) => Some(0),
            (Some(p), Some(f0)) => {
                let period = rate as f64 / f0;
                let lo = p + (0.75 * period).round().max(1.0) as usize;
                let hi = p + (1.25 * period).round() as usize;
                argmax(&lp, lo, (hi + 1).min(len))
            }
            (Some(p), None) => Some(p + uv_step),
        };
        match next {
            Some(m) if m < len => {
                debug_assert!(prev.map_or(true, |p| m > p));
                positions.push(m);
                voiced_span.push(track.f0_at_sample(m as f64, rate).is_some());
            }
            _ => break,
        }
    }
    EpochMarks {
        positions,
        voiced_span,
    }
}

fn argmax(x: &[f64], lo: usize, hi: usize) -> Option<usize> {
    if lo >= hi || lo >= x.len() {
        return None;
    }
    let hi = hi.min(x.len());
    let mut best = lo;
    for i in lo + 1..hi {
        if x[i] > x[best] {
            best = i;
        }
    }
    Some(best)
}

fn check_curve(curve: &ControlCurve) -> Result<()> {
    for &(_, v) in curve.breakpoints() {
        if !(RATIO_MIN..=RATIO_MAX).contains(&v) {
            return Err(Error::CurveOutOfRange {
                value: v,
                min: RATIO_MIN,
                max: RATIO_MAX,
            });
        }
    }
    Ok(())
}

struct Ola {
    acc: Vec<f64>,
    wsum: Vec<f64>,
}

impl Ola {
    fn new(len: usize) -> Ola {
        Ola {
            acc: vec![0.0; len],
            wsum: vec![0.0; len],
        }
    }

    /// Overlap-add the grain around analysis mark `mark` at output center
    /// `center`. Raised-cosine halves of lengths (left, right).
    fn add_grain(&mut self, x: &[f64], mark: usize, center: isize, left: usize, right: usize) {
        for j in -(left as isize)..(right as isize) {
            let src = mark as isize + j;
            let dst = center + j;
            if src < 0
                || src >= x.len() as isize
                || dst < 0
                || dst >= self.acc.len() as isize
            {
                continue;
            }
            let span = if j < 0 { left as f64 } else { right as f64 };
            let w = 0.5 + 0.5 * (std::f64::consts::PI * j as f64 / span).cos();
            self.acc[dst as usize] += w * x[src as usize];
            self.wsum[dst as usize] += w;
        }
    }

    fn finish(mut self, out_len: usize, rate: u32) -> Result<AudioBuffer> {
        self.acc.truncate(out_len);
        self.acc.resize(out_len, 0.0);
        for (v, &w) in self.acc.iter_mut().zip(&self.wsum) {
            *v /= w.max(WSUM_FLOOR);
        }
        AudioBuffer::new(self.acc, rate)
    }
}

/// Time-varying time-scale modification. The curve gives a speed factor
/// s(t) over normalized input time: s > 1 shortens, s < 1 lengthens, and
/// pitch is preserved throughout. Output duration is the integral of 1/s.
pub fn time_scale(
    buffer: &AudioBuffer,
    marks: &EpochMarks,
    track: &PitchTrack,
    speed_curve: &ControlCurve,
) -> Result<AudioBuffer> {
    check_curve(speed_curve)?;
    let x = buffer.samples();
    let rate = buffer.sample_rate();
    let len = x.len();
    if len == 0 || marks.is_empty() {
        return AudioBuffer::new(vec![], rate);
    }
    let _ = track;

    // Cumulative warp: warp[i] is the output time of input sample i.
    let mut warp = Vec::with_capacity(len + 1);
    warp.push(0.0f64);
    for i in 0..len {
        let t = (i as f64 + 0.5) / len as f64;
        let s = speed_curve.sample(t.min(1.0))?;
        warp.push(warp[i] + 1.0 / s);
    }
    let out_len = warp[len].round() as usize;

    let uv_step = (UNVOICED_SPACING_S * rate as f64).round() as usize;
    let spans = marks.spans(uv_step);
    let mut ola = Ola::new(out_len + 4 * uv_step);

    // Inverse warp walked with a moving lower bound; synthesis positions
    // only ever move forward.
    let mut seg = 0usize;
    let mut inverse_warp = |y: f64| -> f64 {
        while seg + 1 < warp.len() && warp[seg + 1] < y {
            seg += 1;
        }
        let span = warp[seg + 1] - warp[seg];
        seg as f64 + (y - warp[seg]) / span
    };

    let mut synth_pos = warp[marks.positions()[0]];
    let end = warp[len];
    while synth_pos < end {
        let t_in = inverse_warp(synth_pos);
        let i = marks.nearest(t_in);
        let (left, right) = spans[i];
        ola.add_grain(x, marks.positions()[i], synth_pos.round() as isize, left, right);
        synth_pos += right as f64; // advance one local period: pitch kept
    }
    ola.finish(out_len, rate)
}

/// Time-varying pitch-scale modification. The curve gives a pitch ratio
/// r(t); synthesis marks are re-spaced to period/r while grains keep their
/// analysis windows, so duration is conserved. Unvoiced grains are moved
/// but never re-pitched.
pub fn pitch_scale(
    buffer: &AudioBuffer,
    marks: &EpochMarks,
    track: &PitchTrack,
    pitch_curve: &ControlCurve,
) -> Result<AudioBuffer> {
    check_curve(pitch_curve)?;
    let x = buffer.samples();
    let rate = buffer.sample_rate();
    let len = x.len();
    if len == 0 || marks.is_empty() {
        return AudioBuffer::new(vec![], rate);
    }
    let _ = track;

    let uv_step = (UNVOICED_SPACING_S * rate as f64).round() as usize;
    let spans = marks.spans(uv_step);
    let mut ola = Ola::new(len + 4 * uv_step);

    let mut synth_pos = marks.positions()[0] as f64;
    while synth_pos < len as f64 {
        let i = marks.nearest(synth_pos);
        let (left, right) = spans[i];
        ola.add_grain(x, marks.positions()[i], synth_pos.round() as isize, left, right);
        let step = if marks.voiced_span()[i] {
            let t = (synth_pos / len.max(1) as f64).clamp(0.0, 1.0);
            right as f64 / pitch_curve.sample(t)?
        } else {
            right as f64
        };
        synth_pos += step;
    }
    ola.finish(len, rate)
}
