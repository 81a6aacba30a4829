//! Per-frame F0 estimation on the 20 ms frame / 5 ms hop grid. Candidates
//! come from the normalized cross-correlation (NCCF) over the configured
//! lag range; the final contour is the dynamic-programming path that
//! penalizes octave jumps, with frames falling below the voicing threshold
//! marked unvoiced.

use std::fmt::Write as _;

use crate::audio::{frame_count, AudioBuffer};
use crate::error::{Error, Result};
use crate::par;

/// F0 and voicing per analysis frame. Unvoiced frames carry f0 = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    f0: Vec<f64>,
    voiced: Vec<bool>,
    frame_s: f64,
    hop_s: f64,
}

impl PitchTrack {
    pub fn from_parts(f0: Vec<f64>, voiced: Vec<bool>, frame_s: f64, hop_s: f64) -> PitchTrack {
        assert_eq!(f0.len(), voiced.len());
        PitchTrack {
            f0,
            voiced,
            frame_s,
            hop_s,
        }
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    pub fn frame_s(&self) -> f64 {
        self.frame_s
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0
            .iter()
            .zip(&self.voiced)
            .filter(|&(_, &v)| v)
            .map(|(&f, _)| f)
    }

    /// Fraction of frames marked voiced.
    pub fn voiced_ratio(&self) -> f64 {
        if self.f0.is_empty() {
            return 0.0;
        }
        self.voiced.iter().filter(|&&v| v).count() as f64 / self.f0.len() as f64
    }

    /// Interpolated F0 at a sample position (None in unvoiced regions).
    /// Frame t is anchored at its center `t*hop + frame/2`.
    pub fn f0_at_sample(&self, pos: f64, rate: u32) -> Option<f64> {
        if self.f0.is_empty() {
            return None;
        }
        let hop = self.hop_s * rate as f64;
        let center0 = self.frame_s * rate as f64 / 2.0;
        let u = (pos - center0) / hop;
        let i = (u.floor() as isize).clamp(0, self.len() as isize - 1) as usize;
        let j = (i + 1).min(self.len() - 1);
        let frac = (u - i as f64).clamp(0.0, 1.0);
        match (self.voiced[i], self.voiced[j]) {
            (true, true) => Some(self.f0[i] + frac * (self.f0[j] - self.f0[i])),
            (true, false) => {
                if frac < 0.5 {
                    Some(self.f0[i])
                } else {
                    None
                }
            }
            (false, true) => {
                if frac >= 0.5 {
                    Some(self.f0[j])
                } else {
                    None
                }
            }
            (false, false) => None,
        }
    }

    /// CSV serialization: `frame_index,time_s,f0_hz,voiced`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,time_s,f0_hz,voiced\n");
        for (i, (&f0, &v)) in self.f0.iter().zip(&self.voiced).enumerate() {
            let _ = writeln!(out, "{i},{:.4},{f0:.4},{}", i as f64 * self.hop_s, v as u8);
        }
        out
    }
}

/// Tracker parameters; defaults cover conversational speech.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    /// Frames whose best NCCF falls below this are unvoiced.
    pub voicing_threshold: f64,
    /// Path cost per octave of frame-to-frame pitch jump.
    pub transition_cost: f64,
    pub frame_s: f64,
    pub hop_s: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            f0_min: 60.0,
            f0_max: 400.0,
            voicing_threshold: 0.3,
            transition_cost: 0.35,
            frame_s: 0.020,
            hop_s: 0.005,
        }
    }
}

impl TrackerConfig {
    fn validate(&self, rate: u32) -> Result<()> {
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max && self.f0_max < rate as f64 / 2.0) {
            return Err(Error::Domain(format!(
                "need 0 < f0_min < f0_max < rate/2, got {} and {}",
                self.f0_min, self.f0_max
            )));
        }
        if !(self.voicing_threshold > 0.0 && self.voicing_threshold < 1.0) {
            return Err(Error::Domain("voicing threshold must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// Mild preference for the shortest lag among equal-strength NCCF peaks,
/// which all sit at integer multiples of the true period.
const LAG_BIAS: f64 = 0.05;
/// Path cost of switching between voiced and unvoiced.
const VU_COST: f64 = 0.2;
/// NCCF floor below which a peak is not even a candidate.
const CANDIDATE_FLOOR: f64 = 0.15;
const MAX_CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    f0: f64,
    nccf: f64,
}

/// Track F0 over the buffer. Scaling the input by any positive constant
/// leaves the result unchanged: every decision is based on the
/// amplitude-normalized NCCF.
pub fn track_pitch(buffer: &AudioBuffer, config: &TrackerConfig) -> Result<PitchTrack> {
    let rate = buffer.sample_rate();
    config.validate(rate)?;
    let x = buffer.samples();
    let frame_len = (config.frame_s * rate as f64).round() as usize;
    let hop = (config.hop_s * rate as f64).round() as usize;
    let n_frames = frame_count(x.len(), frame_len, hop).ok_or(Error::EmptySignal)?;

    let lag_min = ((rate as f64 / config.f0_max).floor() as usize).max(2);
    let lag_max = ((rate as f64 / config.f0_min).ceil() as usize).min(x.len().saturating_sub(1));
    if lag_max <= lag_min {
        return Err(Error::Domain("lag range collapsed; signal too short".into()));
    }

    // Prefix energy for O(1) window energies.
    let mut prefix = vec![0.0f64; x.len() + 1];
    for (i, &s) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s * s;
    }
    let energy = |start: usize| -> f64 {
        let a = start.min(x.len());
        let b = (start + frame_len).min(x.len());
        prefix[b] - prefix[a]
    };

    let frame_candidates: Vec<Vec<Candidate>> = par::map_indexed(n_frames, |t| {
        let m = t * hop;
        let e0 = energy(m);
        if e0 <= 0.0 {
            return Vec::new();
        }
        let mut nccf = vec![0.0f64; lag_max + 1];
        for (k, value) in nccf.iter_mut().enumerate().take(lag_max + 1).skip(lag_min) {
            let ek = energy(m + k);
            if ek <= 0.0 {
                continue;
            }
            let upper = frame_len.min(x.len().saturating_sub(m + k));
            let mut num = 0.0;
            for j in 0..upper {
                num += x[m + j] * x[m + j + k];
            }
            *value = num / (e0 * ek).sqrt();
        }
        peak_candidates(&nccf, lag_min, lag_max, rate, config)
    });

    let (f0, voiced) = select_path(&frame_candidates, config);
    Ok(PitchTrack {
        f0,
        voiced,
        frame_s: config.frame_s,
        hop_s: config.hop_s,
    })
}

fn peak_candidates(
    nccf: &[f64],
    lag_min: usize,
    lag_max: usize,
    rate: u32,
    config: &TrackerConfig,
) -> Vec<Candidate> {
    let mut cands = Vec::new();
    for k in lag_min..=lag_max {
        let left = if k > lag_min { nccf[k - 1] } else { f64::MIN };
        let right = if k < lag_max { nccf[k + 1] } else { f64::MIN };
        if nccf[k] < CANDIDATE_FLOOR || nccf[k] < left || nccf[k] <= right {
            continue;
        }
        // Parabolic refinement around the integer peak.
        let (mut lag, mut value) = (k as f64, nccf[k]);
        if k > lag_min && k < lag_max {
            let (ym, y0, yp) = (nccf[k - 1], nccf[k], nccf[k + 1]);
            let denom = ym - 2.0 * y0 + yp;
            if denom < 0.0 {
                let delta = 0.5 * (ym - yp) / denom;
                if delta.abs() <= 0.5 {
                    lag = k as f64 + delta;
                    value = y0 - 0.25 * (ym - yp) * delta;
                }
            }
        }
        let f0 = (rate as f64 / lag).clamp(config.f0_min, config.f0_max);
        cands.push(Candidate {
            f0,
            nccf: value.min(1.0),
        });
    }
    // Strongest first, keep a few.
    cands.sort_by(|a, b| b.nccf.partial_cmp(&a.nccf).unwrap());
    cands.truncate(MAX_CANDIDATES);
    cands
}

/// Dynamic programming over per-frame candidates plus an unvoiced state.
/// Returns (f0, voiced) per frame.
fn select_path(frames: &[Vec<Candidate>], config: &TrackerConfig) -> (Vec<f64>, Vec<bool>) {
    let n = frames.len();
    let mut f0 = vec![0.0; n];
    let mut voiced = vec![false; n];
    if n == 0 {
        return (f0, voiced);
    }

    // State layout per frame: candidates [0..len), unvoiced state = len.
    let local = |t: usize, s: usize| -> f64 {
        let cands = &frames[t];
        if s < cands.len() {
            let c = cands[s];
            let lag_penalty = LAG_BIAS * (config.f0_max / c.f0).log2() / (config.f0_max / config.f0_min).log2();
            1.0 - c.nccf + lag_penalty.max(0.0)
        } else {
            1.0 - config.voicing_threshold
        }
    };
    let transition = |a: Option<f64>, b: Option<f64>| -> f64 {
        match (a, b) {
            (Some(fa), Some(fb)) => config.transition_cost * (fa / fb).log2().abs(),
            (None, None) => 0.0,
            _ => VU_COST,
        }
    };

    let mut cost: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);
    let first_states = frames[0].len() + 1;
    cost.push((0..first_states).map(|s| local(0, s)).collect());
    back.push(vec![0; first_states]);

    for t in 1..n {
        let states = frames[t].len() + 1;
        let prev_states = frames[t - 1].len() + 1;
        let mut row = vec![f64::INFINITY; states];
        let mut bk = vec![0usize; states];
        for s in 0..states {
            let fb = frames[t].get(s).map(|c| c.f0);
            for ps in 0..prev_states {
                let fa = frames[t - 1].get(ps).map(|c| c.f0);
                let c = cost[t - 1][ps] + transition(fa, fb) + local(t, s);
                if c < row[s] {
                    row[s] = c;
                    bk[s] = ps;
                }
            }
        }
        cost.push(row);
        back.push(bk);
    }

    // Backtrack from the cheapest final state.
    let mut state = (0..cost[n - 1].len())
        .min_by(|&a, &b| cost[n - 1][a].partial_cmp(&cost[n - 1][b]).unwrap())
        .unwrap_or(0);
    for t in (0..n).rev() {
        let cands = &frames[t];
        let best_nccf = cands.first().map(|c| c.nccf).unwrap_or(0.0);
        if state < cands.len() && best_nccf >= config.voicing_threshold {
            f0[t] = cands[state].f0;
            voiced[t] = true;
        }
        state = back[t][state];
    }
    (f0, voiced)
}

/// Median-filter voiced runs only; voicing flags are untouched. Near run
/// edges the window shrinks symmetrically, so edge values never change.
pub fn median_smooth(track: &PitchTrack, width: usize) -> Result<PitchTrack> {
    if width % 2 == 0 || width == 0 {
        return Err(Error::Domain(format!("width {width} must be odd and >= 1")));
    }
    let half = width / 2;
    let mut f0 = track.f0.clone();
    let n = track.len();
    let mut run_start = None;
    for i in 0..=n {
        let in_run = i < n && track.voiced[i];
        match (run_start, in_run) {
            (None, true) => run_start = Some(i),
            (Some(s), false) => {
                smooth_run(&track.f0, &mut f0, s, i, half);
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(PitchTrack {
        f0,
        voiced: track.voiced.clone(),
        frame_s: track.frame_s,
        hop_s: track.hop_s,
    })
}

fn smooth_run(src: &[f64], dst: &mut [f64], start: usize, end: usize, half: usize) {
    for i in start..end {
        let k = half.min(i - start).min(end - 1 - i);
        if k == 0 {
            continue;
        }
        let mut window: Vec<f64> = src[i - k..=i + k].to_vec();
        window.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dst[i] = window[window.len() / 2];
    }
}
