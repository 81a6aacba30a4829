//! Control curves: piecewise breakpoint functions over normalized time in
//! [0, 1] returning a positive speed or pitch ratio. Interpolation between
//! breakpoints is linear in the log of the ratio, so a straight segment is
//! a constant ramp in cents. Includes the text format, the named presets,
//! application to pitch tracks, and the flip/shift fakes used to probe
//! controllability.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pitch::PitchTrack;

/// Admissible ratio range; values beyond this put overlap-add synthesis
/// into heavy grain duplication and are rejected.
pub const RATIO_MIN: f64 = 0.25;
pub const RATIO_MAX: f64 = 4.0;

/// Monotone-in-time breakpoint function; first knot at t=0, last at t=1.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCurve {
    breakpoints: Vec<(f64, f64)>,
}

impl ControlCurve {
    /// Validate and build. Breakpoints must be strictly increasing in t,
    /// cover both endpoints, and hold values inside [RATIO_MIN, RATIO_MAX].
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints[0].0 != 0.0 {
            return Err(Error::MissingEndpoint(0.0));
        }
        if breakpoints[breakpoints.len() - 1].0 != 1.0 {
            return Err(Error::MissingEndpoint(1.0));
        }
        for pair in breakpoints.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Domain(format!(
                    "breakpoint times not strictly increasing at t={}",
                    pair[1].0
                )));
            }
        }
        for &(t, v) in &breakpoints {
            if !(0.0..=1.0).contains(&t) || !t.is_finite() {
                return Err(Error::Domain(format!("breakpoint time {t} outside [0,1]")));
            }
            if !v.is_finite() || !(RATIO_MIN..=RATIO_MAX).contains(&v) {
                return Err(Error::CurveOutOfRange {
                    value: v,
                    min: RATIO_MIN,
                    max: RATIO_MAX,
                });
            }
        }
        Ok(ControlCurve { breakpoints })
    }

    /// Constant curve at ratio 1.0.
    pub fn identity() -> Self {
        ControlCurve {
            breakpoints: vec![(0.0, 1.0), (1.0, 1.0)],
        }
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Ratio at normalized time `t`; geometric interpolation between the
    /// bracketing breakpoints, exact at the knots.
    pub fn sample(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("sample time {t} outside [0,1]")));
        }
        let bps = &self.breakpoints;
        // Exactness at knots comes first.
        if let Some(&(_, v)) = bps.iter().find(|&&(bt, _)| bt == t) {
            return Ok(v);
        }
        let hi = bps.partition_point(|&(bt, _)| bt < t);
        let (t0, v0) = bps[hi - 1];
        let (t1, v1) = bps[hi];
        let u = (t - t0) / (t1 - t0);
        Ok((v0.ln() + u * (v1.ln() - v0.ln())).exp())
    }

    /// Dense uniform sampling; `n >= 2` points from t=0 to t=1.
    pub fn render_samples(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1).max(1) as f64;
                (t, self.sample(t).expect("t in range"))
            })
            .collect()
    }

    /// Serialize to the text format (one `t value` pair per line, six
    /// decimal places).
    pub fn render(&self) -> String {
        let mut out = String::new();
        for &(t, v) in &self.breakpoints {
            let _ = writeln!(out, "{t:.6} {v:.6}");
        }
        out
    }
}

impl FromStr for ControlCurve {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        parse_curve(text)
    }
}

/// The named presets. The numeric extents are fixed constants chosen
/// inside the admissible ratio range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    /// Pitch rises abruptly to a peak near the start, then eases back.
    Stressing,
    /// Pitch ramps up steadily across the utterance.
    Rising,
    /// Speed dips in the middle and recovers.
    Parabola,
    /// Speed ramps from slightly slow to fast.
    SpeedUp,
    /// Speed ramps from fast-ish to slow.
    SlowDown,
}

impl PresetName {
    pub const ALL: [PresetName; 5] = [
        PresetName::Stressing,
        PresetName::Rising,
        PresetName::Parabola,
        PresetName::SpeedUp,
        PresetName::SlowDown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Stressing => "stressing",
            PresetName::Rising => "rising",
            PresetName::Parabola => "parabola",
            PresetName::SpeedUp => "speed-up",
            PresetName::SlowDown => "slow-down",
        }
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stressing" => Ok(PresetName::Stressing),
            "rising" => Ok(PresetName::Rising),
            "parabola" => Ok(PresetName::Parabola),
            "speed-up" | "speedup" => Ok(PresetName::SpeedUp),
            "slow-down" | "slowdown" => Ok(PresetName::SlowDown),
            other => Err(Error::Domain(format!("unknown preset '{other}'"))),
        }
    }
}

pub fn preset(name: PresetName) -> ControlCurve {
    let bps = match name {
        PresetName::Rising => vec![(0.0, 1.0), (1.0, 1.5)],
        PresetName::Stressing => vec![(0.0, 1.0), (0.15, 1.5), (1.0, 1.0)],
        PresetName::SpeedUp => vec![(0.0, 0.8), (1.0, 1.4)],
        PresetName::SlowDown => vec![(0.0, 1.25), (1.0, 0.7)],
        PresetName::Parabola => vec![(0.0, 1.3), (0.5, 0.7), (1.0, 1.3)],
    };
    ControlCurve::new(bps).expect("presets are valid by construction")
}

/// Parse the curve mini-language: `t value` pairs one per line, `#`
/// comments, blank lines ignored, or a single `preset:<name>` directive.
/// Out-of-order breakpoints are an error, not silently sorted.
pub fn parse_curve(text: &str) -> Result<ControlCurve> {
    let mut bps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix("preset:") {
            if !bps.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "preset directive mixed with breakpoints".into(),
                });
            }
            return Ok(preset(name.trim().parse()?));
        }
        let mut parts = line.split_whitespace();
        let (t, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(v), None) => (t, v),
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 't value', got '{line}'"),
                })
            }
        };
        let t: f64 = t.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad time '{t}'"),
        })?;
        let v: f64 = v.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad value '{v}'"),
        })?;
        bps.push((t, v));
    }
    ControlCurve::new(bps)
}

/// Multiply a pitch track through the curve: frame i is sampled at
/// t = i/(T-1). Unvoiced frames stay at zero and voicing is unchanged.
pub fn apply_to_pitch(track: &PitchTrack, curve: &ControlCurve) -> PitchTrack {
    let t_count = track.len();
    let f0: Vec<f64> = track
        .f0()
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let t = if t_count > 1 {
                i as f64 / (t_count - 1) as f64
            } else {
                0.0
            };
            f * curve.sample(t).expect("frame time in [0,1]")
        })
        .collect();
    PitchTrack::from_parts(f0, track.voiced().to_vec(), track.frame_s(), track.hop_s())
}

/// How a fake control curve is derived from the real one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FakeMode {
    /// Reverse time: value'(t) = value(1 - t).
    Flip,
    /// Rotate by the given normalized amount in (0, 1):
    /// value'(t) = value((t + amount) mod 1).
    Shift(f64),
}

/// Separation inserted between the two sides of a shift seam when the
/// original endpoints disagree.
const SEAM_GAP: f64 = 1e-6;

pub fn fake_curve(curve: &ControlCurve, mode: FakeMode) -> Result<ControlCurve> {
    match mode {
        FakeMode::Flip => {
            let mut bps: Vec<(f64, f64)> = curve
                .breakpoints()
                .iter()
                .map(|&(t, v)| (1.0 - t, v))
                .collect();
            bps.reverse();
            ControlCurve::new(bps)
        }
        FakeMode::Shift(amount) => {
            if !(amount > 0.0 && amount < 1.0) {
                return Err(Error::Domain(format!(
                    "shift amount {amount} must lie in (0,1)"
                )));
            }
            let v_start = curve.sample(amount)?;
            let seam = 1.0 - amount;
            let v_left = curve.sample(1.0)?; // limit approaching the seam
            let v_right = curve.sample(0.0)?; // limit leaving the seam
            let mut bps: Vec<(f64, f64)> = vec![(0.0, v_start), (1.0, v_start)];
            if (v_left - v_right).abs() < 1e-12 {
                bps.push((seam, v_right));
            } else {
                bps.push((seam - SEAM_GAP, v_left));
                bps.push((seam, v_right));
            }
            for &(t, v) in curve.breakpoints() {
                if t == 0.0 || t == 1.0 {
                    continue; // collapsed into the seam pair
                }
                let shifted = wrap_unit(t - amount);
                if shifted > SEAM_GAP && shifted < 1.0 - SEAM_GAP && (shifted - seam).abs() > 2.0 * SEAM_GAP
                {
                    bps.push((shifted, v));
                }
            }
            bps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            bps.dedup_by(|a, b| (a.0 - b.0).abs() < SEAM_GAP / 2.0);
            ControlCurve::new(bps)
        }
    }
}

fn wrap_unit(t: f64) -> f64 {
    let w = t - t.floor();
    if w < 0.0 {
        w + 1.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_point_rising() {
        let c = parse_curve("0 1.0\n1 1.5").unwrap();
        assert_eq!(c.breakpoints(), &[(0.0, 1.0), (1.0, 1.5)]);
    }

    #[test]
    fn value_below_bound_rejected() {
        let err = parse_curve("0 1.0\n0.5 0.2\n1 1.0").unwrap_err();
        assert!(matches!(err, Error::CurveOutOfRange { .. }));
    }

    #[test]
    fn preset_directive_matches_preset() {
        let c = parse_curve("preset:parabola").unwrap();
        assert_eq!(c, preset(PresetName::Parabola));
    }

    #[test]
    fn out_of_order_is_error_not_sorted() {
        assert!(parse_curve("0 1.0\n0.8 1.2\n0.4 1.1\n1 1.0").is_err());
    }

    #[test]
    fn missing_endpoints_rejected() {
        assert!(matches!(
            parse_curve("0.1 1.0\n1 1.5"),
            Err(Error::MissingEndpoint(_))
        ));
        assert!(matches!(
            parse_curve("0 1.0\n0.9 1.5"),
            Err(Error::MissingEndpoint(_))
        ));
    }

    #[test]
    fn log_linear_midpoint() {
        let c = ControlCurve::new(vec![(0.0, 1.0), (1.0, 4.0)]).unwrap();
        assert!((c.sample(0.5).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_at_knots_and_constant() {
        let c = preset(PresetName::Stressing);
        assert_eq!(c.sample(0.15).unwrap(), 1.5);
        assert_eq!(c.sample(0.0).unwrap(), 1.0);
        let id = ControlCurve::identity();
        for i in 0..=10 {
            assert_eq!(id.sample(i as f64 / 10.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn sample_outside_domain_rejected() {
        let c = ControlCurve::identity();
        assert!(c.sample(-0.1).is_err());
        assert!(c.sample(1.1).is_err());
    }

    #[test]
    fn flip_of_rising() {
        let c = preset(PresetName::Rising);
        let f = fake_curve(&c, FakeMode::Flip).unwrap();
        assert_eq!(f.breakpoints(), &[(0.0, 1.5), (1.0, 1.0)]);
    }

    #[test]
    fn flip_of_symmetric_parabola_matches_original() {
        let c = preset(PresetName::Parabola);
        let f = fake_curve(&c, FakeMode::Flip).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert!((c.sample(t).unwrap() - f.sample(t).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_relocates_stressing_peak() {
        let c = preset(PresetName::Stressing);
        let s = fake_curve(&c, FakeMode::Shift(0.5)).unwrap();
        // Peak originally at t=0.15 moves to (0.15 - 0.5) mod 1 = 0.65.
        let n = 2001;
        let (mut best_t, mut best_v) = (0.0, 0.0);
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let v = s.sample(t).unwrap();
            if v > best_v {
                best_v = v;
                best_t = t;
            }
        }
        assert!((best_t - 0.65).abs() < 1.0 / (n - 1) as f64 + 1e-9);
        assert!((best_v - 1.5).abs() < 1e-6);
    }

    #[test]
    fn shift_amount_bounds_enforced() {
        let c = preset(PresetName::Rising);
        assert!(fake_curve(&c, FakeMode::Shift(0.0)).is_err());
        assert!(fake_curve(&c, FakeMode::Shift(1.0)).is_err());
    }

    #[test]
    fn render_parse_round_trip() {
        for name in PresetName::ALL {
            let c = preset(name);
            let back = parse_curve(&c.render()).unwrap();
            assert_eq!(c.breakpoints(), back.breakpoints(), "{name:?}");
        }
    }
}
