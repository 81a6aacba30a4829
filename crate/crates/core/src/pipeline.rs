//! Pipeline-level wiring: the shared configuration, the staged
//! speed-then-pitch conversion with its sidecar metadata, and the analysis
//! bundle (pitch codes, unit indices, speaker vector) handed to an
//! external synthesizer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, MelConfig};
use crate::curves::ControlCurve;
use crate::error::{Error, Result};
use crate::eval::{speaker_embedding, SpeakerEmbedding, EMBEDDING_DIM};
use crate::lpc;
use crate::pitch::{track_pitch, PitchTrack, TrackerConfig};
use crate::psola::{detect_epochs, pitch_scale, time_scale};
use crate::units::{assign_units, extract_features, UnitCodebook};
use crate::vq::{encode, VqPitchModel};

/// Everything the CLI pipeline needs in one place. The analysis grid is
/// fixed at four hops per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub frame_s: f64,
    pub hop_s: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
    pub transition_cost: f64,
    pub lpc_order: usize,
    pub n_mels: usize,
    pub mel_frame_len: usize,
    pub mel_hop: usize,
    pub vq_model: Option<PathBuf>,
    pub unit_codebook: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate: 16000,
            frame_s: 0.020,
            hop_s: 0.005,
            f0_min: 60.0,
            f0_max: 400.0,
            voicing_threshold: 0.3,
            transition_cost: 0.35,
            lpc_order: lpc::DEFAULT_ORDER,
            n_mels: 80,
            mel_frame_len: 1024,
            mel_hop: 256,
            vq_model: None,
            unit_codebook: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            f0_min: self.f0_min,
            f0_max: self.f0_max,
            voicing_threshold: self.voicing_threshold,
            transition_cost: self.transition_cost,
            frame_s: self.frame_s,
            hop_s: self.hop_s,
        }
    }

    pub fn mel(&self) -> MelConfig {
        MelConfig {
            n_mels: self.n_mels,
            frame_len: self.mel_frame_len,
            hop: self.mel_hop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = self.frame_s / self.hop_s;
        if (ratio - 4.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "frame_s/hop_s must be 4, got {ratio}"
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Domain("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Load from JSON (leading `{`) or `key=value` lines with `#` comments.
    pub fn from_file(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = if text.trim_start().starts_with('{') {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: 0,
                message: e.to_string(),
            })?
        } else {
            Self::from_key_values(&text)?
        };
        Ok(config)
    }

    fn from_key_values(text: &str) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: idx + 1,
                message: format!("expected key=value, got '{line}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Parse {
                line: idx + 1,
                message: format!("bad {what} '{value}' for key '{key}'"),
            };
            match key {
                "sample_rate" => config.sample_rate = value.parse().map_err(|_| bad("int"))?,
                "frame_s" => config.frame_s = value.parse().map_err(|_| bad("float"))?,
                "hop_s" => config.hop_s = value.parse().map_err(|_| bad("float"))?,
                "f0_min" => config.f0_min = value.parse().map_err(|_| bad("float"))?,
                "f0_max" => config.f0_max = value.parse().map_err(|_| bad("float"))?,
                "voicing_threshold" => {
                    config.voicing_threshold = value.parse().map_err(|_| bad("float"))?
                }
                "transition_cost" => {
                    config.transition_cost = value.parse().map_err(|_| bad("float"))?
                }
                "lpc_order" => config.lpc_order = value.parse().map_err(|_| bad("int"))?,
                "n_mels" => config.n_mels = value.parse().map_err(|_| bad("int"))?,
                "mel_frame_len" => {
                    config.mel_frame_len = value.parse().map_err(|_| bad("int"))?
                }
                "mel_hop" => config.mel_hop = value.parse().map_err(|_| bad("int"))?,
                "vq_model" => config.vq_model = Some(PathBuf::from(value)),
                "unit_codebook" => config.unit_codebook = Some(PathBuf::from(value)),
                "seed" => config.seed = value.parse().map_err(|_| bad("int"))?,
                other => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        Ok(config)
    }
}

// ---------------------------------------------------------------------------
// Conversion
// ---------------------------------------------------------------------------

/// Synthesis engines the conversion stage can hand off to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Plpc,
}

/// Median voiced F0 and voicing ratio of a track.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct F0Summary {
    pub median_hz: f64,
    pub voiced_ratio: f64,
}

impl F0Summary {
    fn of(track: &PitchTrack) -> F0Summary {
        let mut voiced: Vec<f64> = track.voiced_f0().collect();
        voiced.sort_by(|a, b| a.partial_cmp(b).unwrap());
        F0Summary {
            median_hz: voiced.get(voiced.len() / 2).copied().unwrap_or(0.0),
            voiced_ratio: track.voiced_ratio(),
        }
    }
}

/// Deterministic record of what a conversion did; written next to the
/// output WAV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sidecar {
    pub engine: String,
    /// Stages in execution order; pitch analysis runs on the output of the
    /// speed stage.
    pub stage_order: Vec<String>,
    pub speed_curve: String,
    pub pitch_curve: String,
    pub input_duration_s: f64,
    pub output_duration_s: f64,
    /// Input duration mapped through the speed curve's integral.
    pub expected_speed_duration_s: f64,
    pub source_f0: F0Summary,
    pub speed_modified_f0: F0Summary,
    pub output_f0: F0Summary,
}

pub struct Conversion {
    pub audio: AudioBuffer,
    pub sidecar: Sidecar,
}

/// Integral of 1/s over the input: the duration the speed stage should
/// produce.
pub fn expected_duration_s(curve: &ControlCurve, input_len: usize, rate: u32) -> f64 {
    let mut acc = 0.0;
    for i in 0..input_len {
        let t = (i as f64 + 0.5) / input_len as f64;
        acc += 1.0 / curve.sample(t.min(1.0)).expect("t in [0,1]");
    }
    acc / rate as f64
}

/// Run the staged conversion: speed control, pitch control on the
/// speed-modified signal, then envelope transfer through the selected
/// engine. Identical inputs produce bit-identical output.
pub fn convert(
    source: &AudioBuffer,
    target: &AudioBuffer,
    speed_curve: &ControlCurve,
    pitch_curve: &ControlCurve,
    engine: Engine,
    config: &PipelineConfig,
) -> Result<Conversion> {
    config.validate()?;
    let tracker = config.tracker();

    let source_track = track_pitch(source, &tracker)?;
    let marks = detect_epochs(source, &source_track);
    let speed_mod = time_scale(source, &marks, &source_track, speed_curve)?;

    let speed_track = track_pitch(&speed_mod, &tracker)?;
    let marks2 = detect_epochs(&speed_mod, &speed_track);
    let pitch_mod = pitch_scale(&speed_mod, &marks2, &speed_track, pitch_curve)?;

    let audio = match engine {
        Engine::Plpc => lpc::cross_synthesize_with_order(&pitch_mod, target, config.lpc_order)?,
    };

    let output_track = track_pitch(&audio, &tracker)?;
    let sidecar = Sidecar {
        engine: "plpc".into(),
        stage_order: vec![
            "speed-control".into(),
            "pitch-control".into(),
            "plpc-synthesis".into(),
        ],
        speed_curve: speed_curve.render(),
        pitch_curve: pitch_curve.render(),
        input_duration_s: source.duration_s(),
        output_duration_s: audio.duration_s(),
        expected_speed_duration_s: expected_duration_s(
            speed_curve,
            source.len(),
            source.sample_rate(),
        ),
        source_f0: F0Summary::of(&source_track),
        speed_modified_f0: F0Summary::of(&speed_track),
        output_f0: F0Summary::of(&output_track),
    };
    Ok(Conversion { audio, sidecar })
}

// ---------------------------------------------------------------------------
// Analysis bundle
// ---------------------------------------------------------------------------

/// The discrete representation handed to an external synthesizer: one
/// pitch code and one unit per frame, plus the utterance-level speaker
/// vector stored once with a broadcast flag.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisBundle {
    pub frame_count: usize,
    pub frame_s: f64,
    pub hop_s: f64,
    pub pitch_codes: Vec<usize>,
    pub units: Vec<usize>,
    pub speaker: SpeakerEmbedding,
}

const BUNDLE_TAG: &str = "paravox-bundle";

#[derive(Serialize, Deserialize)]
struct BundleFile {
    format: String,
    version: u32,
    frame_count: usize,
    frame_s: f64,
    hop_s: f64,
    pitch_codes: Vec<usize>,
    units: Vec<usize>,
    speaker: BundleSpeaker,
}

#[derive(Serialize, Deserialize)]
struct BundleSpeaker {
    dim: usize,
    broadcast: bool,
    byte_order: String,
    data_b64: String,
}

impl AnalysisBundle {
    pub fn to_json(&self) -> String {
        let file = BundleFile {
            format: BUNDLE_TAG.into(),
            version: 1,
            frame_count: self.frame_count,
            frame_s: self.frame_s,
            hop_s: self.hop_s,
            pitch_codes: self.pitch_codes.clone(),
            units: self.units.clone(),
            speaker: BundleSpeaker {
                dim: EMBEDDING_DIM,
                broadcast: true,
                byte_order: "little-endian".into(),
                data_b64: crate::persist::encode_f64s(self.speaker.vector()),
            },
        };
        serde_json::to_string_pretty(&file).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<AnalysisBundle> {
        let file: BundleFile =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != BUNDLE_TAG || file.version != 1 {
            return Err(Error::ModelFormat(format!(
                "unknown container {}/{}",
                file.format, file.version
            )));
        }
        if file.pitch_codes.len() != file.frame_count || file.units.len() != file.frame_count {
            return Err(Error::DimensionMismatch {
                expected: file.frame_count,
                got: file.pitch_codes.len().min(file.units.len()),
            });
        }
        let speaker = SpeakerEmbedding::from_vector(crate::persist::decode_f64s(
            &file.speaker.data_b64,
        )?)?;
        Ok(AnalysisBundle {
            frame_count: file.frame_count,
            frame_s: file.frame_s,
            hop_s: file.hop_s,
            pitch_codes: file.pitch_codes,
            units: file.units,
            speaker,
        })
    }
}

/// Analyze a source/target pair into the discrete bundle. The pitch codes
/// and unit indices share the frame grid; the speaker embedding comes from
/// the target utterance.
pub fn analyze(
    source: &AudioBuffer,
    target: &AudioBuffer,
    vq_model: &VqPitchModel,
    unit_codebook: &UnitCodebook,
    config: &PipelineConfig,
) -> Result<AnalysisBundle> {
    config.validate()?;
    let track = track_pitch(source, &config.tracker())?;
    let codes = encode(vq_model, &track)?;
    let features = extract_features(source)?;
    let units = assign_units(unit_codebook, &features)?;
    if codes.codes.len() != units.units.len() {
        return Err(Error::DimensionMismatch {
            expected: codes.codes.len(),
            got: units.units.len(),
        });
    }
    let speaker = speaker_embedding(target)?;
    Ok(AnalysisBundle {
        frame_count: codes.codes.len(),
        frame_s: config.frame_s,
        hop_s: config.hop_s,
        pitch_codes: codes.codes,
        units: units.units,
        speaker,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn grid_ratio_enforced() {
        let config = PipelineConfig {
            hop_s: 0.004,
            ..PipelineConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn key_value_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.conf");
        std::fs::write(
            &path,
            "# comment\nsample_rate = 16000\nf0_min=70\nlpc_order = 12\nseed=9\n",
        )
        .unwrap();
        let config = PipelineConfig::from_file(&path).unwrap();
        assert_eq!(config.f0_min, 70.0);
        assert_eq!(config.lpc_order, 12);
        assert_eq!(config.seed, 9);
        assert_eq!(config.sample_rate, 16000);
    }

    #[test]
    fn json_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"f0_max": 350.0, "n_mels": 40}"#).unwrap();
        let config = PipelineConfig::from_file(&path).unwrap();
        assert_eq!(config.f0_max, 350.0);
        assert_eq!(config.n_mels, 40);
        assert_eq!(config.hop_s, 0.005);
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.conf");
        std::fs::write(&path, "frames_per_second=50\n").unwrap();
        assert!(matches!(
            PipelineConfig::from_file(&path),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn bundle_json_round_trip() {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[3] = 1.0;
        let bundle = AnalysisBundle {
            frame_count: 3,
            frame_s: 0.020,
            hop_s: 0.005,
            pitch_codes: vec![1, 2, 3],
            units: vec![9, 8, 7],
            speaker: SpeakerEmbedding::from_vector(v).unwrap(),
        };
        let back = AnalysisBundle::from_json(&bundle.to_json()).unwrap();
        assert_eq!(bundle, back);
    }

    #[test]
    fn bundle_rejects_length_mismatch() {
        let json = serde_json::json!({
            "format": "paravox-bundle",
            "version": 1,
            "frame_count": 2,
            "frame_s": 0.02,
            "hop_s": 0.005,
            "pitch_codes": [1],
            "units": [1, 2],
            "speaker": {
                "dim": 256,
                "broadcast": true,
                "byte_order": "little-endian",
                "data_b64": crate::persist::encode_f64s(&vec![0.0; EMBEDDING_DIM]),
            },
        });
        assert!(matches!(
            AnalysisBundle::from_json(&json.to_string()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
