//! Objective evaluation: word error rate against reference transcripts,
//! speaker similarity as the cosine of deterministic spectral-statistics
//! embeddings, mel-spectrogram L1 distance, and the manifest-driven batch
//! report that aggregates them per control setting.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{mel_spectrogram, read_wav, AudioBuffer, MelConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::pitch::{track_pitch, TrackerConfig};
use crate::units::{extract_features, MFCC_KEEP};

/// Fixed embedding width; the statistics vector is zero-padded up to it.
pub const EMBEDDING_DIM: usize = 256;
const MIN_EMBED_SECONDS: f64 = 0.5;
const LOG_FLOOR: f64 = 1e-10;

/// Unit-norm 256-d speaker vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn from_vector(mut vector: Vec<f64>) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::DimensionMismatch {
                expected: EMBEDDING_DIM,
                got: vector.len(),
            });
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        Ok(SpeakerEmbedding { vector })
    }
}

/// Deterministic spectral-statistics embedding: long-term average log-mel
/// spectrum and its per-band variance, MFCC means and variances, and
/// voiced-pitch median/IQR, padded to 256 dims and L2-normalized.
pub fn speaker_embedding(buffer: &AudioBuffer) -> Result<SpeakerEmbedding> {
    if buffer.duration_s() < MIN_EMBED_SECONDS {
        return Err(Error::TooShort {
            min_s: MIN_EMBED_SECONDS,
            got_s: buffer.duration_s(),
        });
    }
    let mel_cfg = MelConfig::default();
    let mel = mel_spectrogram(buffer, &mel_cfg)?;
    let n_frames = mel.n_frames() as f64;
    let mut features = Vec::with_capacity(EMBEDDING_DIM);

    // per-band mean and variance of the log-mel spectrum
    let mut means = vec![0.0f64; mel_cfg.n_mels];
    for row in mel.frames() {
        for (m, &v) in means.iter_mut().zip(row) {
            *m += (v + LOG_FLOOR).ln();
        }
    }
    for m in &mut means {
        *m /= n_frames;
    }
    let mut vars = vec![0.0f64; mel_cfg.n_mels];
    for row in mel.frames() {
        for ((s, &v), &m) in vars.iter_mut().zip(row).zip(&means) {
            let d = (v + LOG_FLOOR).ln() - m;
            *s += d * d;
        }
    }
    for s in &mut vars {
        *s /= n_frames;
    }
    features.extend_from_slice(&means);
    features.extend_from_slice(&vars);

    // MFCC means and variances (static coefficients only)
    let mfcc = extract_features(buffer)?;
    let t = mfcc.n_frames() as f64;
    let mut c_mean = vec![0.0f64; MFCC_KEEP];
    for row in mfcc.rows() {
        for (m, &v) in c_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut c_mean {
        *m /= t;
    }
    let mut c_var = vec![0.0f64; MFCC_KEEP];
    for row in mfcc.rows() {
        for ((s, &v), &m) in c_var.iter_mut().zip(row).zip(&c_mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut c_var {
        *s /= t;
    }
    features.extend_from_slice(&c_mean);
    features.extend_from_slice(&c_var);

    // voiced-pitch median and interquartile range
    let track = track_pitch(buffer, &TrackerConfig::default())?;
    let mut voiced: Vec<f64> = track.voiced_f0().collect();
    if voiced.is_empty() {
        features.extend_from_slice(&[0.0, 0.0]);
    } else {
        voiced.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| voiced[((voiced.len() - 1) as f64 * p).round() as usize];
        features.push(q(0.5));
        features.push(q(0.75) - q(0.25));
    }

    features.resize(EMBEDDING_DIM, 0.0);
    SpeakerEmbedding::from_vector(features)
}

/// Cosine of two unit embeddings on the 0..1 scale used for reporting:
/// negative cosines clamp to zero.
pub fn cosine_similarity(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> f64 {
    raw_cosine(a, b).clamp(0.0, 1.0)
}

/// Unclamped cosine, kept for analysis output.
pub fn raw_cosine(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> f64 {
    a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Word error rate
// ---------------------------------------------------------------------------

/// Case-folded, punctuation-stripped whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphanumeric() || c == '\'' {
            for lc in c.to_lowercase() {
                cleaned.push(lc);
            }
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Alignment counts from the minimal edit script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl WerBreakdown {
    pub fn wer(&self) -> f64 {
        (self.substitutions + self.deletions + self.insertions) as f64 / self.ref_len as f64
    }

    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment with unit costs. Among minimal alignments the
/// backtrace prefers substitutions over insert+delete pairs, then
/// deletions, then insertions, which pins a single deterministic script.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let n = reference.len();
    let m = hypothesis.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1]
                + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            let del = dp[i - 1][j] + 1;
            let ins = dp[i][j - 1] + 1;
            dp[i][j] = sub.min(del).min(ins);
        }
    }

    let (mut i, mut j) = (n, m);
    let mut breakdown = WerBreakdown {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        ref_len: n,
    };
    while i > 0 || j > 0 {
        let here = dp[i][j];
        if i > 0 && j > 0 {
            let matched = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if here == dp[i - 1][j - 1] + usize::from(!matched) {
                if !matched {
                    breakdown.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[i - 1][j] + 1 {
            breakdown.deletions += 1;
            i -= 1;
        } else {
            breakdown.insertions += 1;
            j -= 1;
        }
    }
    Ok(breakdown)
}

// ---------------------------------------------------------------------------
// Mel distance
// ---------------------------------------------------------------------------

/// Mean absolute mel-spectrogram difference; the shorter spectrogram is
/// zero-padded to the longer's frame count.
pub fn mel_l1(x: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    if x.sample_rate() != y.sample_rate() {
        return Err(Error::RateMismatch {
            a: x.sample_rate(),
            b: y.sample_rate(),
        });
    }
    let cfg = MelConfig::default();
    let mx = mel_spectrogram(x, &cfg)?;
    let my = mel_spectrogram(y, &cfg)?;
    let frames = mx.n_frames().max(my.n_frames());
    let zeros = vec![0.0f64; cfg.n_mels];
    let mut acc = 0.0;
    for t in 0..frames {
        let rx = if t < mx.n_frames() { mx.frame(t) } else { &zeros };
        let ry = if t < my.n_frames() { my.frame(t) } else { &zeros };
        for (a, b) in rx.iter().zip(ry) {
            acc += (a - b).abs();
        }
    }
    Ok(acc / (frames * cfg.n_mels) as f64)
}

// ---------------------------------------------------------------------------
// Manifest-driven evaluation
// ---------------------------------------------------------------------------

/// The four control settings a conversion can be tagged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlSetting {
    NoControl,
    PitchOnly,
    SpeedOnly,
    PitchSpeed,
}

impl ControlSetting {
    pub const ALL: [ControlSetting; 4] = [
        ControlSetting::NoControl,
        ControlSetting::PitchOnly,
        ControlSetting::SpeedOnly,
        ControlSetting::PitchSpeed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControlSetting::NoControl => "no-control",
            ControlSetting::PitchOnly => "pitch-only",
            ControlSetting::SpeedOnly => "speed-only",
            ControlSetting::PitchSpeed => "pitch+speed",
        }
    }
}

impl fmt::Display for ControlSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControlSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-control" => Ok(ControlSetting::NoControl),
            "pitch-only" => Ok(ControlSetting::PitchOnly),
            "speed-only" => Ok(ControlSetting::SpeedOnly),
            "pitch+speed" => Ok(ControlSetting::PitchSpeed),
            other => Err(Error::Manifest(format!(
                "unknown setting '{other}' (expected no-control, pitch-only, speed-only or pitch+speed)"
            ))),
        }
    }
}

/// One conversion to score.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub converted: PathBuf,
    pub target: PathBuf,
    pub ref_transcript: PathBuf,
    pub hyp_transcript: PathBuf,
    pub setting: ControlSetting,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalManifest {
    pub rows: Vec<ManifestRow>,
}

const MANIFEST_COLUMNS: [&str; 5] = [
    "converted",
    "target",
    "ref_transcript",
    "hyp_transcript",
    "setting",
];

impl EvalManifest {
    /// Parse the manifest CSV, validating the header columns.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<EvalManifest> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Manifest(e.to_string()))?
            .clone();
        let mut column_of = Vec::with_capacity(MANIFEST_COLUMNS.len());
        for want in MANIFEST_COLUMNS {
            let idx = headers
                .iter()
                .position(|h| h.trim() == want)
                .ok_or_else(|| Error::Manifest(format!("missing column '{want}'")))?;
            column_of.push(idx);
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Manifest(format!("row {}: {e}", line + 2)))?;
            let field = |ci: usize| -> Result<&str> {
                record.get(column_of[ci]).ok_or_else(|| {
                    Error::Manifest(format!(
                        "row {}: missing field '{}'",
                        line + 2,
                        MANIFEST_COLUMNS[ci]
                    ))
                })
            };
            rows.push(ManifestRow {
                converted: PathBuf::from(field(0)?),
                target: PathBuf::from(field(1)?),
                ref_transcript: PathBuf::from(field(2)?),
                hyp_transcript: PathBuf::from(field(3)?),
                setting: field(4)?.trim().parse()?,
            });
        }
        Ok(EvalManifest { rows })
    }
}

/// Scores for one manifest row, or the error that kept it from scoring.
#[derive(Debug, Clone, Serialize)]
pub struct RowOutcome {
    pub index: usize,
    pub converted: String,
    pub setting: ControlSetting,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_cosine: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wer_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<WerBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mean scores for one control setting.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub setting: ControlSetting,
    pub count: usize,
    pub errors: usize,
    pub mean_similarity: Option<f64>,
    pub mean_wer_percent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rows: Vec<RowOutcome>,
    pub aggregates: Vec<Aggregate>,
}

impl EvalReport {
    /// Per-row CSV with WER as a percentage, two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "index,converted,setting,similarity,raw_cosine,wer_percent,substitutions,deletions,insertions,ref_len,error\n",
        );
        for row in &self.rows {
            let bd = row.breakdown;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                row.index,
                row.converted,
                row.setting,
                row.similarity.map_or(String::new(), |v| format!("{v:.4}")),
                row.raw_cosine.map_or(String::new(), |v| format!("{v:.4}")),
                row.wer_percent.map_or(String::new(), |v| format!("{v:.2}")),
                bd.map_or(String::new(), |b| b.substitutions.to_string()),
                bd.map_or(String::new(), |b| b.deletions.to_string()),
                bd.map_or(String::new(), |b| b.insertions.to_string()),
                bd.map_or(String::new(), |b| b.ref_len.to_string()),
                row.error.clone().unwrap_or_default(),
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Score every manifest row; per-row failures become error records rather
/// than aborting the run. Rows keep manifest order, aggregates group by
/// setting.
pub fn eval_run(manifest: &EvalManifest) -> EvalReport {
    let rows: Vec<RowOutcome> = par::map_indexed(manifest.rows.len(), |i| {
        let row = &manifest.rows[i];
        match score_row(row) {
            Ok((sim, raw, breakdown)) => RowOutcome {
                index: i,
                converted: row.converted.display().to_string(),
                setting: row.setting,
                similarity: Some(sim),
                raw_cosine: Some(raw),
                wer_percent: Some(breakdown.wer() * 100.0),
                breakdown: Some(breakdown),
                error: None,
            },
            Err(e) => RowOutcome {
                index: i,
                converted: row.converted.display().to_string(),
                setting: row.setting,
                similarity: None,
                raw_cosine: None,
                wer_percent: None,
                breakdown: None,
                error: Some(e.to_string()),
            },
        }
    });

    let aggregates = ControlSetting::ALL
        .iter()
        .filter_map(|&setting| {
            let group: Vec<&RowOutcome> = rows.iter().filter(|r| r.setting == setting).collect();
            if group.is_empty() {
                return None;
            }
            let scored: Vec<&&RowOutcome> =
                group.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&RowOutcome) -> Option<f64>| -> Option<f64> {
                if scored.is_empty() {
                    None
                } else {
                    Some(scored.iter().filter_map(|r| f(r)).sum::<f64>() / scored.len() as f64)
                }
            };
            Some(Aggregate {
                setting,
                count: group.len(),
                errors: group.len() - scored.len(),
                mean_similarity: mean(|r| r.similarity),
                mean_wer_percent: mean(|r| r.wer_percent),
            })
        })
        .collect();

    EvalReport { rows, aggregates }
}

fn score_row(row: &ManifestRow) -> Result<(f64, f64, WerBreakdown)> {
    let converted = read_wav(&row.converted)?;
    let target = read_wav(&row.target)?;
    let emb_c = speaker_embedding(&converted)?;
    let emb_t = speaker_embedding(&target)?;
    let sim = cosine_similarity(&emb_c, &emb_t);
    let raw = raw_cosine(&emb_c, &emb_t);

    let read_text = |p: &Path| -> Result<String> {
        std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
    };
    let reference = tokenize(&read_text(&row.ref_transcript)?);
    let hypothesis = tokenize(&read_text(&row.hyp_transcript)?);
    let breakdown = wer(&reference, &hypothesis)?;
    Ok((sim, raw, breakdown))
}
