//! Discrete linguistic units: per-frame spectral features quantized to a
//! K-centroid codebook trained with mini-batch k-means (k-means++ init,
//! per-centroid 1/count learning rates). When the batch covers the whole
//! dataset the update degenerates to exact Lloyd steps.
//!
//! Features are 13 MFCCs plus first-order deltas on the standard
//! 20 ms / 5 ms grid; externally computed features can be imported from
//! CSV as a drop-in replacement.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{frame_count, AudioBuffer};
use crate::error::{Error, Result};
use crate::fft::{hann, RealFft};
use crate::par;

/// MFCC coefficients kept per frame; the feature row is these plus deltas.
pub const MFCC_KEEP: usize = 13;
/// Mel bands feeding the DCT.
const MFCC_MEL_BANDS: usize = 40;
const LOG_FLOOR: f64 = 1e-10;

/// Row-major T x D feature matrix on the utterance frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrames {
    data: Vec<f64>,
    n_frames: usize,
    dim: usize,
}

impl FeatureFrames {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_frames = rows.len();
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_frames * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureFrames {
            data,
            n_frames,
            dim,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// CSV import: header line `n_frames,dim`, then one row per line.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let mut parts = header.split(',');
        let parse_count = |s: Option<&str>, line: usize| -> Result<usize> {
            s.and_then(|v| v.trim().parse().ok()).ok_or(Error::Parse {
                line,
                message: format!("bad header '{header}', expected 'n_frames,dim'"),
            })
        };
        let n_frames = parse_count(parts.next(), 1)?;
        let dim = parse_count(parts.next(), 1)?;
        let mut data = Vec::with_capacity(n_frames * dim);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad value '{field}'"),
                })?;
                data.push(v);
            }
        }
        if data.len() != n_frames * dim {
            return Err(Error::DimensionMismatch {
                expected: n_frames * dim,
                got: data.len(),
            });
        }
        Ok(FeatureFrames {
            data,
            n_frames,
            dim,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("{},{}\n", self.n_frames, self.dim);
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// MFCC + delta features on the 20 ms / 5 ms grid.
pub fn extract_features(buffer: &AudioBuffer) -> Result<FeatureFrames> {
    let rate = buffer.sample_rate();
    let frame_len = (0.020 * rate as f64).round() as usize;
    let hop = (0.005 * rate as f64).round() as usize;
    let x = buffer.samples();
    let n_frames = frame_count(x.len(), frame_len, hop).ok_or(Error::EmptySignal)?;

    let window = hann(frame_len);
    let fft = RealFft::new(frame_len);
    let fbank = crate::audio::mel_filterbank(MFCC_MEL_BANDS, frame_len, rate);

    let mfcc: Vec<Vec<f64>> = par::map_indexed(n_frames, |t| {
        let start = t * hop;
        let frame: Vec<f64> = x[start..start + frame_len]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        let mag = fft.magnitude(&frame);
        let log_mel: Vec<f64> = fbank
            .iter()
            .map(|taps| {
                let e: f64 = taps.iter().map(|&(bin, w)| w * mag[bin]).sum();
                (e + LOG_FLOOR).ln()
            })
            .collect();
        dct_ii(&log_mel, MFCC_KEEP)
    });

    // First-order deltas with clamped edges.
    let rows: Vec<Vec<f64>> = (0..n_frames)
        .map(|t| {
            let prev = &mfcc[t.saturating_sub(1)];
            let next = &mfcc[(t + 1).min(n_frames - 1)];
            let mut row = mfcc[t].clone();
            row.extend(prev.iter().zip(next).map(|(p, n)| (n - p) / 2.0));
            row
        })
        .collect();
    FeatureFrames::from_rows(rows)
}

/// Orthonormal DCT-II, keeping the first `keep` coefficients.
fn dct_ii(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..keep)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n).cos())
                .sum();
            scale * sum
        })
        .collect()
}

/// Trained centroids for unit assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCodebook {
    centroids: Vec<f64>,
    k: usize,
    dim: usize,
    seed: u64,
}

/// Integer unit per frame, in [0, K).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSequence {
    pub units: Vec<usize>,
}

impl UnitCodebook {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..self.k {
            let d = sq_dist(x, self.centroid(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = UnitCodebookFile {
            format: FORMAT_TAG.into(),
            version: 1,
            k: self.k,
            dim: self.dim,
            seed: self.seed,
            byte_order: "little-endian".into(),
            centroids_b64: crate::persist::encode_f64s(&self.centroids),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: UnitCodebookFile =
            serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != FORMAT_TAG || file.version != 1 {
            return Err(Error::ModelFormat(format!(
                "unknown container {}/{}",
                file.format, file.version
            )));
        }
        let centroids = crate::persist::decode_f64s(&file.centroids_b64)?;
        if centroids.len() != file.k * file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.k * file.dim,
                got: centroids.len(),
            });
        }
        Ok(UnitCodebook {
            centroids,
            k: file.k,
            dim: file.dim,
            seed: file.seed,
        })
    }
}

const FORMAT_TAG: &str = "paravox-units";

#[derive(Serialize, Deserialize)]
struct UnitCodebookFile {
    format: String,
    version: u32,
    k: usize,
    dim: usize,
    seed: u64,
    byte_order: String,
    centroids_b64: String,
}

/// Training outcome: the codebook plus the inertia recorded after each
/// iteration (full-data inertia in Lloyd mode, batch inertia otherwise).
#[derive(Debug, Clone)]
pub struct UnitsTraining {
    pub codebook: UnitCodebook,
    pub inertia_per_iter: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Train the unit codebook. `batch >= total frames` selects exact Lloyd
/// iterations, whose inertia is monotone non-increasing; smaller batches
/// use the incremental mini-batch update. Deterministic for a fixed seed.
pub fn train_units(
    features: &[FeatureFrames],
    k: usize,
    batch: usize,
    iters: usize,
    seed: u64,
) -> Result<UnitsTraining> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let dim = features.first().map_or(0, |f| f.dim());
    let data: Vec<&[f64]> = features.iter().flat_map(|f| f.rows()).collect();
    let n = data.len();
    if n < k {
        return Err(Error::InsufficientData { got: n, need: k });
    }
    for f in features {
        if f.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.dim(),
            });
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&data, k, dim, &mut rng);
    let mut inertia_log = Vec::with_capacity(iters);

    if batch >= n {
        // Exact Lloyd steps.
        let mut assign = vec![0usize; n];
        for _ in 0..iters {
            let stats = par::map_indexed(n, |i| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = sq_dist(data[i], &centroids[c * dim..(c + 1) * dim]);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                (best, best_d)
            });
            let mut inertia = 0.0;
            for (i, &(c, d)) in stats.iter().enumerate() {
                assign[i] = c;
                inertia += d;
            }
            inertia_log.push(inertia);

            let mut sums = vec![0.0f64; k * dim];
            let mut counts = vec![0usize; k];
            for (i, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(data[i]) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // farthest point from its centroid re-seeds the empty one
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            let da = sq_dist(data[a], &centroids[assign[a] * dim..(assign[a] + 1) * dim]);
                            let db = sq_dist(data[b], &centroids[assign[b] * dim..(assign[b] + 1) * dim]);
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap();
                    centroids[c * dim..(c + 1) * dim].copy_from_slice(data[far]);
                } else {
                    for (cd, s) in centroids[c * dim..(c + 1) * dim]
                        .iter_mut()
                        .zip(&sums[c * dim..(c + 1) * dim])
                    {
                        *cd = s / counts[c] as f64;
                    }
                }
            }
        }
    } else {
        let mut counts = vec![0u64; k];
        let mut indices: Vec<usize> = (0..n).collect();
        for _ in 0..iters {
            indices.shuffle(&mut rng);
            let batch_idx = &indices[..batch];
            let mut batch_inertia = 0.0;
            let mut seen = vec![false; k];
            let mut farthest = (0usize, f64::MIN);
            for &i in batch_idx {
                let x = data[i];
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                batch_inertia += best_d;
                if best_d > farthest.1 {
                    farthest = (i, best_d);
                }
                seen[best] = true;
                counts[best] += 1;
                let lr = 1.0 / counts[best] as f64;
                for (cd, &v) in centroids[best * dim..(best + 1) * dim].iter_mut().zip(x) {
                    *cd += lr * (v - *cd);
                }
            }
            inertia_log.push(batch_inertia);
            // centroids never assigned anything so far restart on the
            // farthest batch point
            for c in 0..k {
                if counts[c] == 0 && !seen[c] {
                    centroids[c * dim..(c + 1) * dim].copy_from_slice(data[farthest.0]);
                }
            }
        }
    }

    Ok(UnitsTraining {
        codebook: UnitCodebook {
            centroids,
            k,
            dim,
            seed,
        },
        inertia_per_iter: inertia_log,
    })
}

fn kmeans_pp_init(data: &[&[f64]], k: usize, dim: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let n = data.len();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(data[first]);
    let mut dists: Vec<f64> = data.iter().map(|x| sq_dist(x, data[first])).collect();
    for _ in 1..k {
        let total: f64 = dists.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut threshold = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                threshold -= d;
                if threshold <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let start = centroids.len();
        centroids.extend_from_slice(data[pick]);
        let new_c = centroids[start..].to_vec();
        for (d, x) in dists.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &new_c));
        }
    }
    centroids
}

/// Nearest-centroid assignment; ties resolve to the lowest index.
pub fn assign_units(codebook: &UnitCodebook, features: &FeatureFrames) -> Result<UnitSequence> {
    if features.dim() != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            got: features.dim(),
        });
    }
    let units = par::map_indexed(features.n_frames(), |t| codebook.nearest(features.row(t)));
    Ok(UnitSequence { units })
}

/// Sum of squared distances of every row to its nearest centroid.
pub fn inertia(codebook: &UnitCodebook, features: &[FeatureFrames]) -> f64 {
    features
        .iter()
        .flat_map(|f| f.rows())
        .map(|x| sq_dist(x, codebook.centroid(codebook.nearest(x))))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_signal, SynthKind};

    #[test]
    fn silence_has_constant_c0_and_zero_deltas() {
        let buf = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let f = extract_features(&buf).unwrap();
        assert_eq!(f.dim(), 2 * MFCC_KEEP);
        let c0 = f.row(0)[0];
        for row in f.rows() {
            assert!((row[0] - c0).abs() < 1e-12);
            for &d in &row[MFCC_KEEP..] {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn one_second_gives_197_rows() {
        let buf = synth_signal(SynthKind::Sine, 200.0, 200.0, 1.0, 16000).unwrap();
        let f = extract_features(&buf).unwrap();
        assert_eq!(f.n_frames(), 197);
    }

    #[test]
    fn features_deterministic() {
        let buf = synth_signal(SynthKind::Sawtooth, 170.0, 170.0, 0.5, 16000).unwrap();
        let a = extract_features(&buf).unwrap();
        let b = extract_features(&buf).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_frames_is_insufficient_data() {
        let rows = vec![vec![0.0, 0.0]; 5];
        let f = FeatureFrames::from_rows(rows).unwrap();
        assert!(matches!(
            train_units(&[f], 10, 1000, 5, 1),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn assignment_exact_for_centroid_rows() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, -(i as f64)]).collect();
        let f = FeatureFrames::from_rows(rows.clone()).unwrap();
        let trained = train_units(&[f], 4, 1_000, 20, 3).unwrap();
        let probe =
            FeatureFrames::from_rows(vec![trained.codebook.centroid(2).to_vec()]).unwrap();
        let units = assign_units(&trained.codebook, &probe).unwrap();
        assert_eq!(units.units, vec![2]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let f = FeatureFrames::from_rows(vec![vec![0.0, 1.0]; 8]).unwrap();
        let trained = train_units(&[f], 2, 100, 5, 1).unwrap();
        let probe = FeatureFrames::from_rows(vec![vec![0.0, 1.0, 2.0]]).unwrap();
        assert!(matches!(
            assign_units(&trained.codebook, &probe),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![(i % 17) as f64 * 0.3, (i % 5) as f64])
            .collect();
        let f = FeatureFrames::from_rows(rows).unwrap();
        let a = train_units(std::slice::from_ref(&f), 8, 32, 30, 99).unwrap();
        let b = train_units(std::slice::from_ref(&f), 8, 32, 30, 99).unwrap();
        assert_eq!(a.codebook, b.codebook);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let f = FeatureFrames::from_rows(vec![vec![1.25, -0.5], vec![0.0, 3.0]]).unwrap();
        f.write_csv(&path).unwrap();
        let back = FeatureFrames::read_csv(&path).unwrap();
        assert_eq!(f, back);
    }
}
