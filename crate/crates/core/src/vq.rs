//! Discrete pitch codec. A context-window MLP encodes each frame of the
//! normalized log-F0 contour into a 128-d latent, the latent snaps to its
//! nearest codebook row, and a symmetric decoder maps the code vector back
//! to the center frame's value. Training minimizes reconstruction MSE on
//! voiced frames with a commitment term and straight-through gradients;
//! the codebook itself follows an exponential moving average of assigned
//! latents, with dead codes re-seeded from recent ones.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pitch::PitchTrack;

/// Architecture constants; all overridable, defaults desk-scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqDims {
    /// Frames of context on each side of the center frame.
    pub context: usize,
    /// Width of the two hidden layers in encoder and decoder.
    pub hidden: usize,
    /// Latent (and codebook row) dimensionality.
    pub latent: usize,
    /// Number of codebook rows.
    pub codebook: usize,
    /// Commitment-loss weight (beta).
    pub commitment: f64,
}

impl Default for VqDims {
    fn default() -> Self {
        VqDims {
            context: 4,
            hidden: 256,
            latent: 128,
            codebook: 64,
            commitment: 0.25,
        }
    }
}

impl VqDims {
    fn input_dim(&self) -> usize {
        2 * (2 * self.context + 1)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        VqTrainConfig {
            epochs: 12,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

const EMA_DECAY: f64 = 0.99;
const EMA_EPS: f64 = 1e-5;

/// Per-utterance z-score statistics of voiced log2-F0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchStats {
    pub mean: f64,
    pub std: f64,
}

/// Normalized contour: voiced frames hold `(log2 f0 - mean)/std`, unvoiced
/// frames a zero sentinel with the voicing bit cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPitch {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
    pub stats: PitchStats,
}

/// Z-score the voiced log2-F0 per utterance; a constant contour (zero
/// variance) falls back to std = 1.
pub fn normalize_pitch(track: &PitchTrack) -> NormalizedPitch {
    let voiced: Vec<bool> = track.voiced().to_vec();
    let logs: Vec<f64> = track.voiced_f0().map(|f| f.log2()).collect();
    let (mean, std) = if logs.is_empty() {
        (0.0, 1.0)
    } else {
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / logs.len() as f64;
        let std = var.sqrt();
        (mean, if std > 1e-9 { std } else { 1.0 })
    };
    let values = track
        .f0()
        .iter()
        .zip(&voiced)
        .map(|(&f, &v)| if v { (f.log2() - mean) / std } else { 0.0 })
        .collect();
    NormalizedPitch {
        values,
        voiced,
        stats: PitchStats { mean, std },
    }
}

/// Integer code per frame, each in [0, codebook size).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitchCodeSequence {
    pub codes: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Dense layers with hand-rolled backprop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    w: Vec<f64>, // row-major out_dim x in_dim
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Linear {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Linear {
            w,
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn forward(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(batch * self.out_dim, 0.0);
        for bi in 0..batch {
            let xi = &x[bi * self.in_dim..(bi + 1) * self.in_dim];
            let yo = &mut out[bi * self.out_dim..(bi + 1) * self.out_dim];
            for (o, y) in yo.iter_mut().enumerate() {
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for (wv, xv) in row.iter().zip(xi) {
                    acc += wv * xv;
                }
                *y = acc;
            }
        }
    }
}

/// Two tanh hidden layers and a linear head.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<Linear>,
}

struct MlpTape {
    /// activations[0] is the input; activations[i] the output of layer i-1
    /// (post-tanh except for the last layer).
    activations: Vec<Vec<f64>>,
    batch: usize,
}

#[derive(Debug, Clone)]
struct MlpGrads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Mlp {
    fn new(dims: &[usize], rng: &mut ChaCha20Rng) -> Mlp {
        let layers = dims
            .windows(2)
            .map(|d| Linear::init(d[0], d[1], rng))
            .collect();
        Mlp { layers }
    }

    fn forward(&self, x: Vec<f64>, batch: usize) -> MlpTape {
        let mut activations = vec![x];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(activations.last().expect("input"), batch, &mut z);
            if li < last {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        MlpTape { activations, batch }
    }

    fn output<'t>(&self, tape: &'t MlpTape) -> &'t [f64] {
        tape.activations.last().expect("output")
    }

    /// Backpropagate `grad_out` (batch x out_dim) through the tape.
    /// Returns parameter gradients and the gradient w.r.t. the input.
    fn backward(&self, tape: &MlpTape, grad_out: Vec<f64>) -> (MlpGrads, Vec<f64>) {
        let batch = tape.batch;
        let mut grads = MlpGrads {
            w: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.w.len()])
                .collect(),
            b: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.b.len()])
                .collect(),
        };
        let mut delta = grad_out;
        let last = self.layers.len() - 1;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            // tanh derivative on every activation but the final head's
            if li < last {
                let act = &tape.activations[li + 1];
                for (d, a) in delta.iter_mut().zip(act) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &tape.activations[li];
            let (gw, gb) = (&mut grads.w[li], &mut grads.b[li]);
            let mut grad_in = vec![0.0; batch * layer.in_dim];
            for bi in 0..batch {
                let din = &delta[bi * layer.out_dim..(bi + 1) * layer.out_dim];
                let xin = &input[bi * layer.in_dim..(bi + 1) * layer.in_dim];
                let gin = &mut grad_in[bi * layer.in_dim..(bi + 1) * layer.in_dim];
                for (o, &dv) in din.iter().enumerate() {
                    gb[o] += dv;
                    let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let gwrow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for i in 0..layer.in_dim {
                        gwrow[i] += dv * xin[i];
                        gin[i] += wrow[i] * dv;
                    }
                }
            }
            delta = grad_in;
        }
        (grads, delta)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            *p -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct VqPitchModel {
    dims: VqDims,
    encoder: Mlp,
    decoder: Mlp,
    codebook: Vec<f64>, // row-major codebook x latent
    seed: u64,
    trained: bool,
}

impl VqPitchModel {
    /// Fresh random-initialized model; usable for gradient checking but
    /// not for encode/decode until trained.
    pub fn untrained(dims: VqDims, seed: u64) -> VqPitchModel {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let input = dims.input_dim();
        let encoder = Mlp::new(&[input, dims.hidden, dims.hidden, dims.latent], &mut rng);
        let decoder = Mlp::new(&[dims.latent, dims.hidden, dims.hidden, 1], &mut rng);
        let codebook = (0..dims.codebook * dims.latent)
            .map(|_| rng.gen_range(-0.05..0.05))
            .collect();
        VqPitchModel {
            dims,
            encoder,
            decoder,
            codebook,
            seed,
            trained: false,
        }
    }

    pub fn dims(&self) -> &VqDims {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn codebook_row(&self, c: usize) -> &[f64] {
        &self.codebook[c * self.dims.latent..(c + 1) * self.dims.latent]
    }

    fn nearest_code(&self, h: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..self.dims.codebook {
            let row = self.codebook_row(c);
            let d: f64 = h.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.encoder.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for l in &mut self.decoder.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tensors = BTreeMap::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            tensors.insert(format!("enc.{i}.w"), crate::persist::encode_f64s(&l.w));
            tensors.insert(format!("enc.{i}.b"), crate::persist::encode_f64s(&l.b));
        }
        for (i, l) in self.decoder.layers.iter().enumerate() {
            tensors.insert(format!("dec.{i}.w"), crate::persist::encode_f64s(&l.w));
            tensors.insert(format!("dec.{i}.b"), crate::persist::encode_f64s(&l.b));
        }
        tensors.insert("codebook".into(), crate::persist::encode_f64s(&self.codebook));
        let file = VqModelFile {
            format: FORMAT_TAG.into(),
            version: 1,
            context: self.dims.context,
            hidden: self.dims.hidden,
            latent: self.dims.latent,
            codebook_size: self.dims.codebook,
            commitment: self.dims.commitment,
            seed: self.seed,
            trained: self.trained,
            byte_order: "little-endian".into(),
            tensors,
        };
        let json = serde_json::to_string(&file).map_err(|e| Error::ModelFormat(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<VqPitchModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VqModelFile =
            serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != FORMAT_TAG || file.version != 1 {
            return Err(Error::ModelFormat(format!(
                "unknown container {}/{}",
                file.format, file.version
            )));
        }
        let dims = VqDims {
            context: file.context,
            hidden: file.hidden,
            latent: file.latent,
            codebook: file.codebook_size,
            commitment: file.commitment,
        };
        let mut model = VqPitchModel::untrained(dims, file.seed);
        let fetch = |name: String, expected: usize| -> Result<Vec<f64>> {
            let b64 = file
                .tensors
                .get(&name)
                .ok_or_else(|| Error::ModelFormat(format!("missing tensor {name}")))?;
            let values = crate::persist::decode_f64s(b64)?;
            if values.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: values.len(),
                });
            }
            Ok(values)
        };
        for (i, l) in model.encoder.layers.iter_mut().enumerate() {
            l.w = fetch(format!("enc.{i}.w"), l.w.len())?;
            l.b = fetch(format!("enc.{i}.b"), l.b.len())?;
        }
        for (i, l) in model.decoder.layers.iter_mut().enumerate() {
            l.w = fetch(format!("dec.{i}.w"), l.w.len())?;
            l.b = fetch(format!("dec.{i}.b"), l.b.len())?;
        }
        model.codebook = fetch("codebook".into(), dims.codebook * dims.latent)?;
        model.trained = file.trained;
        Ok(model)
    }
}

const FORMAT_TAG: &str = "paravox-vq";

#[derive(Serialize, Deserialize)]
struct VqModelFile {
    format: String,
    version: u32,
    context: usize,
    hidden: usize,
    latent: usize,
    codebook_size: usize,
    commitment: f64,
    seed: u64,
    trained: bool,
    byte_order: String,
    tensors: BTreeMap<String, String>,
}

// ---------------------------------------------------------------------------
// Window extraction
// ---------------------------------------------------------------------------

/// Per-frame context windows: (2W+1) frames of (value, voicing bit),
/// zero-padded outside the utterance.
fn windows_of(norm: &NormalizedPitch, context: usize) -> Vec<Vec<f64>> {
    let t_count = norm.values.len();
    (0..t_count)
        .map(|t| {
            let mut w = Vec::with_capacity(2 * (2 * context + 1));
            for off in -(context as isize)..=(context as isize) {
                let idx = t as isize + off;
                if idx < 0 || idx >= t_count as isize {
                    w.push(0.0);
                    w.push(0.0);
                } else {
                    let idx = idx as usize;
                    w.push(norm.values[idx]);
                    w.push(if norm.voiced[idx] { 1.0 } else { 0.0 });
                }
            }
            w
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Encode / decode
// ---------------------------------------------------------------------------

/// Encode a contour to codebook indices; exactly one code per frame.
pub fn encode(model: &VqPitchModel, track: &PitchTrack) -> Result<PitchCodeSequence> {
    if !model.trained {
        return Err(Error::ModelUntrained);
    }
    let norm = normalize_pitch(track);
    let windows = windows_of(&norm, model.dims.context);
    let mut codes = Vec::with_capacity(windows.len());
    for w in &windows {
        let tape = model.encoder.forward(w.clone(), 1);
        codes.push(model.nearest_code(model.encoder.output(&tape)));
    }
    Ok(PitchCodeSequence { codes })
}

/// Decode codes back to an F0 contour on the standard 20 ms / 5 ms grid.
/// Unvoiced frames are forced to zero regardless of their code.
pub fn decode(
    model: &VqPitchModel,
    codes: &PitchCodeSequence,
    voiced: &[bool],
    stats: PitchStats,
) -> Result<PitchTrack> {
    if !model.trained {
        return Err(Error::ModelUntrained);
    }
    if codes.codes.len() != voiced.len() {
        return Err(Error::DimensionMismatch {
            expected: voiced.len(),
            got: codes.codes.len(),
        });
    }
    let mut f0 = Vec::with_capacity(codes.codes.len());
    for (&code, &v) in codes.codes.iter().zip(voiced) {
        if code >= model.dims.codebook {
            return Err(Error::IndexOutOfRange {
                index: code,
                size: model.dims.codebook,
            });
        }
        if !v {
            f0.push(0.0);
            continue;
        }
        let tape = model
            .decoder
            .forward(model.codebook_row(code).to_vec(), 1);
        let z = model.decoder.output(&tape)[0];
        f0.push((z * stats.std + stats.mean).exp2());
    }
    Ok(PitchTrack::from_parts(f0, voiced.to_vec(), 0.020, 0.005))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Trained model plus per-epoch reconstruction MSE.
#[derive(Debug, Clone)]
pub struct VqTraining {
    pub model: VqPitchModel,
    pub mse_per_epoch: Vec<f64>,
}

/// Train on unmodified contours. Deterministic: a fixed seed reproduces
/// the final parameters bit for bit.
pub fn train(
    dataset: &[PitchTrack],
    dims: VqDims,
    cfg: &VqTrainConfig,
) -> Result<VqTraining> {
    // Gather (window, target) pairs with voiced centers.
    let mut windows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for track in dataset {
        let norm = normalize_pitch(track);
        for (t, w) in windows_of(&norm, dims.context).into_iter().enumerate() {
            if norm.voiced[t] {
                windows.push(w);
                targets.push(norm.values[t]);
            }
        }
    }
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut model = VqPitchModel::untrained(dims, cfg.seed);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    // Seed the codebook from initial-encoder latents of spread-out samples.
    let stride = (windows.len() / dims.codebook).max(1);
    for c in 0..dims.codebook {
        let w = &windows[(c * stride) % windows.len()];
        let tape = model.encoder.forward(w.clone(), 1);
        let h = model.encoder.output(&tape).to_vec();
        for (dst, &v) in model.codebook[c * dims.latent..(c + 1) * dims.latent]
            .iter_mut()
            .zip(&h)
        {
            *dst = v + rng.gen_range(-1e-3..1e-3);
        }
    }

    let n_tensors = model.tensors_mut().len();
    let mut adams: Vec<Adam> = {
        let sizes: Vec<usize> = model.tensors_mut().iter().map(|t| t.len()).collect();
        sizes.into_iter().map(Adam::new).collect()
    };
    debug_assert_eq!(adams.len(), n_tensors);

    let mut ema_size = vec![1.0f64; dims.codebook];
    let mut ema_sum: Vec<f64> = model.codebook.clone();

    let mut indices: Vec<usize> = (0..windows.len()).collect();
    let mut mse_per_epoch = Vec::with_capacity(cfg.epochs);
    let batch_size = cfg.batch_size.max(1);

    for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_sq_err = 0.0;
        let mut epoch_count = 0usize;
        let mut assigned = vec![false; dims.codebook];
        let mut recent_latents: Vec<f64> = Vec::new();
        let mut recent_count = 0usize;

        for chunk in indices.chunks(batch_size) {
            let b = chunk.len();
            let input_dim = dims.input_dim();
            let mut x = Vec::with_capacity(b * input_dim);
            for &i in chunk {
                x.extend_from_slice(&windows[i]);
            }

            // encoder forward
            let enc_tape = model.encoder.forward(x, b);
            let h = model.encoder.output(&enc_tape).to_vec();

            // quantize
            let mut codes = Vec::with_capacity(b);
            let mut e = Vec::with_capacity(b * dims.latent);
            for bi in 0..b {
                let hb = &h[bi * dims.latent..(bi + 1) * dims.latent];
                let c = model.nearest_code(hb);
                codes.push(c);
                assigned[c] = true;
                e.extend_from_slice(model.codebook_row(c));
            }

            // decoder forward on quantized latents
            let dec_tape = model.decoder.forward(e.clone(), b);
            let pred = model.decoder.output(&dec_tape).to_vec();

            // reconstruction loss and its gradient
            let mut grad_pred = Vec::with_capacity(b);
            for (bi, &i) in chunk.iter().enumerate() {
                let err = pred[bi] - targets[i];
                epoch_sq_err += err * err;
                grad_pred.push(2.0 * err / b as f64);
            }
            epoch_count += b;

            let (dec_grads, grad_e) = model.decoder.backward(&dec_tape, grad_pred);

            // straight-through + commitment gradient into the encoder
            let mut grad_h = grad_e;
            let beta = dims.commitment;
            for ((gh, &hv), &ev) in grad_h.iter_mut().zip(&h).zip(&e) {
                *gh += 2.0 * beta * (hv - ev) / b as f64;
            }
            let (enc_grads, _) = model.encoder.backward(&enc_tape, grad_h);

            // Adam updates
            {
                let mut tensors = model.tensors_mut();
                let mut grads: Vec<&Vec<f64>> = Vec::with_capacity(tensors.len());
                for (gw, gb) in enc_grads.w.iter().zip(&enc_grads.b) {
                    grads.push(gw);
                    grads.push(gb);
                }
                for (gw, gb) in dec_grads.w.iter().zip(&dec_grads.b) {
                    grads.push(gw);
                    grads.push(gb);
                }
                for ((tensor, grad), adam) in
                    tensors.iter_mut().zip(grads).zip(adams.iter_mut())
                {
                    adam.step(tensor, grad, cfg.learning_rate);
                }
            }

            // EMA codebook update from this batch's assignments
            let mut batch_count = vec![0.0f64; dims.codebook];
            let mut batch_sum = vec![0.0f64; dims.codebook * dims.latent];
            for (bi, &c) in codes.iter().enumerate() {
                batch_count[c] += 1.0;
                let hb = &h[bi * dims.latent..(bi + 1) * dims.latent];
                for (s, &v) in batch_sum[c * dims.latent..(c + 1) * dims.latent]
                    .iter_mut()
                    .zip(hb)
                {
                    *s += v;
                }
            }
            for c in 0..dims.codebook {
                ema_size[c] = EMA_DECAY * ema_size[c] + (1.0 - EMA_DECAY) * batch_count[c];
                for i in 0..dims.latent {
                    let idx = c * dims.latent + i;
                    ema_sum[idx] = EMA_DECAY * ema_sum[idx] + (1.0 - EMA_DECAY) * batch_sum[idx];
                    model.codebook[idx] = ema_sum[idx] / ema_size[c].max(EMA_EPS);
                }
            }

            recent_latents = h;
            recent_count = b;
        }

        // Re-seed codes that went a full epoch unassigned.
        if recent_count > 0 {
            for c in 0..dims.codebook {
                if !assigned[c] {
                    let pick = rng.gen_range(0..recent_count);
                    let src = &recent_latents[pick * dims.latent..(pick + 1) * dims.latent];
                    model.codebook[c * dims.latent..(c + 1) * dims.latent]
                        .copy_from_slice(src);
                    ema_size[c] = 1.0;
                    ema_sum[c * dims.latent..(c + 1) * dims.latent].copy_from_slice(src);
                }
            }
        }

        mse_per_epoch.push(epoch_sq_err / epoch_count as f64);
    }

    model.trained = true;
    Ok(VqTraining {
        model,
        mse_per_epoch,
    })
}

/// Mean squared reconstruction error over the voiced frames of `tracks`,
/// in the normalized domain (encode, decode, compare).
pub fn reconstruction_mse(model: &VqPitchModel, tracks: &[PitchTrack]) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for track in tracks {
        let norm = normalize_pitch(track);
        let codes = encode(model, track)?;
        for (t, &code) in codes.codes.iter().enumerate() {
            if !norm.voiced[t] {
                continue;
            }
            let tape = model
                .decoder
                .forward(model.codebook_row(code).to_vec(), 1);
            let z = model.decoder.output(&tape)[0];
            let err = z - norm.values[t];
            acc += err * err;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(acc / count as f64)
}

/// Fraction of codebook rows actually used when encoding `tracks`.
pub fn utilization(model: &VqPitchModel, tracks: &[PitchTrack]) -> Result<f64> {
    let mut used = vec![false; model.dims.codebook];
    for track in tracks {
        for code in encode(model, track)?.codes {
            used[code] = true;
        }
    }
    Ok(used.iter().filter(|&&u| u).count() as f64 / model.dims.codebook as f64)
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compare analytic gradients of the quantizer-free encoder->decoder path
/// against central finite differences on `n_params` randomly chosen
/// parameters. Returns the maximum relative error.
pub fn gradient_check(model: &VqPitchModel, sample: &PitchTrack, epsilon: f64) -> f64 {
    let n_params = 120;
    let mut work = model.clone();
    let norm = normalize_pitch(sample);
    let windows = windows_of(&norm, work.dims.context);
    let mut batch_x = Vec::new();
    let mut batch_t = Vec::new();
    for (t, w) in windows.iter().enumerate() {
        if norm.voiced[t] {
            batch_x.extend_from_slice(w);
            batch_t.push(norm.values[t]);
            if batch_t.len() >= 8 {
                break;
            }
        }
    }
    if batch_t.is_empty() {
        // fall back to the first window even if unvoiced
        batch_x.extend_from_slice(&windows[0]);
        batch_t.push(norm.values[0]);
    }

    let analytic = autoencoder_grads(&work, &batch_x, &batch_t);
    let tensor_sizes: Vec<usize> = work.tensors_mut().iter().map(|t| t.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(0x9e3779b9);

    let mut max_rel = 0.0f64;
    for _ in 0..n_params {
        let ti = rng.gen_range(0..tensor_sizes.len());
        let pi = rng.gen_range(0..tensor_sizes[ti]);
        let ga = analytic[ti][pi];

        let base = {
            let mut tensors = work.tensors_mut();
            let old = tensors[ti][pi];
            tensors[ti][pi] = old + epsilon;
            old
        };
        let up = autoencoder_loss(&work, &batch_x, &batch_t);
        {
            let mut tensors = work.tensors_mut();
            tensors[ti][pi] = base - epsilon;
        }
        let down = autoencoder_loss(&work, &batch_x, &batch_t);
        {
            let mut tensors = work.tensors_mut();
            tensors[ti][pi] = base;
        }
        let gn = (up - down) / (2.0 * epsilon);
        let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

fn autoencoder_loss(model: &VqPitchModel, x: &[f64], targets: &[f64]) -> f64 {
    let b = targets.len();
    let enc_tape = model.encoder.forward(x.to_vec(), b);
    let h = model.encoder.output(&enc_tape).to_vec();
    let dec_tape = model.decoder.forward(h, b);
    let pred = model.decoder.output(&dec_tape);
    pred.iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / b as f64
}

fn autoencoder_grads(model: &VqPitchModel, x: &[f64], targets: &[f64]) -> Vec<Vec<f64>> {
    let b = targets.len();
    let enc_tape = model.encoder.forward(x.to_vec(), b);
    let h = model.encoder.output(&enc_tape).to_vec();
    let dec_tape = model.decoder.forward(h, b);
    let pred = model.decoder.output(&dec_tape).to_vec();
    let grad_pred: Vec<f64> = pred
        .iter()
        .zip(targets)
        .map(|(p, t)| 2.0 * (p - t) / b as f64)
        .collect();
    let (dec_grads, grad_h) = model.decoder.backward(&dec_tape, grad_pred);
    let (enc_grads, _) = model.encoder.backward(&enc_tape, grad_h);
    let mut out = Vec::new();
    for (gw, gb) in enc_grads.w.into_iter().zip(enc_grads.b) {
        out.push(gw);
        out.push(gb);
    }
    for (gw, gb) in dec_grads.w.into_iter().zip(dec_grads.b) {
        out.push(gw);
        out.push(gb);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_track(f0: f64, frames: usize) -> PitchTrack {
        PitchTrack::from_parts(vec![f0; frames], vec![true; frames], 0.020, 0.005)
    }

    #[test]
    fn normalize_constant_contour_is_zero() {
        let norm = normalize_pitch(&constant_track(200.0, 50));
        assert!(norm.values.iter().all(|&v| v.abs() < 1e-12));
        assert_eq!(norm.stats.std, 1.0);
    }

    #[test]
    fn normalize_log_uniform_pattern() {
        let track = PitchTrack::from_parts(
            vec![100.0, 200.0, 400.0],
            vec![true, true, true],
            0.020,
            0.005,
        );
        let norm = normalize_pitch(&track);
        let mean: f64 = norm.values.iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((norm.values[1]).abs() < 1e-12);
        assert!((norm.values[0] + norm.values[2]).abs() < 1e-12);
    }

    #[test]
    fn normalize_all_unvoiced_is_sentinel_zero() {
        let track = PitchTrack::from_parts(vec![0.0; 10], vec![false; 10], 0.020, 0.005);
        let norm = normalize_pitch(&track);
        assert!(norm.values.iter().all(|&v| v == 0.0));
        assert!(norm.voiced.iter().all(|&v| !v));
    }

    #[test]
    fn untrained_model_refuses_encode() {
        let model = VqPitchModel::untrained(VqDims::default(), 1);
        assert!(matches!(
            encode(&model, &constant_track(150.0, 20)),
            Err(Error::ModelUntrained)
        ));
    }

    #[test]
    fn decode_rejects_out_of_range_code() {
        let dims = VqDims {
            hidden: 16,
            latent: 8,
            codebook: 4,
            ..VqDims::default()
        };
        let tracks = vec![constant_track(150.0, 40)];
        let trained = train(&tracks, dims, &VqTrainConfig {
            epochs: 1,
            ..VqTrainConfig::default()
        })
        .unwrap();
        let stats = PitchStats { mean: 7.0, std: 1.0 };
        let err = decode(
            &trained.model,
            &PitchCodeSequence { codes: vec![4] },
            &[true],
            stats,
        );
        assert!(matches!(err, Err(Error::IndexOutOfRange { index: 4, size: 4 })));
    }

    #[test]
    fn unvoiced_frames_decode_to_zero() {
        let dims = VqDims {
            hidden: 16,
            latent: 8,
            codebook: 4,
            ..VqDims::default()
        };
        let tracks = vec![constant_track(150.0, 40)];
        let trained = train(&tracks, dims, &VqTrainConfig {
            epochs: 1,
            ..VqTrainConfig::default()
        })
        .unwrap();
        let stats = PitchStats { mean: 7.0, std: 1.0 };
        let out = decode(
            &trained.model,
            &PitchCodeSequence { codes: vec![0, 1, 2] },
            &[false, false, false],
            stats,
        )
        .unwrap();
        assert_eq!(out.f0(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_is_total_and_deterministic() {
        let dims = VqDims {
            hidden: 16,
            latent: 8,
            codebook: 8,
            ..VqDims::default()
        };
        let track = constant_track(180.0, 60);
        let trained = train(std::slice::from_ref(&track), dims, &VqTrainConfig {
            epochs: 2,
            ..VqTrainConfig::default()
        })
        .unwrap();
        let a = encode(&trained.model, &track).unwrap();
        let b = encode(&trained.model, &track).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.codes.len(), 60);
        assert!(a.codes.iter().all(|&c| c < 8));
        // identical interior windows map to identical codes
        let interior = &a.codes[dims.context..60 - dims.context];
        assert!(interior.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train(&[], VqDims::default(), &VqTrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
        let unvoiced = PitchTrack::from_parts(vec![0.0; 5], vec![false; 5], 0.020, 0.005);
        assert!(matches!(
            train(&[unvoiced], VqDims::default(), &VqTrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn quantizing_a_codebook_row_returns_its_index() {
        let dims = VqDims {
            hidden: 16,
            latent: 8,
            codebook: 6,
            ..VqDims::default()
        };
        let track = PitchTrack::from_parts(
            (0..80).map(|i| 120.0 + i as f64).collect(),
            vec![true; 80],
            0.020,
            0.005,
        );
        let trained = train(std::slice::from_ref(&track), dims, &VqTrainConfig {
            epochs: 3,
            ..VqTrainConfig::default()
        })
        .unwrap();
        for c in 0..6 {
            let row = trained.model.codebook_row(c).to_vec();
            assert_eq!(trained.model.nearest_code(&row), c);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dims = VqDims {
            hidden: 12,
            latent: 6,
            codebook: 4,
            ..VqDims::default()
        };
        let track = constant_track(140.0, 50);
        let trained = train(std::slice::from_ref(&track), dims, &VqTrainConfig {
            epochs: 1,
            ..VqTrainConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        trained.model.save(&path).unwrap();
        let loaded = VqPitchModel::load(&path).unwrap();
        assert_eq!(trained.model, loaded);
    }
}
