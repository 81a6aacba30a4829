//! Oracle-backed checks for the two discrete codecs: the VQ pitch codec
//! (finite-difference gradient oracle, mean-predictor baseline) and the
//! k-means unit codebook (closed-form means, brute-force assignment).

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use paravox_core::pitch::PitchTrack;
use paravox_core::units::{assign_units, train_units, FeatureFrames};
use paravox_core::vq::{
    self, gradient_check, normalize_pitch, VqDims, VqTrainConfig,
};

/// Synthetic voiced contour: slow vibrato plus a ramp in log-F0, with a
/// short unvoiced gap.
fn synth_contour(seed: u64, frames: usize) -> PitchTrack {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let base: f64 = rng.gen_range(100.0..280.0);
    let depth: f64 = rng.gen_range(0.02..0.12);
    let speed: f64 = rng.gen_range(0.05..0.3);
    let ramp: f64 = rng.gen_range(-0.2..0.2);
    let gap_at = rng.gen_range(frames / 4..frames / 2);
    let gap_len = rng.gen_range(2..6);
    let mut f0 = Vec::with_capacity(frames);
    let mut voiced = Vec::with_capacity(frames);
    for t in 0..frames {
        let u = t as f64 / frames as f64;
        let log2_f0 = base.log2() + ramp * u + depth * (speed * t as f64).sin();
        let in_gap = t >= gap_at && t < gap_at + gap_len;
        voiced.push(!in_gap);
        f0.push(if in_gap { 0.0 } else { log2_f0.exp2() });
    }
    PitchTrack::from_parts(f0, voiced, 0.020, 0.005)
}

fn contour_set(seed0: u64, count: usize, frames: usize) -> Vec<PitchTrack> {
    (0..count).map(|i| synth_contour(seed0 + i as u64, frames)).collect()
}

fn small_dims() -> VqDims {
    VqDims {
        hidden: 48,
        ..VqDims::default()
    }
}

// --- VQ gradient checking -------------------------------------------------

#[test]
fn gradient_check_random_init_below_1e4() {
    let model = vq::VqPitchModel::untrained(small_dims(), 7);
    let sample = synth_contour(42, 60);
    let err = gradient_check(&model, &sample, 1e-5);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradient_check_on_zero_windows() {
    // All-unvoiced input exercises the zero-window path where only biases
    // drive the activations.
    let model = vq::VqPitchModel::untrained(small_dims(), 11);
    let silent = PitchTrack::from_parts(vec![0.0; 30], vec![false; 30], 0.020, 0.005);
    let err = gradient_check(&model, &silent, 1e-5);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradient_check_stable_under_smaller_epsilon() {
    let model = vq::VqPitchModel::untrained(small_dims(), 13);
    let sample = synth_contour(5, 50);
    let base = gradient_check(&model, &sample, 1e-5);
    let halved = gradient_check(&model, &sample, 5e-6);
    assert!(halved < base * 10.0 + 1e-7, "{base} -> {halved}");
}

// --- VQ training ------------------------------------------------------------

#[test]
fn training_mse_descends_over_30_epochs() {
    let tracks = contour_set(100, 50, 40);
    let cfg = VqTrainConfig {
        epochs: 30,
        seed: 3,
        ..VqTrainConfig::default()
    };
    let out = vq::train(&tracks, small_dims(), &cfg).unwrap();
    let first = out.mse_per_epoch[0];
    let last = *out.mse_per_epoch.last().unwrap();
    assert!(last < first, "no descent: {first} -> {last}");
    assert!(out.mse_per_epoch.iter().all(|m| m.is_finite()));
}

#[test]
fn heldout_mse_beats_mean_predictor() {
    let train_set = contour_set(200, 40, 50);
    let held_out = contour_set(900, 10, 50);
    let cfg = VqTrainConfig {
        epochs: 20,
        seed: 4,
        ..VqTrainConfig::default()
    };
    let out = vq::train(&train_set, small_dims(), &cfg).unwrap();

    // Mean-predictor baseline: variance of the held-out normalized targets.
    let mut zs = Vec::new();
    for track in &held_out {
        let norm = normalize_pitch(track);
        for (z, &v) in norm.values.iter().zip(&norm.voiced) {
            if v {
                zs.push(*z);
            }
        }
    }
    let mean = zs.iter().sum::<f64>() / zs.len() as f64;
    let baseline = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / zs.len() as f64;

    let mse = vq::reconstruction_mse(&out.model, &held_out).unwrap();
    assert!(
        mse < baseline,
        "reconstruction {mse} not below baseline {baseline}"
    );
}

#[test]
fn retraining_with_same_seed_is_bit_identical() {
    let tracks = contour_set(300, 12, 40);
    let cfg = VqTrainConfig {
        epochs: 4,
        seed: 17,
        ..VqTrainConfig::default()
    };
    let a = vq::train(&tracks, small_dims(), &cfg).unwrap();
    let b = vq::train(&tracks, small_dims(), &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.mse_per_epoch, b.mse_per_epoch);
}

#[test]
fn codebook_stays_alive_and_distinct() {
    let tracks = contour_set(400, 30, 50);
    let cfg = VqTrainConfig {
        epochs: 12,
        seed: 5,
        ..VqTrainConfig::default()
    };
    let out = vq::train(&tracks, small_dims(), &cfg).unwrap();
    let used = vq::utilization(&out.model, &tracks).unwrap();
    assert!(used >= 0.25, "utilization {used}");
    // rows pairwise distinct
    let dims = *out.model.dims();
    for a in 0..dims.codebook {
        for b in a + 1..dims.codebook {
            let d: f64 = out
                .model
                .codebook_row(a)
                .iter()
                .zip(out.model.codebook_row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            assert!(d > 0.0, "rows {a} and {b} identical");
        }
    }
}

// --- k-means ---------------------------------------------------------------

#[test]
fn two_separated_clouds_recover_exact_means() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let dim = 3;
    let mut rows = Vec::new();
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    for cloud in 0..2usize {
        let center = if cloud == 0 { -5.0 } else { 5.0 };
        for _ in 0..150 {
            let p: Vec<f64> = (0..dim).map(|_| center + rng.gen_range(-0.5..0.5)).collect();
            for (s, &v) in sums[cloud].iter_mut().zip(&p) {
                *s += v;
            }
            rows.push(p);
        }
    }
    let exact: Vec<Vec<f64>> = sums.iter().map(|s| s.iter().map(|v| v / 150.0).collect()).collect();
    let features = FeatureFrames::from_rows(rows).unwrap();
    let trained = train_units(&[features], 2, usize::MAX, 20, 99).unwrap();
    // match centroids to clouds by sign
    for c in 0..2 {
        let got = trained.codebook.centroid(c);
        let target = if got[0] < 0.0 { &exact[0] } else { &exact[1] };
        for (g, e) in got.iter().zip(target) {
            assert!((g - e).abs() < 1e-6, "{g} vs {e}");
        }
    }
}

#[test]
fn k1_minibatch_converges_to_global_mean() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let rows: Vec<Vec<f64>> = (0..2000)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(0.0..3.0)])
        .collect();
    let mean: Vec<f64> = (0..2)
        .map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64)
        .collect();
    let features = FeatureFrames::from_rows(rows).unwrap();
    let trained = train_units(&[features], 1, 256, 150, 7).unwrap();
    for (g, e) in trained.codebook.centroid(0).iter().zip(&mean) {
        assert!((g - e).abs() < 0.02, "{g} vs {e}");
    }
}

#[test]
fn full_batch_inertia_never_increases() {
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    let rows: Vec<Vec<f64>> = (0..600)
        .map(|_| {
            let c = rng.gen_range(0..4) as f64 * 4.0;
            vec![c + rng.gen_range(-1.0..1.0), c - rng.gen_range(-1.0..1.0)]
        })
        .collect();
    let features = FeatureFrames::from_rows(rows).unwrap();
    let trained = train_units(&[features], 4, usize::MAX, 15, 3).unwrap();
    for pair in trained.inertia_per_iter.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-9,
            "inertia rose: {} -> {}",
            pair[0],
            pair[1]
        );
    }
}

#[test]
fn assignment_matches_brute_force_scan() {
    let mut rng = ChaCha20Rng::seed_from_u64(44);
    let dim = 26;
    let k = 100;
    // train a codebook on random data so centroids are arbitrary
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let features = FeatureFrames::from_rows(rows).unwrap();
    let trained = train_units(&[features], k, 128, 30, 55).unwrap();

    let probes: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.5..2.5)).collect())
        .collect();
    let probe_frames = FeatureFrames::from_rows(probes.clone()).unwrap();
    let units = assign_units(&trained.codebook, &probe_frames).unwrap();

    for (i, probe) in probes.iter().enumerate() {
        // brute-force scan, dimension-major accumulation
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let row = trained.codebook.centroid(c);
            let mut d = 0.0;
            for j in 0..dim {
                let diff = probe[j] - row[j];
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assert_eq!(units.units[i], best, "probe {i}");
    }
}

#[test]
fn unit_grid_matches_pitch_grid() {
    use paravox_core::pitch::{track_pitch, TrackerConfig};
    use paravox_core::units::extract_features;
    use paravox_core::{synth_signal, SynthKind};
    let buf = synth_signal(SynthKind::Sawtooth, 150.0, 150.0, 1.3, 16000).unwrap();
    let track = track_pitch(&buf, &TrackerConfig::default()).unwrap();
    let features = extract_features(&buf).unwrap();
    assert_eq!(track.len(), features.n_frames());
}
