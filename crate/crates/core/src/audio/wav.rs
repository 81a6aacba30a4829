//! RIFF/WAVE reading and writing. Input accepts PCM16 and float32, mono or
//! stereo (stereo is averaged down to mono); output is always 16-bit PCM mono.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(m) => Error::MalformedWav(m.to_string()),
        hound::Error::TooWide | hound::Error::Unsupported => {
            Error::UnsupportedEncoding(err.to_string())
        }
        other => Error::MalformedWav(other.to_string()),
    }
}

/// Read a WAV file into a mono buffer with samples normalized to [-1, 1].
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels (only mono or stereo)",
            spec.channels
        )));
    }

    let mono: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
            downmix(
                samples
                    .map_err(|e| map_hound(path, e))?
                    .into_iter()
                    .map(|s| s as f64 / PCM16_SCALE),
                spec.channels,
            )
        }
        (SampleFormat::Float, 32) => {
            let samples: std::result::Result<Vec<f32>, _> = reader.samples::<f32>().collect();
            downmix(
                samples
                    .map_err(|e| map_hound(path, e))?
                    .into_iter()
                    .map(|s| s as f64),
                spec.channels,
            )
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?} (only 16-bit PCM or 32-bit float)"
            )))
        }
    };

    AudioBuffer::new(mono, spec.sample_rate)
}

fn downmix(samples: impl Iterator<Item = f64>, channels: u16) -> Vec<f64> {
    if channels == 1 {
        return samples.collect();
    }
    let interleaved: Vec<f64> = samples.collect();
    interleaved
        .chunks(channels as usize)
        .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
        .collect()
}

/// Write a buffer as 16-bit PCM mono. Samples are clamped to [-1, 1] before
/// quantization, so a read-back differs by at most one quantization step.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in buffer.samples() {
        let q = (s.clamp(-1.0, 1.0) * PCM16_SCALE).round();
        let q = q.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn truncated_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.wav");
        std::fs::File::create(&path)
            .unwrap()
            .write_all(b"RIFF\x10\x00\x00\x00WAVE")
            .unwrap();
        match read_wav(&path) {
            Err(Error::MalformedWav(_)) | Err(Error::Io { .. }) => {}
            other => panic!("expected malformed wav, got {other:?}"),
        }
    }

    #[test]
    fn full_scale_pcm_reads_as_unity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..64 {
            w.write_sample(i16::MAX).unwrap();
        }
        w.finalize().unwrap();
        let buf = read_wav(&path).unwrap();
        for &s in buf.samples() {
            assert!((s - 1.0).abs() <= 1.0 / PCM16_SCALE);
        }
    }

    #[test]
    fn stereo_downmixes_by_averaging() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..32 {
            w.write_sample(8192i16).unwrap();
            w.write_sample(-8192i16).unwrap();
        }
        w.finalize().unwrap();
        let buf = read_wav(&path).unwrap();
        assert_eq!(buf.len(), 32);
        for &s in buf.samples() {
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn empty_buffer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        let buf = AudioBuffer::new(vec![], 16000).unwrap();
        write_wav(&buf, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.sample_rate(), 16000);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let buf = AudioBuffer::new(vec![0.0; 8], 16000).unwrap();
        assert!(matches!(
            write_wav(&buf, "/nonexistent-dir/x.wav"),
            Err(Error::Io { .. })
        ));
    }
}
