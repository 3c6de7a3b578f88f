use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::AudioError;
use crate::Label;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// Mono samples in [−1, 1) at 16 kHz.
    pub samples: Vec<f32>,
    pub label: Label,
}

/// Reads a 16 kHz mono PCM16 WAV file; samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Utterance, AudioError> {
    let path = path.as_ref();
    let wav_err = |source| AudioError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let unsupported = |msg: String| AudioError::Unsupported {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(format!("unsupported channel count {}", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(unsupported(format!(
            "unsupported sample rate {} Hz (expected {SAMPLE_RATE})",
            spec.sample_rate
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "unsupported encoding {:?} {}-bit (expected 16-bit PCM)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Utterance {
        id,
        samples,
        label: Label::Unknown,
    })
}

/// Writes mono 16 kHz PCM16; samples are rounded to the nearest step of 1/32768
/// and saturated at the format limits.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<(), AudioError> {
    let path = path.as_ref();
    let wav_err = |source| AudioError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_and_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&p, &vec![0.0; 16_000]).unwrap();
        let u = read_wav(&p).unwrap();
        assert_eq!(u.samples.len(), 16_000);
        assert!(u.samples.iter().all(|&s| s == 0.0));
        assert_eq!(u.id, "z");

        write_wav(&p, &[0.5, -1.0, 1.0]).unwrap();
        let u = read_wav(&p).unwrap();
        assert_eq!(u.samples, vec![0.5, -1.0, 32767.0 / 32768.0]);
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("unsupported channel count"), "{err}");
    }

    #[test]
    fn wrong_rate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        WavWriter::create(&p, spec).unwrap().finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(AudioError::Unsupported { .. })));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_wav(&p, &[0.25; 100]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        assert!(read_wav(&p).is_err());
    }
}
