use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{write_wav, AudioError, ProtocolEntry, SAMPLE_RATE};
use crate::Label;

pub const PROTOCOL_FILE: &str = "protocol.txt";
pub const WAV_DIR: &str = "wav";

const HARMONICS: usize = 6;
const SNR_DB: f64 = 20.0;
/// Peak of the clean signal before any artifact is applied.
const CLEAN_PEAK: f64 = 0.9;
const CLIP_RATIO: f64 = 0.6;
const QUANT_STEP: f64 = 1.0 / 8.0;
const SMOOTH_WINDOW: usize = 8;

/// Post-processing channel that turns a clean utterance into a spoofed one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Artifact {
    /// Hard clipping at 0.6 of the signal peak.
    Clip,
    /// Uniform 4-bit re-quantization of [−1, 1].
    Quantize,
    /// Moving average over 8 samples.
    LowPass,
}

impl Artifact {
    pub const ALL: [Artifact; 3] = [Artifact::Clip, Artifact::Quantize, Artifact::LowPass];

    pub fn system_id(self) -> &'static str {
        match self {
            Artifact::Clip => "CLIP",
            Artifact::Quantize => "QUANT",
            Artifact::LowPass => "LOWPASS",
        }
    }

    pub fn apply(self, samples: &mut [f32], peak: f64) {
        match self {
            Artifact::Clip => {
                let c = (CLIP_RATIO * peak) as f32;
                samples.iter_mut().for_each(|s| *s = s.clamp(-c, c));
            }
            Artifact::Quantize => samples.iter_mut().for_each(|s| {
                *s = (((*s as f64) / QUANT_STEP).round() * QUANT_STEP).clamp(-1.0, 1.0 - QUANT_STEP) as f32
            }),
            Artifact::LowPass => {
                let src: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
                let mut acc = 0.0;
                for (i, out) in samples.iter_mut().enumerate() {
                    acc += src[i];
                    if i >= SMOOTH_WINDOW {
                        acc -= src[i - SMOOTH_WINDOW];
                    }
                    *out = (acc / SMOOTH_WINDOW as f64) as f32;
                }
            }
        }
    }
}

impl fmt::Display for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.system_id())
    }
}

#[derive(Clone, Debug)]
pub struct SynthRecord {
    pub id: String,
    pub label: Label,
    pub artifact: Option<Artifact>,
    pub samples: Vec<f32>,
    /// Peak magnitude of the clean signal, before the artifact.
    pub clean_peak: f64,
}

impl SynthRecord {
    pub fn protocol_entry(&self) -> ProtocolEntry {
        ProtocolEntry {
            speaker_id: "SYN".into(),
            utterance_id: self.id.clone(),
            system_id: self.artifact.map_or("-", Artifact::system_id).into(),
            key: self.label,
        }
    }
}

fn clean_signal<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let rate = SAMPLE_RATE as f64;
    let len = rng.random_range(SAMPLE_RATE as usize..=8 * SAMPLE_RATE as usize);
    let f0 = rng.random_range(80.0..=300.0);
    let phases: Vec<f64> = (0..HARMONICS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let env_rate = rng.random_range(0.5..3.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let env_depth = rng.random_range(0.2..0.6);

    let mut x: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, ph)| {
                    let h = (k + 1) as f64;
                    (2.0 * PI * h * f0 * t + ph).sin() / h
                })
                .sum();
            let env = 1.0 - env_depth * 0.5 * (1.0 + (2.0 * PI * env_rate * t + env_phase).sin());
            tone * env
        })
        .collect();

    let power = x.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let noise_std = (power / 10f64.powf(SNR_DB / 10.0)).sqrt();
    for v in &mut x {
        let z: f64 = StandardNormal.sample(rng);
        *v += noise_std * z;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { CLEAN_PEAK / peak } else { 1.0 };
    x.iter_mut().for_each(|v| *v *= scale);
    x
}

/// Generates one utterance. Spoofed utterances pick an artifact uniformly.
pub fn synth_utterance<R: Rng + ?Sized>(id: impl Into<String>, label: Label, rng: &mut R) -> SynthRecord {
    let clean = clean_signal(rng);
    let clean_peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut samples: Vec<f32> = clean.iter().map(|&v| v as f32).collect();
    let artifact = match label {
        Label::Spoof => {
            let a = Artifact::ALL[rng.random_range(0..Artifact::ALL.len())];
            a.apply(&mut samples, clean_peak);
            Some(a)
        }
        _ => None,
    };
    SynthRecord {
        id: id.into(),
        label,
        artifact,
        samples,
        clean_peak,
    }
}

/// Writes `n_per_class` bona fide and `n_per_class` spoofed utterances to
/// `<out_dir>/wav/<id>.wav` and their protocol to `<out_dir>/protocol.txt`.
pub fn synth_dataset(
    n_per_class: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ProtocolEntry>, AudioError> {
    if n_per_class == 0 {
        return Err(AudioError::InvalidArgument("n must be at least 1".into()));
    }
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join(WAV_DIR);
    fs::create_dir_all(&wav_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(2 * n_per_class);
    let labels = std::iter::repeat_n(Label::Bonafide, n_per_class)
        .chain(std::iter::repeat_n(Label::Spoof, n_per_class));
    for (i, label) in labels.enumerate() {
        let rec = synth_utterance(format!("SYN_{seed}_{i:05}"), label, &mut rng);
        write_wav(wav_dir.join(format!("{}.wav", rec.id)), &rec.samples)?;
        entries.push(rec.protocol_entry());
    }
    let mut f = std::io::BufWriter::new(fs::File::create(out_dir.join(PROTOCOL_FILE))?);
    for e in &entries {
        writeln!(f, "{}", e.to_line())?;
    }
    f.flush()?;
    Ok(entries)
}
