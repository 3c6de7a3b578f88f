use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{align_duration, read_wav, AudioError, ProtocolEntry, Utterance};
use crate::nn::Tensor;
use crate::Label;

/// Indexed access to labelled utterances, aligned to a fixed length on load.
pub trait UtteranceSource {
    fn len(&self) -> usize;
    fn id(&self, index: usize) -> &str;
    fn label(&self, index: usize) -> Label;
    /// Samples aligned to [`UtteranceSource::target_length`].
    fn load(&self, index: usize) -> Result<Vec<f32>, AudioError>;
    fn target_length(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(spoof, bona fide)` counts.
    fn class_counts(&self) -> (usize, usize) {
        (0..self.len()).fold((0, 0), |(s, b), i| match self.label(i) {
            Label::Spoof => (s + 1, b),
            Label::Bonafide => (s, b + 1),
            Label::Unknown => (s, b),
        })
    }
}

/// Utterances held in memory.
#[derive(Clone, Debug)]
pub struct MemorySource {
    utterances: Vec<Utterance>,
    target: usize,
}

impl MemorySource {
    pub fn new(utterances: Vec<Utterance>, target: usize) -> Self {
        Self {
            utterances,
            target,
        }
    }

    /// Loads and aligns every utterance of a protocol-backed source up front.
    pub fn preload(source: &ProtocolSource) -> Result<Self, AudioError> {
        let utterances = (0..source.len())
            .map(|i| {
                Ok(Utterance {
                    id: source.id(i).to_string(),
                    samples: source.load(i)?,
                    label: source.label(i),
                })
            })
            .collect::<Result<_, AudioError>>()?;
        Ok(Self::new(utterances, source.target))
    }
}

impl UtteranceSource for MemorySource {
    fn len(&self) -> usize {
        self.utterances.len()
    }
    fn id(&self, index: usize) -> &str {
        &self.utterances[index].id
    }
    fn label(&self, index: usize) -> Label {
        self.utterances[index].label
    }
    fn load(&self, index: usize) -> Result<Vec<f32>, AudioError> {
        align_duration(&self.utterances[index].samples, self.target)
    }
    fn target_length(&self) -> usize {
        self.target
    }
}

/// Utterances listed in a protocol, read from `<audio_root>/<utterance_id>.wav`.
#[derive(Clone, Debug)]
pub struct ProtocolSource {
    entries: Vec<ProtocolEntry>,
    root: PathBuf,
    target: usize,
}

impl ProtocolSource {
    pub fn new(entries: Vec<ProtocolEntry>, audio_root: impl Into<PathBuf>, target: usize) -> Self {
        Self {
            entries,
            root: audio_root.into(),
            target,
        }
    }

    pub fn path_of(&self, index: usize) -> PathBuf {
        self.root.join(format!("{}.wav", self.entries[index].utterance_id))
    }

    pub fn entries(&self) -> &[ProtocolEntry] {
        &self.entries
    }

    /// Fails on the first entry whose audio file is absent.
    pub fn check_files(&self) -> Result<(), AudioError> {
        for i in 0..self.len() {
            let path = self.path_of(i);
            if !path.is_file() {
                return Err(AudioError::MissingFile {
                    id: self.entries[i].utterance_id.clone(),
                    path,
                });
            }
        }
        Ok(())
    }
}

impl UtteranceSource for ProtocolSource {
    fn len(&self) -> usize {
        self.entries.len()
    }
    fn id(&self, index: usize) -> &str {
        &self.entries[index].utterance_id
    }
    fn label(&self, index: usize) -> Label {
        self.entries[index].key
    }
    fn load(&self, index: usize) -> Result<Vec<f32>, AudioError> {
        let path = self.path_of(index);
        if !path.is_file() {
            return Err(AudioError::MissingFile {
                id: self.entries[index].utterance_id.clone(),
                path,
            });
        }
        align_duration(&read_wav(&path)?.samples, self.target)
    }
    fn target_length(&self) -> usize {
        self.target
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `B x 1 x target_length`.
    pub inputs: Tensor<f32>,
    pub labels: Vec<Label>,
    pub ids: Vec<String>,
}

/// Batches of a source in a given order; the final batch may be short.
pub struct BatchStream<S> {
    source: S,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl<S: UtteranceSource> BatchStream<S> {
    pub fn new(source: S, order: Vec<usize>, batch_size: usize) -> Result<Self, AudioError> {
        if batch_size == 0 {
            return Err(AudioError::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(Self {
            source,
            order,
            pos: 0,
            batch_size,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// Assembles the listed utterances into one batch tensor.
pub fn assemble_batch<S: UtteranceSource + ?Sized>(source: &S, indices: &[usize]) -> Result<Batch, AudioError> {
    let target = source.target_length();
    let mut values = Vec::with_capacity(indices.len() * target);
    let mut labels = Vec::with_capacity(indices.len());
    let mut ids = Vec::with_capacity(indices.len());
    for &i in indices {
        let samples = source.load(i)?;
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::InvalidArgument(format!(
                "non-finite samples in `{}`",
                source.id(i)
            )));
        }
        values.extend(samples.into_iter().map(|s| s.clamp(-1.0, 1.0)));
        labels.push(source.label(i));
        ids.push(source.id(i).to_string());
    }
    let inputs = Tensor::new(vec![indices.len(), 1, target], values)
        .map_err(|e| AudioError::InvalidArgument(e.to_string()))?;
    Ok(Batch { inputs, labels, ids })
}

impl<S: UtteranceSource> Iterator for BatchStream<S> {
    type Item = Result<Batch, AudioError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk = &self.order[self.pos..end];
        self.pos = end;
        Some(assemble_batch(&self.source, chunk))
    }
}

/// Seeded shuffle of a protocol's entries, batched from disk.
pub fn make_batches(
    entries: &[ProtocolEntry],
    audio_root: impl AsRef<Path>,
    batch_size: usize,
    seed: u64,
    target: usize,
) -> Result<BatchStream<ProtocolSource>, AudioError> {
    let source = ProtocolSource::new(entries.to_vec(), audio_root.as_ref(), target);
    source.check_files()?;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    BatchStream::new(source, order, batch_size)
}
