//! WAV I/O, fixed-duration alignment, protocol files, batching, and a synthetic
//! corpus generator.

mod align;
mod batch;
mod protocol;
mod synth;
mod wav;

pub use align::align_duration;
pub use batch::{assemble_batch, make_batches, Batch, BatchStream, MemorySource, ProtocolSource, UtteranceSource};
pub use protocol::{parse_protocol, parse_protocol_lenient, parse_protocol_str, ProtocolEntry};
pub use synth::{synth_dataset, synth_utterance, Artifact, SynthRecord, PROTOCOL_FILE, WAV_DIR};
pub use wav::{read_wav, write_wav, Utterance, SAMPLE_RATE};

use std::path::PathBuf;

use thiserror::Error;

/// Six seconds at 16 kHz.
pub const DEFAULT_TARGET_LENGTH: usize = 96_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {msg}")]
    Unsupported { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("empty signal cannot be aligned")]
    Empty,
    #[error("{path}:{line}: {msg}")]
    Protocol {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("missing audio for `{id}`: {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
