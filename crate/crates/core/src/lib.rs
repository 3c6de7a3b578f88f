//! End-to-end synthetic speech detection on raw waveforms.
//!
//! The crate trains and evaluates two small time-domain CNN families, a residual
//! one ([`models::build_res_tssdnet`]) and an Inception-style one with parallel
//! dilated branches ([`models::build_inc_tssdnet`]). Everything below the CLI lives
//! here: the tensor engine with reverse-mode gradients ([`nn`]), model builders and
//! checkpoints ([`models`]), losses, mixup and Adam ([`training`]), WAV and protocol
//! handling plus a synthetic corpus generator ([`audio`]), and EER/DET scoring
//! ([`metrics`]).

pub mod audio;
mod label;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod training;
pub mod verify;

pub use label::Label;
