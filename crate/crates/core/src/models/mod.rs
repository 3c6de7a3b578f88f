//! The two detection network families, parameter accounting, and checkpoints.

mod checkpoint;
mod config;
mod net;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    OptimizerSnapshot, FORMAT_VERSION, MAGIC,
};
pub use config::{
    parse_bool, parse_key_values, parse_list, parse_num, power_of_two_dilations, Family,
    ModelConfig, DEFAULT_INPUT_LENGTH, MODEL_KEYS, POOL,
};
pub use net::{build_inc_tssdnet, build_res_tssdnet, ForwardPass, Mode, Model};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameter count of a configuration without allocating its weights.
pub fn count_parameters(config: &ModelConfig) -> Result<usize, ModelError> {
    config.validate()?;
    let conv_bn = |cin: usize, cout: usize, k: usize| {
        cin * cout * k + if config.conv_bias { cout } else { 0 } + 2 * cout
    };
    let mut total = conv_bn(1, config.stem_channels, config.stem_kernel);
    let mut cin = config.stem_channels;
    for &c in &config.channels {
        match config.family {
            Family::Res => {
                total += conv_bn(cin, c, 3) + 2 * conv_bn(c, c, 3);
                if config.use_skip {
                    total += conv_bn(cin, c, 1);
                }
                cin = c;
            }
            Family::Inc => {
                total += config.branches * conv_bn(cin, c, 3);
                cin = c * config.branches;
            }
        }
    }
    let [h1, h2] = config.fc;
    Ok(total + cin * h1 + h1 + h1 * h2 + h2 + h2 * 2 + 2)
}
