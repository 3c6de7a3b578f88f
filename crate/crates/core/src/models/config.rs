use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Residual blocks of three k=3 convolutions with an optional 1×1 skip.
    Res,
    /// Parallel dilated k=3 branches concatenated along channels.
    Inc,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Res => "res",
            Family::Inc => "inc",
        })
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "res" => Ok(Family::Res),
            "inc" => Ok(Family::Inc),
            other => Err(ModelError::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// Architecture descriptor shared by both families.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub family: Family,
    /// Output channels of each stacked block; its length is the block count M.
    pub channels: Vec<usize>,
    /// Parallel branches per Inception block (ignored for `Res`).
    pub branches: usize,
    /// Branch dilations, one per branch (ignored for `Res`).
    pub dilations: Vec<usize>,
    /// Whether residual blocks carry the 1×1 conv + BN skip path (ignored for `Inc`).
    pub use_skip: bool,
    /// Hidden widths of the two fully connected layers before the 2-way output.
    pub fc: [usize; 2],
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub input_length: usize,
    /// Convolutions carry a bias term. Batch norm follows every convolution, so the
    /// bias is redundant; disabling it gives the lighter parameterisation.
    pub conv_bias: bool,
}

pub const DEFAULT_INPUT_LENGTH: usize = 96_000;
pub const POOL: usize = 4;

impl ModelConfig {
    /// Residual network with the standard channel plan for `m` ∈ {3, 4, 5}.
    pub fn res(m: usize) -> Result<Self, ModelError> {
        let channels = match m {
            3 => vec![32, 64, 128],
            4 => vec![32, 64, 128, 128],
            5 => vec![32, 64, 128, 128, 128],
            _ => {
                return Err(ModelError::Config(format!(
                    "no default residual channel plan for M={m}; pass channels explicitly"
                )))
            }
        };
        Ok(Self::with_channels(Family::Res, channels, 1))
    }

    /// Inception network with `branches` dilations 1, 2, 4, … and the standard
    /// channel plan for `m` ∈ {3, 4, 5}.
    pub fn inc(m: usize, branches: usize) -> Result<Self, ModelError> {
        let channels = match m {
            3 => vec![8, 16, 32],
            4 => vec![8, 16, 32, 32],
            5 => vec![8, 16, 32, 64, 64],
            _ => {
                return Err(ModelError::Config(format!(
                    "no default inception channel plan for M={m}; pass channels explicitly"
                )))
            }
        };
        Ok(Self::with_channels(Family::Inc, channels, branches))
    }

    pub fn with_channels(family: Family, channels: Vec<usize>, branches: usize) -> Self {
        Self {
            family,
            channels,
            branches,
            dilations: power_of_two_dilations(branches),
            use_skip: true,
            fc: [64, 32],
            stem_channels: 16,
            stem_kernel: 7,
            input_length: DEFAULT_INPUT_LENGTH,
            conv_bias: true,
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.channels.is_empty() {
            return err("at least one block is required (M >= 1)".into());
        }
        if self.channels.contains(&0) || self.fc.contains(&0) || self.stem_channels == 0 {
            return err("channel and layer widths must be positive".into());
        }
        if self.stem_kernel == 0 {
            return err("stem kernel must be positive".into());
        }
        if self.family == Family::Inc {
            if self.branches < 1 {
                return err("inception blocks need at least one branch".into());
            }
            if self.dilations.len() != self.branches {
                return err(format!(
                    "{} dilations given for {} branches",
                    self.dilations.len(),
                    self.branches
                ));
            }
            if self.dilations.iter().any(|d| !d.is_power_of_two())
                || self.dilations.windows(2).any(|w| w[0] >= w[1])
            {
                return err(format!(
                    "dilations {:?} must be strictly increasing powers of two",
                    self.dilations
                ));
            }
        }
        let trace = self.time_trace();
        if trace.contains(&0) {
            return err(format!(
                "input length {} is too short for {} pooling stages",
                self.input_length,
                self.blocks()
            ));
        }
        Ok(())
    }

    /// Time length entering the stem, each block, and the global pooling.
    pub fn time_trace(&self) -> Vec<usize> {
        let mut trace = vec![self.input_length];
        let mut l = self.input_length / POOL;
        trace.push(l);
        for _ in 1..self.blocks() {
            l /= POOL;
            trace.push(l);
        }
        trace
    }

    /// Serialises to the `key = value` text form used in config files and
    /// checkpoint headers.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = format!("family = {}\nm = {}\nchannels = {}\n", self.family, self.blocks(), list(&self.channels));
        s += &format!(
            "branches = {}\ndilations = {}\nuse_skip = {}\n",
            self.branches,
            list(&self.dilations),
            self.use_skip
        );
        s += &format!(
            "fc = {}\nstem_channels = {}\nstem_kernel = {}\ninput_length = {}\nconv_bias = {}\n",
            list(&self.fc),
            self.stem_channels,
            self.stem_kernel,
            self.input_length,
            self.conv_bias
        );
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let pairs = parse_key_values(text)?;
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        for (k, _) in &pairs {
            if !MODEL_KEYS.contains(&k.as_str()) {
                return Err(ModelError::Config(format!("unknown model key `{k}`")));
            }
        }
        let family: Family = get("family")
            .ok_or_else(|| ModelError::Config("missing key `family`".into()))?
            .parse()?;
        let m: Option<usize> = get("m").map(parse_num).transpose()?;
        let default_branches = match family {
            Family::Res => 1,
            Family::Inc => DEFAULT_INC_BRANCHES,
        };
        let branches: usize = get("branches")
            .map(parse_num)
            .transpose()?
            .unwrap_or(default_branches);
        let mut cfg = match get("channels") {
            Some(c) => Self::with_channels(family, parse_list(c)?, branches),
            None => {
                let m = m.ok_or_else(|| ModelError::Config("need `m` or `channels`".into()))?;
                match family {
                    Family::Res => Self::res(m)?,
                    Family::Inc => Self::inc(m, branches)?,
                }
            }
        };
        if let Some(m) = m {
            if m != cfg.blocks() {
                return Err(ModelError::Config(format!(
                    "m = {m} but {} channel entries given",
                    cfg.blocks()
                )));
            }
        }
        if let Some(d) = get("dilations") {
            cfg.dilations = parse_list(d)?;
        }
        if let Some(v) = get("use_skip") {
            cfg.use_skip = parse_bool(v)?;
        }
        if let Some(v) = get("fc") {
            let fc = parse_list(v)?;
            cfg.fc = fc
                .try_into()
                .map_err(|_| ModelError::Config("`fc` needs exactly two widths".into()))?;
        }
        if let Some(v) = get("stem_channels") {
            cfg.stem_channels = parse_num(v)?;
        }
        if let Some(v) = get("stem_kernel") {
            cfg.stem_kernel = parse_num(v)?;
        }
        if let Some(v) = get("input_length") {
            cfg.input_length = parse_num(v)?;
        }
        if let Some(v) = get("conv_bias") {
            cfg.conv_bias = parse_bool(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Keys accepted by [`ModelConfig::from_text`].
pub const MODEL_KEYS: &[&str] = &[
    "family",
    "m",
    "channels",
    "branches",
    "dilations",
    "use_skip",
    "fc",
    "stem_channels",
    "stem_kernel",
    "input_length",
    "conv_bias",
];

/// Branch count of an inception configuration that does not name one.
pub const DEFAULT_INC_BRANCHES: usize = 4;

/// `1, 2, 4, …` for `branches` entries.
pub fn power_of_two_dilations(branches: usize) -> Vec<usize> {
    (0..branches).map(|b| 1usize << b).collect()
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, ModelError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_num(v: &str) -> Result<usize, ModelError> {
    v.trim()
        .parse()
        .map_err(|_| ModelError::Config(format!("`{v}` is not a non-negative integer")))
}

pub fn parse_list(v: &str) -> Result<Vec<usize>, ModelError> {
    v.split(',').map(parse_num).collect()
}

pub fn parse_bool(v: &str) -> Result<bool, ModelError> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(ModelError::Config(format!("`{other}` is not a boolean"))),
    }
}
