use std::fmt;
use std::str::FromStr;

/// Ground truth of an utterance. Class indices: 0 = spoof, 1 = bona fide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Spoof,
    Bonafide,
    Unknown,
}

impl Label {
    pub const SPOOF_CLASS: usize = 0;
    pub const BONAFIDE_CLASS: usize = 1;

    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Spoof => Some(Self::SPOOF_CLASS),
            Label::Bonafide => Some(Self::BONAFIDE_CLASS),
            Label::Unknown => None,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            Self::SPOOF_CLASS => Some(Label::Spoof),
            Self::BONAFIDE_CLASS => Some(Label::Bonafide),
            _ => None,
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Spoof => "spoof",
            Label::Bonafide => "bonafide",
            Label::Unknown => "-",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spoof" => Ok(Label::Spoof),
            "bonafide" => Ok(Label::Bonafide),
            other => Err(format!("unknown key `{other}` (expected bonafide or spoof)")),
        }
    }
}
