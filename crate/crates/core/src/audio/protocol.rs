use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::AudioError;
use crate::Label;

/// One line of a countermeasure protocol: `SPEAKER UTT_ID - SYSTEM_ID KEY`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub speaker_id: String,
    pub utterance_id: String,
    /// `-` for bona fide speech.
    pub system_id: String,
    pub key: Label,
}

impl ProtocolEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} - {} {}",
            self.speaker_id, self.utterance_id, self.system_id, self.key
        )
    }
}

pub fn parse_protocol(path: impl AsRef<Path>) -> Result<Vec<ProtocolEntry>, AudioError> {
    let path = path.as_ref();
    parse_protocol_str(&fs::read_to_string(path)?, path, false)
}

/// Like [`parse_protocol`], but also accepts unlabelled lists: a line holding only
/// an utterance id yields an entry whose key is [`Label::Unknown`].
pub fn parse_protocol_lenient(path: impl AsRef<Path>) -> Result<Vec<ProtocolEntry>, AudioError> {
    let path = path.as_ref();
    parse_protocol_str(&fs::read_to_string(path)?, path, true)
}

pub fn parse_protocol_str(
    text: &str,
    path: &Path,
    allow_unlabelled: bool,
) -> Result<Vec<ProtocolEntry>, AudioError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let err = |msg: String| AudioError::Protocol {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let entry = match fields[..] {
            [] => continue,
            [speaker, utt, _, system, key] => ProtocolEntry {
                speaker_id: speaker.to_string(),
                utterance_id: utt.to_string(),
                system_id: system.to_string(),
                key: key.parse().map_err(err)?,
            },
            [utt] if allow_unlabelled => ProtocolEntry {
                speaker_id: "-".into(),
                utterance_id: utt.to_string(),
                system_id: "-".into(),
                key: Label::Unknown,
            },
            _ => {
                return Err(err(format!(
                    "expected 5 whitespace-separated fields, found {}",
                    fields.len()
                )))
            }
        };
        if !seen.insert(entry.utterance_id.clone()) {
            return Err(err(format!("duplicate utterance id `{}`", entry.utterance_id)));
        }
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ProtocolEntry>, AudioError> {
        parse_protocol_str(text, Path::new("p.txt"), false)
    }

    #[test]
    fn asvspoof_lines() {
        let e = parse("LA_0079 LA_T_1138215 - - bonafide\nLA_0079 LA_T_1271820 - A01 spoof\n").unwrap();
        assert_eq!(e[0].key, Label::Bonafide);
        assert_eq!(e[0].system_id, "-");
        assert_eq!(e[1].system_id, "A01");
        assert_eq!(e[1].key, Label::Spoof);
        assert_eq!(e[1].to_line(), "LA_0079 LA_T_1271820 - A01 spoof");
    }

    #[test]
    fn wrong_field_count_names_line() {
        let err = parse("LA_0079 LA_T_1 - - bonafide\nLA_0079 LA_T_2 - A01\n").unwrap_err();
        match err {
            AudioError::Protocol { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(parse("S U - A01 fake\n").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(parse("S U - - bonafide\nS U - A01 spoof\n").is_err());
    }

    #[test]
    fn blank_lines_skipped_and_order_kept() {
        let e = parse("\nS b - - bonafide\n\nS a - A01 spoof\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].utterance_id, "b");
    }

    #[test]
    fn lenient_accepts_bare_ids() {
        let e = parse_protocol_str("u1\nS u2 - - bonafide\n", Path::new("p"), true).unwrap();
        assert_eq!(e[0].key, Label::Unknown);
        assert_eq!(e[1].key, Label::Bonafide);
    }
}
